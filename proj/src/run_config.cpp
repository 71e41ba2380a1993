#include "mga/run_config.hpp"

#include "mga/error.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace mga {

const std::vector<std::string>& run_config_keys() {
    static const std::vector<std::string> keys{
        "mode",      "n_way",          "k_shot",        "q_per_class",   "frames",   "dim",
        "grid",      "patch",          "r1",            "r2",            "adapter_ratio", "seeds",
        "train_episodes", "eval_episodes", "learning_rate", "smga",     "cmga",     "ablation",
        "variant",   "instances",      "noise",         "workers",       "output_dir"};
    return keys;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

std::size_t parse_positive(const std::string& key, const std::string& v) {
    const std::uint64_t n = parse_u64(key, v);
    if (n == 0) {
        throw ConfigError(key + ": must be positive");
    }
    return static_cast<std::size_t>(n);
}

double parse_double(const std::string& key, const std::string& v) {
    std::istringstream in(v);
    double d = 0.0;
    in >> d;
    if (!in || !in.eof()) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    return d;
}

bool parse_switch(const std::string& key, const std::string& v) {
    if (v == "on" || v == "true" || v == "1") {
        return true;
    }
    if (v == "off" || v == "false" || v == "0") {
        return false;
    }
    throw ConfigError(key + ": expected on or off, got '" + v + "'");
}

std::vector<std::uint64_t> parse_seeds(const std::string& v) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        const auto dash = item.find('-');
        if (dash == std::string::npos) {
            out.push_back(parse_u64("seeds", item));
            continue;
        }
        const std::uint64_t lo = parse_u64("seeds", trim(item.substr(0, dash)));
        const std::uint64_t hi = parse_u64("seeds", trim(item.substr(dash + 1)));
        if (hi < lo) {
            throw ConfigError("seeds: empty range '" + item + "'");
        }
        for (std::uint64_t s = lo; s <= hi; ++s) {
            out.push_back(s);
        }
    }
    if (out.empty()) {
        throw ConfigError("seeds: at least one seed is required");
    }
    return out;
}

const char* on_off(bool b) { return b ? "on" : "off"; }

} // namespace

void set_run_option(RunConfig& c, const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (key == "mode") {
        if (v == "ft") {
            c.mode = PipelineMode::FineTune;
        } else if (v == "adapter") {
            c.mode = PipelineMode::Adapter;
        } else {
            throw ConfigError("mode: expected ft or adapter, got '" + v + "'");
        }
    } else if (key == "n_way") {
        c.n_way = parse_positive(key, v);
    } else if (key == "k_shot") {
        c.k_shot = parse_positive(key, v);
    } else if (key == "q_per_class") {
        c.q_per_class = parse_positive(key, v);
    } else if (key == "frames") {
        c.frames = parse_positive(key, v);
    } else if (key == "dim") {
        c.dim = parse_positive(key, v);
    } else if (key == "grid") {
        c.grid = parse_positive(key, v);
    } else if (key == "patch") {
        c.patch = parse_positive(key, v);
    } else if (key == "r1") {
        c.r1 = parse_positive(key, v);
    } else if (key == "r2") {
        c.r2 = parse_positive(key, v);
    } else if (key == "adapter_ratio") {
        c.adapter_ratio = parse_positive(key, v);
    } else if (key == "seeds") {
        c.seeds = parse_seeds(v);
    } else if (key == "train_episodes") {
        c.train_episodes = static_cast<std::size_t>(parse_u64(key, v));
    } else if (key == "eval_episodes") {
        c.eval_episodes = parse_positive(key, v);
    } else if (key == "learning_rate") {
        c.learning_rate = parse_double(key, v);
        if (!(c.learning_rate > 0.0)) {
            throw ConfigError("learning_rate: must be positive");
        }
    } else if (key == "smga") {
        c.smga = parse_switch(key, v);
    } else if (key == "cmga") {
        c.cmga = parse_switch(key, v);
    } else if (key == "ablation") {
        c.ablation = parse_switch(key, v);
    } else if (key == "variant") {
        if (v == "framewise") {
            c.variant = CrossVariant::FrameWise;
        } else if (v == "frameall") {
            c.variant = CrossVariant::FrameAll;
        } else {
            throw ConfigError("variant: expected framewise or frameall, got '" + v + "'");
        }
    } else if (key == "instances") {
        c.instances = parse_positive(key, v);
    } else if (key == "noise") {
        c.noise = parse_double(key, v);
        if (c.noise < 0.0) {
            throw ConfigError("noise: must be non-negative");
        }
    } else if (key == "workers") {
        c.workers = static_cast<unsigned>(parse_u64(key, v));
    } else if (key == "output_dir") {
        if (v.empty()) {
            throw ConfigError("output_dir: must not be empty");
        }
        c.output_dir = v;
    } else {
        throw ConfigError("unknown key '" + key + "'");
    }
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.resize(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        set_run_option(c, trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    validate_run_config(c);
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string echo_run_config(const RunConfig& c) {
    std::ostringstream os;
    os.precision(17);
    std::string seeds;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
        seeds += (i ? "," : "") + std::to_string(c.seeds[i]);
    }
    os << "mode = " << (c.mode == PipelineMode::FineTune ? "ft" : "adapter") << '\n'
       << "n_way = " << c.n_way << '\n'
       << "k_shot = " << c.k_shot << '\n'
       << "q_per_class = " << c.q_per_class << '\n'
       << "frames = " << c.frames << '\n'
       << "dim = " << c.dim << '\n'
       << "grid = " << c.grid << '\n'
       << "patch = " << c.patch << '\n'
       << "r1 = " << c.r1 << '\n'
       << "r2 = " << c.r2 << '\n'
       << "adapter_ratio = " << c.adapter_ratio << '\n'
       << "seeds = " << seeds << '\n'
       << "train_episodes = " << c.train_episodes << '\n'
       << "eval_episodes = " << c.eval_episodes << '\n'
       << "learning_rate = " << c.learning_rate << '\n'
       << "smga = " << on_off(c.smga) << '\n'
       << "cmga = " << on_off(c.cmga) << '\n'
       << "ablation = " << on_off(c.ablation) << '\n'
       << "variant = " << (c.variant == CrossVariant::FrameWise ? "framewise" : "frameall") << '\n'
       << "instances = " << c.instances << '\n'
       << "noise = " << c.noise << '\n'
       << "workers = " << c.workers << '\n'
       << "output_dir = " << c.output_dir << '\n';
    return os.str();
}

void validate_run_config(const RunConfig& c) {
    if (c.grid % c.patch != 0) {
        throw ConfigError("patch: " + std::to_string(c.patch) + " does not tile grid " + std::to_string(c.grid));
    }
    if (c.grid / c.patch < 2) {
        throw ConfigError("grid: need at least 2x2 patches");
    }
    if (c.frames < 2) {
        throw ConfigError("frames: need at least 2");
    }
    const std::size_t inner = c.mode == PipelineMode::Adapter ? c.dim / c.adapter_ratio : c.dim;
    if (c.mode == PipelineMode::Adapter && c.dim % c.adapter_ratio != 0) {
        throw ConfigError("adapter_ratio: " + std::to_string(c.adapter_ratio) + " does not divide dim");
    }
    if (inner % c.r1 != 0) {
        throw ConfigError("r1: " + std::to_string(c.r1) + " does not divide width " + std::to_string(inner));
    }
    if (inner % c.r2 != 0) {
        throw ConfigError("r2: " + std::to_string(c.r2) + " does not divide width " + std::to_string(inner));
    }
    if (c.n_way > SynthConfig{}.classes.size()) {
        throw ConfigError("n_way: the synthetic corpus has only " + std::to_string(SynthConfig{}.classes.size()) +
                          " classes");
    }
    if (c.instances < c.k_shot + c.q_per_class) {
        throw ConfigError("instances: need at least k_shot + q_per_class per class");
    }
}

std::string cell_name(bool smga, bool cmga) {
    if (smga && cmga) {
        return "full";
    }
    if (smga) {
        return "smga";
    }
    if (cmga) {
        return "cmga";
    }
    return "baseline";
}

std::vector<AblationCell> run_cells(const RunConfig& c) {
    if (!c.ablation) {
        return {{cell_name(c.smga, c.cmga), c.smga, c.cmga}};
    }
    std::vector<AblationCell> out;
    for (bool s : {false, true}) {
        for (bool x : {false, true}) {
            out.push_back({cell_name(s, x), s, x});
        }
    }
    return out;
}

ExperimentSpec to_experiment(const RunConfig& c, const AblationCell& cell) {
    ExperimentSpec e;
    e.model.mode = c.mode;
    e.model.backbone.grid = c.grid;
    e.model.backbone.patch = c.patch;
    e.model.backbone.width = c.dim;
    e.model.backbone.hidden = 2 * c.dim;
    e.model.frames = c.frames;
    e.model.r1 = c.r1;
    e.model.r2 = c.r2;
    e.model.adapter_ratio = c.adapter_ratio;
    e.model.use_smga = cell.smga;
    e.model.use_cmga = cell.cmga;
    e.model.variant = c.variant;
    e.data.grid = c.grid;
    e.data.frames = c.frames;
    e.data.instances_per_class = c.instances;
    e.data.noise = c.noise;
    e.n_way = c.n_way;
    e.k_shot = c.k_shot;
    e.q_per_class = c.q_per_class;
    e.train_episodes = c.train_episodes;
    e.eval_episodes = c.eval_episodes;
    e.learning_rate = c.learning_rate;
    return e;
}

} // namespace mga
