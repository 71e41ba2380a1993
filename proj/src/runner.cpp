#include "mga/runner.hpp"

#include "mga/error.hpp"
#include "mga/report.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>

namespace mga {

namespace fs = std::filesystem;

fs::path resolve_output_root(const std::string& configured) {
    const char* env = std::getenv("MGA_OUT");
    if (env && *env) {
        return fs::path(env);
    }
    return fs::path(configured);
}

fs::path create_run_dir(const fs::path& root) {
    fs::create_directories(root);
    for (unsigned n = 1; n < 1000000; ++n) {
        char name[32];
        std::snprintf(name, sizeof name, "run-%04u", n);
        const fs::path dir = root / name;
        // create_directory reports false when the entry already exists, so two
        // concurrent runs never share a directory.
        if (fs::create_directory(dir)) {
            return dir;
        }
    }
    throw Error("no free run directory under " + root.string());
}

std::pair<double, double> seed_summary(const std::vector<SeedResult>& seeds) {
    if (seeds.empty()) {
        return {0.0, 0.0};
    }
    const double n = static_cast<double>(seeds.size());
    double mean = 0.0;
    for (const SeedResult& s : seeds) {
        mean += s.accuracy;
    }
    mean /= n;
    if (seeds.size() < 2) {
        return {mean, 0.0};
    }
    double var = 0.0;
    for (const SeedResult& s : seeds) {
        var += (s.accuracy - mean) * (s.accuracy - mean);
    }
    var /= n - 1.0;
    return {mean, 1.96 * std::sqrt(var / n)};
}

namespace {

Tensor stack(const std::vector<Tensor>& xs) {
    Shape shape = xs.front().shape();
    if (shape.size() == 2) {
        shape.insert(shape.begin(), 1); // frame-all: a single band-structured matrix
    }
    shape.insert(shape.begin(), xs.size());
    std::vector<double> v;
    v.reserve(shape_numel(shape));
    for (const Tensor& x : xs) {
        v.insert(v.end(), x.data().begin(), x.data().end());
    }
    return Tensor::from(std::move(shape), std::move(v));
}

void save_attention(const FewShotModel& model, const Dataset& data, const RunConfig& cfg, const fs::path& dir) {
    Rng rng(0x5EEDA77Eull);
    const Episode ep = sample_episode(data, cfg.n_way, cfg.k_shot, cfg.q_per_class, rng);
    std::vector<Tensor> support;
    std::vector<Tensor> query;
    for (std::size_t i : ep.support) {
        support.push_back(data.videos[i].clip);
    }
    for (std::size_t i : ep.query) {
        query.push_back(data.videos[i].clip);
    }
    ModelTrace trace;
    NoGradGuard guard;
    model.forward(support, query, &trace);
    fs::create_directories(dir);
    if (!trace.query_self.empty()) {
        std::vector<Tensor> s;
        for (const SelfScore& x : trace.query_self) {
            s.push_back(x.scores);
        }
        save_features(dir / "self.mgaf", stack(s));
    }
    if (!trace.cross.empty()) {
        std::vector<Tensor> c;
        for (const CrossScore& x : trace.cross) {
            c.push_back(x.scores);
        }
        save_features(dir / "cross.mgaf", stack(c));
    }
    std::ofstream meta(dir / "episode.txt");
    meta << "frames=" << cfg.frames << "\nvariant=" << (cfg.variant == CrossVariant::FrameWise ? "framewise" : "frameall")
         << "\nqueries=" << ep.query.size() << '\n';
}

std::string timestamp() {
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

RunOutcome run_experiment(const RunConfig& cfg, const fs::path& root, std::ostream* log) {
    validate_run_config(cfg);
    RunOutcome out;
    out.dir = create_run_dir(root);
    {
        std::ofstream c(out.dir / "config.txt");
        c << echo_run_config(cfg);
    }
    std::ofstream results(out.dir / "results.txt");
    results << "timestamp=" << timestamp() << '\n';
    results << "run=" << out.dir.filename().string() << '\n';

    nlohmann::json summary;
    summary["run"] = out.dir.filename().string();
    summary["cells"] = nlohmann::json::array();

    std::mutex hook_mutex;
    for (const AblationCell& cell : run_cells(cfg)) {
        const ExperimentSpec spec = to_experiment(cfg, cell);
        const fs::path attn_dir = out.dir / "attn" / cell.name;
        auto hook = [&](std::size_t index, const FewShotModel& m, const Dataset& d) {
            if (index == 0) {
                std::lock_guard lock(hook_mutex);
                save_attention(m, d, cfg, attn_dir);
            }
        };
        const auto t0 = std::chrono::steady_clock::now();
        CellRecord rec;
        rec.cell = cell;
        rec.seeds = run_seeds(spec, cfg.seeds, cfg.workers, hook);
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::tie(rec.mean, rec.ci95) = seed_summary(rec.seeds);

        const std::string& n = cell.name;
        results << "cell=" << n << '\n'
                << n << ".smga=" << (cell.smga ? "on" : "off") << '\n'
                << n << ".cmga=" << (cell.cmga ? "on" : "off") << '\n';
        nlohmann::json jc;
        jc["cell"] = n;
        jc["smga"] = cell.smga;
        jc["cmga"] = cell.cmga;
        jc["seeds"] = nlohmann::json::array();
        for (const SeedResult& s : rec.seeds) {
            results << n << ".seed." << s.seed << ".accuracy=" << fmt(s.accuracy) << '\n'
                    << n << ".seed." << s.seed << ".ci95=" << fmt(s.ci95) << '\n'
                    << n << ".seed." << s.seed << ".final_loss=" << fmt(s.final_loss) << '\n';
            jc["seeds"].push_back(
                {{"seed", s.seed}, {"accuracy", s.accuracy}, {"ci95", s.ci95}, {"final_loss", s.final_loss}});
        }
        results << n << ".mean=" << fmt(rec.mean) << '\n'
                << n << ".ci95=" << fmt(rec.ci95) << '\n'
                << n << ".wall_seconds=" << fmt(rec.wall_seconds) << '\n';
        results.flush();
        jc["mean"] = rec.mean;
        jc["ci95"] = rec.ci95;
        jc["wall_seconds"] = rec.wall_seconds;
        summary["cells"].push_back(jc);
        if (log) {
            char line[160];
            std::snprintf(line, sizeof line, "%-8s mean %.4f +- %.4f over %zu seeds (%.1f s)\n", n.c_str(), rec.mean,
                          rec.ci95, rec.seeds.size(), rec.wall_seconds);
            *log << line << std::flush;
        }
        out.cells.push_back(std::move(rec));
    }
    std::ofstream js(out.dir / "summary.json");
    js << summary.dump(2) << '\n';
    return out;
}

std::vector<fs::path> export_attention(const fs::path& run_dir, const std::string& cell, const std::string& which,
                                       std::size_t query, std::size_t frame, const fs::path& out_dir) {
    if (which != "self" && which != "cross") {
        throw UsageError("which must be self or cross, got '" + which + "'");
    }
    const fs::path src = run_dir / "attn" / cell / (which + ".mgaf");
    if (!fs::exists(src)) {
        throw MissingArtifactError("no " + which + " attention saved for cell '" + cell + "' (" + src.string() + ")");
    }
    const Tensor all = load_features(src);
    if (all.rank() != 4) {
        throw FormatError(src.string() + ": expected a rank-4 score tensor, got " + shape_str(all.shape()));
    }
    const std::size_t queries = all.dim(0);
    if (query >= queries) {
        throw UsageError("query " + std::to_string(query) + " out of range (" + std::to_string(queries) + " saved)");
    }
    // Frame-all cross scores are one [LHW x LNKHW] matrix; a frame is a band of rows.
    std::size_t frames = all.dim(1);
    std::size_t rows = all.dim(2);
    const std::size_t cols = all.dim(3);
    const bool banded = which == "cross" && all.dim(1) == 1;
    if (banded) {
        std::ifstream meta(run_dir / "attn" / cell / "episode.txt");
        std::string line;
        std::size_t l = 0;
        while (std::getline(meta, line)) {
            if (line.rfind("frames=", 0) == 0) {
                l = std::stoul(line.substr(7));
            }
        }
        if (l == 0 || rows % l != 0) {
            throw MissingArtifactError("episode.txt for cell '" + cell + "' is missing or inconsistent");
        }
        frames = l;
        rows /= l;
    }
    if (frame >= frames) {
        throw UsageError("frame " + std::to_string(frame) + " out of range (" + std::to_string(frames) + " frames)");
    }
    const std::size_t offset = banded ? (query * all.dim(2) + frame * rows) * cols : ((query * frames + frame) * rows) * cols;
    std::vector<double> v(all.data().begin() + static_cast<std::ptrdiff_t>(offset),
                          all.data().begin() + static_cast<std::ptrdiff_t>(offset + rows * cols));
    const Tensor m = Tensor::from({rows, cols}, std::move(v));
    fs::create_directories(out_dir);
    const std::string stem = cell + "_" + which + "_ep0_q" + std::to_string(query) + "_f" + std::to_string(frame);
    const fs::path csv = out_dir / (stem + ".csv");
    const fs::path pgm = out_dir / (stem + ".pgm");
    write_matrix_csv(csv, m);
    write_matrix_pgm(pgm, m);
    return {csv, pgm};
}

} // namespace mga
