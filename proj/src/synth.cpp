#include "mga/synth.hpp"

#include "mga/error.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mga {

std::string to_string(MotionDir dir) {
    switch (dir) {
    case MotionDir::Up:
        return "up";
    case MotionDir::Down:
        return "down";
    case MotionDir::Left:
        return "left";
    case MotionDir::Right:
        return "right";
    case MotionDir::DiagPlus:
        return "diag+";
    case MotionDir::DiagMinus:
        return "diag-";
    }
    return "?";
}

MotionDir motion_dir_from_string(const std::string& name) {
    for (MotionDir d : {MotionDir::Up, MotionDir::Down, MotionDir::Left, MotionDir::Right, MotionDir::DiagPlus,
                        MotionDir::DiagMinus}) {
        if (to_string(d) == name) {
            return d;
        }
    }
    throw ConfigError("unknown motion direction: " + name);
}

std::vector<MotionProgram> SynthConfig::default_classes() {
    return {{MotionDir::Up, 1, false},       {MotionDir::Down, 1, false},     {MotionDir::Left, 1, false},
            {MotionDir::Right, 1, false},    {MotionDir::DiagPlus, 1, false}, {MotionDir::DiagMinus, 1, false}};
}

void SynthConfig::validate() const {
    if (square == 0 || square >= grid) {
        throw ConfigError("synth: square size must be in [1, grid)");
    }
    if (frames < 2) {
        throw ConfigError("synth: need at least 2 frames");
    }
    if (classes.empty()) {
        throw ConfigError("synth: no classes");
    }
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i].speed < 1 || classes[i].speed > 2) {
            throw ConfigError("synth: speed must be 1 or 2");
        }
        for (std::size_t j = i + 1; j < classes.size(); ++j) {
            if (classes[i] == classes[j]) {
                throw ConfigError("synth: duplicate class program at " + std::to_string(j));
            }
        }
    }
    if (noise < 0.0) {
        throw ConfigError("synth: noise must be nonnegative");
    }
}

namespace {

// Reflects an unbounded coordinate into [0, span].
long reflect(long u, long span) {
    if (span == 0) {
        return 0;
    }
    const long period = 2 * span;
    long m = u % period;
    if (m < 0) {
        m += period;
    }
    return m <= span ? m : period - m;
}

void velocity(MotionDir d, int& vx, int& vy) {
    switch (d) {
    case MotionDir::Up:
        vx = 0;
        vy = -1;
        break;
    case MotionDir::Down:
        vx = 0;
        vy = 1;
        break;
    case MotionDir::Left:
        vx = -1;
        vy = 0;
        break;
    case MotionDir::Right:
        vx = 1;
        vy = 0;
        break;
    case MotionDir::DiagPlus:
        vx = 1;
        vy = -1;
        break;
    case MotionDir::DiagMinus:
        vx = 1;
        vy = 1;
        break;
    }
}

} // namespace

Tensor generate_video(const SynthConfig& cfg, std::size_t class_id, Rng& rng) {
    if (class_id >= cfg.classes.size()) {
        throw UsageError("generate_video: class " + std::to_string(class_id) + " out of range (" +
                         std::to_string(cfg.classes.size()) + " classes)");
    }
    const MotionProgram& prog = cfg.classes[class_id];
    const std::size_t g = cfg.grid;
    const long span = static_cast<long>(g - cfg.square);
    int vx = 0;
    int vy = 0;
    velocity(prog.direction, vx, vy);
    const long mid = static_cast<long>(cfg.frames / 2);
    auto steps_at = [&](std::size_t t) {
        const long s = static_cast<long>(t);
        return prog.reverse && s > mid ? 2 * mid - s : s;
    };
    long reach = 0;
    for (std::size_t t = 0; t < cfg.frames; ++t) {
        reach = std::max(reach, steps_at(t) * prog.speed);
    }
    // Start so the whole trajectory stays in frame when it can. A square that
    // starts against the wall it moves toward bounces straight back, which
    // makes opposite directions produce identical clips.
    auto start = [&](int vel) {
        long lo = 0;
        long hi = span;
        if (reach <= span) {
            if (vel > 0) {
                hi = span - reach;
            } else if (vel < 0) {
                lo = reach;
            }
        }
        return lo + static_cast<long>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    };
    const long x0 = start(vx);
    const long y0 = start(vy);
    std::vector<double> v(cfg.frames * g * g);
    for (std::size_t t = 0; t < cfg.frames; ++t) {
        const long steps = steps_at(t);
        const long px = reflect(x0 + vx * prog.speed * steps, span);
        const long py = reflect(y0 + vy * prog.speed * steps, span);
        double* frame = v.data() + t * g * g;
        for (std::size_t y = 0; y < g; ++y) {
            for (std::size_t x = 0; x < g; ++x) {
                const bool inside = static_cast<long>(x) >= px && static_cast<long>(x) < px + static_cast<long>(cfg.square) &&
                                    static_cast<long>(y) >= py && static_cast<long>(y) < py + static_cast<long>(cfg.square);
                double value = inside ? cfg.foreground : cfg.background;
                if (cfg.noise > 0.0) {
                    value += cfg.noise * rng.normal();
                }
                frame[y * g + x] = std::clamp(value, 0.0, 1.0);
            }
        }
    }
    return Tensor::from({cfg.frames, 1, g, g}, std::move(v));
}

Tensor generate_video(const SynthConfig& cfg, std::size_t class_id, std::size_t instance) {
    Rng rng(cfg.seed ^ (0x5851F42D4C957F2DULL * (class_id + 1)) ^ (0x14057B7EF767814FULL * (instance + 1)));
    return generate_video(cfg, class_id, rng);
}

std::vector<std::size_t> Dataset::instances_of(std::size_t class_id) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < videos.size(); ++i) {
        if (videos[i].class_id == class_id) {
            out.push_back(i);
        }
    }
    return out;
}

Dataset generate_corpus(const SynthConfig& cfg) {
    cfg.validate();
    Dataset d;
    d.num_classes = cfg.classes.size();
    std::size_t id = 0;
    for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
        for (std::size_t i = 0; i < cfg.instances_per_class; ++i) {
            d.videos.push_back({id++, c, generate_video(cfg, c, i)});
        }
    }
    return d;
}

// ---- feature files ---------------------------------------------------------

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
    }
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t& offset) {
    if (offset + sizeof(T) > in.size()) {
        throw FormatError("feature file truncated at offset " + std::to_string(offset));
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::uint64_t>(in[offset + i]) << (8 * i);
    }
    offset += sizeof(T);
    return static_cast<T>(v);
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

} // namespace

std::vector<std::uint8_t> encode_features(const Tensor& t) {
    if (t.rank() == 0 || t.rank() > 8) {
        throw FormatError("feature files hold tensors of rank 1..8, got " + shape_str(t.shape()));
    }
    std::vector<std::uint8_t> out{'M', 'G', 'A', 'F'};
    put_le<std::uint16_t>(out, kFeatureFileVersion);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape()) {
        if (e > 0xFFFFFFFFULL) {
            throw FormatError("extent too large for feature file: " + std::to_string(e));
        }
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    }
    out.reserve(out.size() + t.numel() * 4 + 4);
    for (double v : t.data()) {
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    put_le<std::uint32_t>(out, crc_of(out.data(), out.size()));
    return out;
}

Tensor decode_features(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "MGAF", 4) != 0) {
        throw FormatError("bad magic at offset 0");
    }
    std::size_t off = 4;
    const auto version = get_le<std::uint16_t>(bytes, off);
    if (version != kFeatureFileVersion) {
        throw FormatError("unsupported version " + std::to_string(version) + " at offset 4");
    }
    const std::size_t rank_offset = off;
    const auto rank = get_le<std::uint8_t>(bytes, off);
    if (rank == 0 || rank > 8) {
        throw FormatError("invalid rank " + std::to_string(rank) + " at offset " + std::to_string(rank_offset));
    }
    Shape shape;
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t at = off;
        const auto e = get_le<std::uint32_t>(bytes, off);
        if (e == 0) {
            throw FormatError("zero extent at offset " + std::to_string(at));
        }
        shape.push_back(e);
    }
    const std::size_t n = shape_numel(shape);
    const std::size_t payload_end = off + n * 4;
    if (payload_end + 4 > bytes.size()) {
        throw FormatError("feature file truncated: payload needs " + std::to_string(payload_end + 4) +
                          " bytes, file has " + std::to_string(bytes.size()) + " (offset " +
                          std::to_string(bytes.size()) + ")");
    }
    if (payload_end + 4 != bytes.size()) {
        throw FormatError("trailing bytes after CRC at offset " + std::to_string(payload_end + 4));
    }
    std::size_t crc_off = payload_end;
    const auto stored = get_le<std::uint32_t>(bytes, crc_off);
    if (stored != crc_of(bytes.data(), payload_end)) {
        throw FormatError("CRC mismatch at offset " + std::to_string(payload_end));
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        values[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, off)));
    }
    return Tensor::from(std::move(shape), std::move(values));
}

void save_features(const std::filesystem::path& path, const Tensor& t) {
    const auto bytes = encode_features(t);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) {
        throw FormatError("write failed for " + path.string());
    }
}

Tensor load_features(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw MissingArtifactError("cannot open feature file " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_features(bytes);
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    for (const auto& e : entries) {
        os << e.instance_id << '\t' << e.class_id << '\t' << e.path << '\n';
    }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw MissingArtifactError("cannot open manifest " + path.string());
    }
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        ManifestEntry e;
        if (!(ls >> e.instance_id >> e.class_id >> e.path)) {
            throw FormatError("malformed manifest line " + std::to_string(lineno));
        }
        out.push_back(std::move(e));
    }
    return out;
}

} // namespace mga
