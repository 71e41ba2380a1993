#include "mga/report.hpp"

#include "mga/error.hpp"
#include "mga/ops.hpp"
#include "mga/rng.hpp"
#include "mga/smga.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mga {

Component component_from_string(const std::string& name) {
    if (name == "smga") {
        return Component::Smga;
    }
    if (name == "cmga") {
        return Component::Cmga;
    }
    if (name == "adapter-model") {
        return Component::AdapterModel;
    }
    throw ConfigError("component must be smga, cmga or adapter-model, got '" + name + "'");
}

std::string to_string(Component c) {
    switch (c) {
    case Component::Smga:
        return "smga";
    case Component::Cmga:
        return "cmga";
    case Component::AdapterModel:
        return "adapter-model";
    }
    return "?";
}

namespace {

void append(ParamCount& out, const std::vector<ParamLayout>& layout, bool trainable) {
    for (const ParamLayout& l : layout) {
        const std::size_t n = shape_numel(l.shape);
        out.items.push_back({l.name, l.shape, n});
        out.total += n;
        if (trainable) {
            out.trainable += n;
        }
    }
}

} // namespace

ParamCount count_parameters(Component component, const ParamDims& d) {
    ParamCount out;
    switch (component) {
    case Component::Smga:
        append(out, SmgaParams::layout("smga", d.frames, d.channels, d.ratio), true);
        break;
    case Component::Cmga:
        append(out, CmgaParams::layout("cmga", d.channels, d.ratio), true);
        break;
    case Component::AdapterModel: {
        if (d.backbone.blocks < 2) {
            throw ConfigError("adapter model needs at least 2 backbone blocks");
        }
        append(out, BackboneStub::layout("backbone", d.backbone), false);
        for (std::size_t b = 0; b < d.backbone.blocks; ++b) {
            const bool last = b + 1 == d.backbone.blocks;
            append(out,
                   AdapterParams::layout("adapter" + std::to_string(b), last ? AdapterKind::Cmga : AdapterKind::Smga,
                                         d.frames, d.backbone.width, d.adapter_ratio, last ? d.r2 : d.r1),
                   true);
        }
        break;
    }
    }
    return out;
}

BenchCost bench_analytic(const BenchShape& s, CrossVariant variant) {
    if (s.ratio == 0 || s.channels % s.ratio != 0) {
        throw ConfigError("bench: channels " + std::to_string(s.channels) + " not divisible by ratio " +
                          std::to_string(s.ratio));
    }
    const std::size_t hw = s.height * s.width;
    const std::size_t support_patches = s.n_way * s.k_shot * hw;
    const std::size_t dc = s.channels / s.ratio;
    const std::size_t l = s.frames;
    BenchCost c;
    c.score_elements = variant == CrossVariant::FrameWise ? l * hw * support_patches : (l * hw) * (l * support_patches);
    c.macs = c.score_elements * (2 * dc + s.channels);
    c.peak_floats = 4 * c.score_elements + 2 * l * (hw + support_patches) * dc + l * support_patches * s.channels +
                    l * hw * s.channels;
    return c;
}

double bench_wall_ms(const BenchShape& s, CrossVariant variant, std::size_t reps, std::uint64_t seed) {
    if (reps == 0) {
        throw ConfigError("bench: repetitions must be positive");
    }
    const std::size_t hw = s.height * s.width;
    const std::size_t support_patches = s.n_way * s.k_shot * hw;
    const std::size_t dc = s.channels / s.ratio;
    Rng rng(seed);
    auto random = [&](Shape shape) {
        std::vector<double> v(shape_numel(shape));
        for (double& x : v) {
            x = rng.normal();
        }
        return Tensor::from(std::move(shape), std::move(v));
    };
    PatchMotion query{random({s.frames, hw, dc}), random({s.frames, hw, dc})};
    PatchMotion support{random({s.frames, support_patches, dc}), random({s.frames, support_patches, dc})};
    Tensor values = random({s.frames, support_patches, s.channels});
    Tensor f_q = random({s.frames, s.channels, s.height, s.width});
    CmgaParams p;
    p.channels = s.channels;
    p.phi3 = Tensor::zeros({s.channels, 3});
    p.lambda1 = Tensor::scalar(1.0);
    p.lambda2 = Tensor::scalar(0.0);

    NoGradGuard guard;
    std::vector<double> times;
    for (std::size_t r = 0; r < reps; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        CrossScore c = variant == CrossVariant::FrameWise ? cross_association_framewise(query, support, dc)
                                                          : cross_association_frameall(query, support, dc);
        Tensor out = enhance_query(f_q, c, values, p, variant);
        auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    const std::size_t n = times.size();
    return n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

namespace {

void require_matrix(const Tensor& m, const char* what) {
    if (!m.defined() || m.rank() != 2) {
        throw DimensionError(std::string(what) + ": expected a matrix");
    }
}

} // namespace

void write_matrix_csv(const std::filesystem::path& path, const Tensor& m) {
    require_matrix(m, "write_matrix_csv");
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    const std::size_t rows = m.dim(0);
    const std::size_t cols = m.dim(1);
    auto v = m.data();
    char buf[40];
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", v[r * cols + c]);
            out << (c ? "," : "") << buf;
        }
        out << '\n';
    }
}

Tensor read_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw MissingArtifactError("missing matrix file " + path.string());
    }
    std::vector<double> values;
    std::size_t cols = 0;
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::size_t n = 0;
        while (std::getline(ss, cell, ',')) {
            values.push_back(std::stod(cell));
            ++n;
        }
        if (rows == 0) {
            cols = n;
        } else if (n != cols) {
            throw FormatError(path.string() + ": row " + std::to_string(rows) + " has " + std::to_string(n) +
                              " columns, expected " + std::to_string(cols));
        }
        ++rows;
    }
    if (rows == 0) {
        throw FormatError(path.string() + ": empty matrix");
    }
    return Tensor::from({rows, cols}, std::move(values));
}

std::vector<std::uint8_t> normalize_to_gray(const Tensor& m) {
    auto v = m.data();
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    std::vector<std::uint8_t> out(v.size(), 0);
    const double range = *hi - *lo;
    if (!(range > 0.0)) {
        return out;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(std::lround((v[i] - *lo) / range * 255.0));
    }
    return out;
}

void write_matrix_pgm(const std::filesystem::path& path, const Tensor& m) {
    require_matrix(m, "write_matrix_pgm");
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << "P5\n" << m.dim(1) << ' ' << m.dim(0) << "\n255\n";
    const std::vector<std::uint8_t> gray = normalize_to_gray(m);
    out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

} // namespace mga
