#include "doctest.h"

#include "mga/error.hpp"
#include "mga/ops.hpp"
#include "mga/synth.hpp"

#include "../support/helpers.hpp"

#include <filesystem>
#include <fstream>

using namespace mga;
using namespace mga::testing;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kLeft = 2;
constexpr std::size_t kRight = 3;

fs::path scratch_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("mga-unit-" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string error_of(const std::vector<std::uint8_t>& bytes) {
    try {
        decode_features(bytes);
    } catch (const FormatError& e) {
        return e.what();
    }
    return "";
}

// Per frame pair: column centroid of pixels that brighten minus column
// centroid of pixels that darken. Positive for rightward motion.
std::vector<double> edge_shift(const Tensor& clip, double threshold = 0.4) {
    const std::size_t L = clip.dim(0), G = clip.dim(2);
    std::vector<double> out;
    for (std::size_t t = 0; t + 1 < L; ++t) {
        double pos = 0.0, pos_x = 0.0, neg = 0.0, neg_x = 0.0;
        for (std::size_t y = 0; y < G; ++y) {
            for (std::size_t x = 0; x < G; ++x) {
                const double d = clip.at({t + 1, 0, y, x}) - clip.at({t, 0, y, x});
                if (d > threshold) {
                    pos += 1.0;
                    pos_x += static_cast<double>(x);
                } else if (d < -threshold) {
                    neg += 1.0;
                    neg_x += static_cast<double>(x);
                }
            }
        }
        out.push_back((pos > 0 ? pos_x / pos : 0.0) - (neg > 0 ? neg_x / neg : 0.0));
    }
    return out;
}

} // namespace

TEST_SUITE("synth") {

TEST_CASE("noise-free rightward clips shift by one pixel per frame") {
    SynthConfig cfg;
    cfg.noise = 0.0;
    for (std::size_t inst = 0; inst < 20; ++inst) {
        Tensor clip = generate_video(cfg, kRight, inst);
        const std::size_t G = cfg.grid;
        for (std::size_t t = 0; t + 1 < cfg.frames; ++t) {
            for (std::size_t y = 0; y < G; ++y) {
                CHECK(clip.at({t + 1, 0, y, 0}) == cfg.background);
                for (std::size_t x = 1; x < G; ++x) {
                    CHECK(clip.at({t + 1, 0, y, x}) == clip.at({t, 0, y, x - 1}));
                }
            }
        }
    }
}

TEST_CASE("clips are deterministic and bounded") {
    SynthConfig cfg;
    CHECK(bitwise_equal(generate_video(cfg, 4, 17), generate_video(cfg, 4, 17)));
    CHECK_FALSE(bitwise_equal(generate_video(cfg, 4, 17), generate_video(cfg, 4, 18)));
    cfg.noise = 0.6;
    for (std::size_t c = 0; c < 6; ++c) {
        Tensor clip = generate_video(cfg, c, 3);
        CHECK(clip.shape() == Shape{8, 1, 16, 16});
        for (double v : clip.data()) {
            CHECK((v >= 0.0 && v <= 1.0));
        }
    }
    Rng rng(1);
    CHECK_THROWS_AS(generate_video(cfg, 6, rng), UsageError);
}

TEST_CASE("reversal retraces the first half") {
    SynthConfig cfg;
    cfg.noise = 0.0;
    cfg.classes = {{MotionDir::Down, 1, true}};
    Tensor clip = generate_video(cfg, 0, 5);
    for (std::size_t k = 1; k < 4; ++k) {
        CHECK(bitwise_equal(ops::slice0(clip, 4 + k, 5 + k), ops::slice0(clip, 4 - k, 5 - k)));
    }
}

TEST_CASE("long programs reflect and stay in frame") {
    SynthConfig cfg;
    cfg.grid = 8;
    cfg.square = 4;
    cfg.noise = 0.0;
    cfg.classes = {{MotionDir::DiagPlus, 2, false}};
    for (std::size_t inst = 0; inst < 10; ++inst) {
        Tensor clip = generate_video(cfg, 0, inst);
        for (std::size_t t = 0; t < cfg.frames; ++t) {
            int lit = 0;
            for (double v : ops::slice0(clip, t, t + 1).to_vector()) {
                lit += v == cfg.foreground ? 1 : 0;
            }
            CHECK(lit == 16);
        }
    }
}

TEST_CASE("left and right are separable from frame differences alone") {
    SynthConfig cfg;
    std::vector<double> centroid[2];
    const std::size_t classes[2] = {kLeft, kRight};
    for (int k = 0; k < 2; ++k) {
        centroid[k].assign(cfg.frames - 1, 0.0);
        for (std::size_t inst = 0; inst < 50; ++inst) {
            std::vector<double> f = edge_shift(generate_video(cfg, classes[k], inst));
            for (std::size_t i = 0; i < f.size(); ++i) {
                centroid[k][i] += f[i] / 50.0;
            }
        }
    }
    int correct = 0;
    for (std::size_t inst = 100; inst < 200; ++inst) {
        for (int k = 0; k < 2; ++k) {
            std::vector<double> f = edge_shift(generate_video(cfg, classes[k], inst));
            double d[2] = {0.0, 0.0};
            for (int j = 0; j < 2; ++j) {
                for (std::size_t i = 0; i < f.size(); ++i) {
                    d[j] += (f[i] - centroid[j][i]) * (f[i] - centroid[j][i]);
                }
            }
            correct += (d[1] < d[0] ? 1 : 0) == k ? 1 : 0;
        }
    }
    const double accuracy = correct / 200.0;
    CAPTURE(accuracy);
    CHECK(accuracy > 0.95);
}

TEST_CASE("configuration checks") {
    SynthConfig ok;
    CHECK_NOTHROW(ok.validate());
    SynthConfig c = ok;
    c.square = c.grid;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ok;
    c.classes.push_back(c.classes[0]);
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ok;
    c.classes[1].speed = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ok;
    c.noise = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ok;
    c.frames = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(motion_dir_from_string("diag-") == MotionDir::DiagMinus);
    CHECK_THROWS_AS(motion_dir_from_string("sideways"), ConfigError);
}

TEST_CASE("corpus layout") {
    SynthConfig cfg;
    cfg.instances_per_class = 4;
    Dataset d = generate_corpus(cfg);
    CHECK(d.num_classes == 6);
    REQUIRE(d.videos.size() == 24);
    for (std::size_t i = 0; i < 24; ++i) {
        CHECK(d.videos[i].id == i);
        CHECK(d.videos[i].class_id == i / 4);
    }
    CHECK(d.instances_of(2) == std::vector<std::size_t>{8, 9, 10, 11});
    CHECK(bitwise_equal(d.videos[9].clip, generate_video(cfg, 2, 1)));
}

TEST_CASE("feature files round trip exactly") {
    Rng rng(2);
    std::vector<double> v(4 * 8 * 3 * 3);
    for (double& x : v) {
        x = static_cast<double>(static_cast<float>(rng.normal()));
    }
    Tensor t = Tensor::from({4, 8, 3, 3}, v);
    CHECK(bitwise_equal(decode_features(encode_features(t)), t));

    fs::path dir = scratch_dir("features");
    save_features(dir / "t.mgaf", t);
    CHECK(fs::file_size(dir / "t.mgaf") == 4 + 2 + 1 + 4 * 4 + v.size() * 4 + 4);
    CHECK(bitwise_equal(load_features(dir / "t.mgaf"), t));
    CHECK_THROWS_AS(load_features(dir / "absent.mgaf"), MissingArtifactError);
    fs::remove_all(dir);
}

TEST_CASE("corrupted feature files name the offset") {
    Tensor t = Tensor::full({2, 3}, 0.5);
    const std::vector<std::uint8_t> good = encode_features(t);

    std::vector<std::uint8_t> flipped = good;
    flipped[7 + 8 + 5] ^= 0x10;
    CHECK(error_of(flipped) == "CRC mismatch at offset " + std::to_string(good.size() - 4));

    std::vector<std::uint8_t> magic = good;
    magic[1] = 'X';
    CHECK(error_of(magic) == "bad magic at offset 0");

    std::vector<std::uint8_t> cut(good.begin(), good.end() - 6);
    CHECK(error_of(cut).find("truncated") != std::string::npos);
    std::vector<std::uint8_t> header_only(good.begin(), good.begin() + 9);
    CHECK(error_of(header_only).find("truncated at offset 7") != std::string::npos);

    std::vector<std::uint8_t> version = good;
    version[4] = 9;
    CHECK(error_of(version).find("offset 4") != std::string::npos);
}

TEST_CASE("header of a backbone-sized export") {
    Tensor t = Tensor::zeros({8, 2048, 7, 7});
    const std::vector<std::uint8_t> b = encode_features(t);
    CHECK(std::string(b.begin(), b.begin() + 4) == "MGAF");
    CHECK(b[4] == 1);
    CHECK(b[5] == 0);
    CHECK(b[6] == 4);
    auto u32 = [&](std::size_t off) {
        return static_cast<std::uint32_t>(b[off]) | static_cast<std::uint32_t>(b[off + 1]) << 8 |
               static_cast<std::uint32_t>(b[off + 2]) << 16 | static_cast<std::uint32_t>(b[off + 3]) << 24;
    };
    CHECK(u32(7) == 8);
    CHECK(u32(11) == 2048);
    CHECK(u32(15) == 7);
    CHECK(u32(19) == 7);
    CHECK(b.size() == 23 + 8 * 2048 * 49 * 4 + 4);
}

TEST_CASE("manifest") {
    fs::path dir = scratch_dir("manifest");
    std::vector<ManifestEntry> entries{{0, 0, "clips/a.mgaf"}, {7, 3, "clips/b.mgaf"}};
    write_manifest(dir / "m.tsv", entries);
    std::vector<ManifestEntry> back = read_manifest(dir / "m.tsv");
    REQUIRE(back.size() == 2);
    CHECK(back[1].instance_id == 7);
    CHECK(back[1].class_id == 3);
    CHECK(back[1].path == "clips/b.mgaf");

    std::ofstream(dir / "bad.tsv") << "0\t1\tok.mgaf\nnot-a-number\n";
    CHECK_THROWS_AS(read_manifest(dir / "bad.tsv"), FormatError);
    CHECK_THROWS_AS(read_manifest(dir / "absent.tsv"), MissingArtifactError);
    fs::remove_all(dir);
}

} // TEST_SUITE
