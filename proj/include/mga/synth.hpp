#pragma once

#include "mga/rng.hpp"
#include "mga/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mga {

enum class MotionDir { Up, Down, Left, Right, DiagPlus, DiagMinus };

std::string to_string(MotionDir dir);
MotionDir motion_dir_from_string(const std::string& name);

/// Trajectory rule of one class. Diag+ moves up-right, diag- down-right.
struct MotionProgram {
    MotionDir direction = MotionDir::Right;
    int speed = 1;        // pixels per frame, 1 or 2
    bool reverse = false; // velocity flips at mid-clip

    bool operator==(const MotionProgram&) const = default;
};

struct SynthConfig {
    std::size_t grid = 16;
    std::size_t frames = 8;
    std::size_t square = 4;
    double noise = 0.1;
    double background = 0.1;
    double foreground = 0.9;
    std::size_t instances_per_class = 300;
    std::uint64_t seed = 1;
    std::vector<MotionProgram> classes = default_classes();

    /// The six plain directions at speed 1.
    static std::vector<MotionProgram> default_classes();
    /// Throws ConfigError for duplicate programs or geometry that does not fit.
    void validate() const;
};

/// One clip [L x 1 x G x G] with values in [0, 1]: a bright square on a noisy
/// background, class-determined trajectory. The start position is drawn so
/// the trajectory stays in frame; programs too long for the grid reflect at
/// the borders.
Tensor generate_video(const SynthConfig& cfg, std::size_t class_id, Rng& instance_rng);

/// Deterministic clip for (cfg.seed, class, instance).
Tensor generate_video(const SynthConfig& cfg, std::size_t class_id, std::size_t instance);

struct Video {
    std::size_t id = 0;
    std::size_t class_id = 0;
    Tensor clip;
};

/// Labelled videos grouped by class.
struct Dataset {
    std::vector<Video> videos;
    std::size_t num_classes = 0;

    std::vector<std::size_t> instances_of(std::size_t class_id) const;
};

Dataset generate_corpus(const SynthConfig& cfg);

// ---- feature files ---------------------------------------------------------

/// Binary layout: "MGAF", u16 version, u8 rank, rank x u32 extents,
/// float32 payload (all little-endian), then CRC-32 of every preceding byte.
inline constexpr std::uint16_t kFeatureFileVersion = 1;

std::vector<std::uint8_t> encode_features(const Tensor& t);
Tensor decode_features(const std::vector<std::uint8_t>& bytes);
void save_features(const std::filesystem::path& path, const Tensor& t);
Tensor load_features(const std::filesystem::path& path);

struct ManifestEntry {
    std::size_t instance_id = 0;
    std::size_t class_id = 0;
    std::string path;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

} // namespace mga
