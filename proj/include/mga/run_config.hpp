#pragma once

#include "mga/experiment.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mga {

/// Flat configuration of an experiment run. Text form is one `key = value`
/// per line; `#` starts a comment. Unknown keys are errors.
///
///   mode             ft | adapter
///   n_way, k_shot, q_per_class
///   frames           L
///   dim              D (stem width)
///   grid, patch      input pixels per side and patch size (H = W = grid/patch)
///   r1, r2           S-MGA / C-MGA compression
///   adapter_ratio    D / D' in adapter mode
///   seeds            comma list and/or ranges, e.g. 0-9 or 1,4,7
///   train_episodes, eval_episodes, learning_rate
///   smga, cmga       on | off
///   ablation         on: run all four smga/cmga cells instead of one
///   variant          framewise | frameall
///   instances, noise synthetic corpus size per class and pixel noise
///   workers          seeds trained concurrently (0 = all cores)
///   output_dir       root for run directories (MGA_OUT overrides)
struct RunConfig {
    PipelineMode mode = PipelineMode::FineTune;
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t q_per_class = 2;
    std::size_t frames = 8;
    std::size_t dim = 16;
    std::size_t grid = 16;
    std::size_t patch = 4;
    std::size_t r1 = 4;
    std::size_t r2 = 4;
    std::size_t adapter_ratio = 4;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::size_t train_episodes = 600;
    std::size_t eval_episodes = 300;
    double learning_rate = 3e-3;
    bool smga = true;
    bool cmga = true;
    bool ablation = false;
    CrossVariant variant = CrossVariant::FrameWise;
    std::size_t instances = 300;
    double noise = 0.1;
    unsigned workers = 1;
    std::string output_dir = "runs";
};

const std::vector<std::string>& run_config_keys();

/// Sets one field from its text form; ConfigError names the field on failure.
void set_run_option(RunConfig& cfg, const std::string& key, const std::string& value);
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical `key = value` text; parse_run_config(echo(c)) reproduces c.
std::string echo_run_config(const RunConfig& cfg);
/// Cross-field checks (divisibility, episode feasibility, ...).
void validate_run_config(const RunConfig& cfg);

struct AblationCell {
    std::string name; // baseline, smga, cmga, full
    bool smga = false;
    bool cmga = false;
};

/// One cell, or the four toggle combinations when ablation is on.
std::vector<AblationCell> run_cells(const RunConfig& cfg);
std::string cell_name(bool smga, bool cmga);
ExperimentSpec to_experiment(const RunConfig& cfg, const AblationCell& cell);

} // namespace mga
