#pragma once

#include "mga/run_config.hpp"

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace mga {

struct CellRecord {
    AblationCell cell;
    std::vector<SeedResult> seeds;
    double mean = 0.0;
    double ci95 = 0.0; // 1.96 * standard error across seeds
    double wall_seconds = 0.0;
};

struct RunOutcome {
    std::filesystem::path dir;
    std::vector<CellRecord> cells;
};

/// MGA_OUT when set and non-empty, otherwise `configured`.
std::filesystem::path resolve_output_root(const std::string& configured);

/// Creates `root/run-NNNN` with the first unused number. Existing run
/// directories are never reused.
std::filesystem::path create_run_dir(const std::filesystem::path& root);

/// Trains and evaluates every cell and writes into a fresh run directory:
///   config.txt     the effective configuration
///   results.txt    key=value lines; timestamp and *.wall_seconds are the
///                  only lines that differ between identical reruns
///   summary.json   the same records, machine-readable
///   attn/<cell>/   score matrices of the first seed on one evaluation
///                  episode: self.mgaf [Q x L x HW x HW], cross.mgaf
///                  [Q x L x HW x NKHW] (frame-wise) or [Q x LHW x LNKHW]
RunOutcome run_experiment(const RunConfig& cfg, const std::filesystem::path& root, std::ostream* log = nullptr);

/// Mean and 1.96 * standard error of per-seed accuracies.
std::pair<double, double> seed_summary(const std::vector<SeedResult>& seeds);

/// Writes one attention map as `<stem>.csv` and `<stem>.pgm` into `out_dir`.
/// `which` is self or cross. Throws MissingArtifactError when the run has no
/// such matrix, UsageError when an index is out of range.
std::vector<std::filesystem::path> export_attention(const std::filesystem::path& run_dir, const std::string& cell,
                                                    const std::string& which, std::size_t query, std::size_t frame,
                                                    const std::filesystem::path& out_dir);

} // namespace mga
