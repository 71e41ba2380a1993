#pragma once

#include "mga/fewshot.hpp"
#include "mga/model.hpp"
#include "mga/synth.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mga {

/// Everything needed to train and evaluate one model for one seed.
struct ExperimentSpec {
    ModelConfig model;
    SynthConfig data; // seed field is overridden per run
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t q_per_class = 2;
    std::size_t train_episodes = 600;
    std::size_t eval_episodes = 300;
    double learning_rate = 3e-3;
    std::string metric = "bimhm";
    unsigned eval_threads = 1;
};

struct SeedResult {
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double ci95 = 0.0;
    double final_loss = 0.0; // mean over the last 10% of training episodes
    std::vector<double> losses;
};

/// Trains on a corpus generated from `seed` and evaluates on a disjoint
/// corpus (different instance stream). Bit-reproducible for a given seed.
/// `on_trained` sees the trained model and the evaluation corpus.
SeedResult run_seed(const ExperimentSpec& spec, std::uint64_t seed,
                    const std::function<void(std::size_t episode, double loss)>& on_step = {},
                    const std::function<void(const FewShotModel&, const Dataset&)>& on_trained = {});

/// Runs every seed, up to `workers` at a time (0 = hardware concurrency).
/// Results come back in the order of `seeds` regardless of scheduling.
/// `on_trained` receives the seed's index and may run on a worker thread.
std::vector<SeedResult> run_seeds(
    const ExperimentSpec& spec, const std::vector<std::uint64_t>& seeds, unsigned workers = 1,
    const std::function<void(std::size_t, const FewShotModel&, const Dataset&)>& on_trained = {});

/// Corpus used for training / evaluation under `seed`.
Dataset train_corpus(const SynthConfig& cfg, std::uint64_t seed);
Dataset eval_corpus(const SynthConfig& cfg, std::uint64_t seed);

} // namespace mga
