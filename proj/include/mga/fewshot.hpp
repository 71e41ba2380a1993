#pragma once

#include "mga/cmga.hpp"
#include "mga/model.hpp"
#include "mga/rng.hpp"
#include "mga/synth.hpp"
#include "mga/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mga {

/// One N-way K-shot task. Indices point into the Dataset; labels are episode
/// labels in [0, N) assigned in class-draw order.
struct Episode {
    std::vector<std::size_t> support;
    std::vector<std::size_t> support_labels;
    std::vector<std::size_t> query;
    std::vector<std::size_t> query_labels;
    std::vector<std::size_t> classes; // dataset class of each episode label
    std::size_t n_way = 0;
    std::size_t k_shot = 0;
};

/// Classes and instances are drawn uniformly without replacement. Support
/// is laid out class by class, K shots each.
Episode sample_episode(const Dataset& data, std::size_t n_way, std::size_t k_shot, std::size_t q_per_class,
                       Rng& rng);

/// Spatial mean per frame and channel: [L x D x H x W] -> [L x D].
Tensor pool_frames(const Tensor& f);

/// Video-to-video distance on pooled [L x D] sequences.
using Metric = std::function<Tensor(const Tensor& query, const Tensor& support)>;

/// Looks up a matching metric by name ("bimhm" is built in).
Metric metric_by_name(const std::string& name);
void register_metric(const std::string& name, Metric metric);
std::vector<std::string> metric_names();

struct MatchResult {
    Tensor distances; // [Q x N]
    Tensor logits;    // -distances
    std::vector<std::size_t> predicted;
};

/// Class distance = mean distance to that class's K support videos.
/// Predictions take the smallest distance, ties to the lowest class index.
MatchResult episode_logits(const EpisodeFeatures& features, const Episode& episode, const Metric& metric);

/// Adam with constant learning rate over the trainable entries of a store.
class Adam {
public:
    explicit Adam(std::vector<std::pair<std::string, Tensor>> params, double lr = 1e-3, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);

    void step();
    void zero_grad();
    std::size_t steps() const { return t_; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    std::size_t t_ = 0;
};

struct TrainStep {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Forward, cross-entropy over -distance logits, backward, one Adam step.
TrainStep train_episode(FewShotModel& model, const Dataset& data, const Episode& episode, Adam& optimizer,
                        const Metric& metric);

/// Fraction of queries classified correctly (no gradient recording).
double episode_accuracy(const FewShotModel& model, const Dataset& data, const Episode& episode,
                        const Metric& metric);

struct EvalResult {
    double mean = 0.0;
    double ci95 = 0.0; // 1.96 * standard error
    std::vector<double> per_episode;
};

struct EvalSpec {
    std::size_t episodes = 1000;
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t q_per_class = 1;
    std::uint64_t seed = 0;
    unsigned threads = 1; // 0 = hardware concurrency
};

/// Episodes are pre-sampled from the seed, evaluated (optionally in
/// parallel) and reduced in episode order.
EvalResult evaluate(const FewShotModel& model, const Dataset& data, const EvalSpec& spec, const Metric& metric);

/// Same reduction for an arbitrary per-episode scorer (used by oracle and
/// chance-level baselines).
EvalResult evaluate_with(const std::function<double(const Episode&)>& scorer, const Dataset& data,
                         const EvalSpec& spec);

} // namespace mga
