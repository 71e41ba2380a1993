#include "mga/fewshot.hpp"

#include "mga/error.hpp"
#include "mga/ops.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <thread>

namespace mga {

namespace {

// Partial Fisher-Yates: the first k entries become a uniform k-subset in random order.
void partial_shuffle(std::vector<std::size_t>& v, std::size_t k, Rng& rng) {
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(v.size() - i));
        std::swap(v[i], v[j]);
    }
}

} // namespace

Episode sample_episode(const Dataset& data, std::size_t n_way, std::size_t k_shot, std::size_t q_per_class,
                       Rng& rng) {
    if (n_way == 0 || k_shot == 0 || q_per_class == 0) {
        throw ConfigError("sample_episode: n_way, k_shot and q_per_class must be positive");
    }
    if (data.num_classes < n_way) {
        throw DataError("sample_episode: dataset has " + std::to_string(data.num_classes) + " classes, need " +
                        std::to_string(n_way));
    }
    std::vector<std::size_t> classes(data.num_classes);
    for (std::size_t c = 0; c < classes.size(); ++c) {
        classes[c] = c;
    }
    partial_shuffle(classes, n_way, rng);
    Episode ep;
    ep.n_way = n_way;
    ep.k_shot = k_shot;
    ep.classes.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n_way));
    std::vector<std::vector<std::size_t>> queries(n_way);
    for (std::size_t label = 0; label < n_way; ++label) {
        const std::size_t c = ep.classes[label];
        std::vector<std::size_t> inst = data.instances_of(c);
        if (inst.size() < k_shot + q_per_class) {
            throw DataError("sample_episode: class " + std::to_string(c) + " has " + std::to_string(inst.size()) +
                            " instances, need " + std::to_string(k_shot + q_per_class));
        }
        partial_shuffle(inst, k_shot + q_per_class, rng);
        for (std::size_t i = 0; i < k_shot; ++i) {
            ep.support.push_back(inst[i]);
            ep.support_labels.push_back(label);
        }
        for (std::size_t i = 0; i < q_per_class; ++i) {
            queries[label].push_back(inst[k_shot + i]);
        }
    }
    for (std::size_t label = 0; label < n_way; ++label) {
        for (std::size_t idx : queries[label]) {
            ep.query.push_back(idx);
            ep.query_labels.push_back(label);
        }
    }
    return ep;
}

Tensor pool_frames(const Tensor& f) {
    if (f.rank() != 4) {
        throw DimensionError("pool_frames: expected [L x D x H x W], got " + shape_str(f.shape()));
    }
    return ops::mean_trailing(f, 2);
}

namespace {

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::map<std::string, Metric>& registry() {
    static std::map<std::string, Metric> r{{"bimhm", [](const Tensor& q, const Tensor& s) {
                                                return ops::bimhm_distance(q, s);
                                            }}};
    return r;
}

} // namespace

Metric metric_by_name(const std::string& name) {
    std::lock_guard lock(registry_mutex());
    auto it = registry().find(name);
    if (it == registry().end()) {
        throw ConfigError("unknown metric: " + name);
    }
    return it->second;
}

void register_metric(const std::string& name, Metric metric) {
    std::lock_guard lock(registry_mutex());
    registry()[name] = std::move(metric);
}

std::vector<std::string> metric_names() {
    std::lock_guard lock(registry_mutex());
    std::vector<std::string> out;
    for (const auto& [n, m] : registry()) {
        out.push_back(n);
    }
    return out;
}

MatchResult episode_logits(const EpisodeFeatures& features, const Episode& episode, const Metric& metric) {
    if (features.support.size() != episode.support.size() || features.query.size() != episode.query.size()) {
        throw UsageError("episode_logits: feature counts do not match the episode");
    }
    std::vector<Tensor> pooled_support;
    for (const Tensor& s : features.support) {
        pooled_support.push_back(pool_frames(s));
    }
    std::vector<Tensor> rows;
    for (const Tensor& q : features.query) {
        Tensor pq = pool_frames(q);
        std::vector<Tensor> per_class;
        for (std::size_t c = 0; c < episode.n_way; ++c) {
            std::vector<Tensor> d;
            for (std::size_t s = 0; s < pooled_support.size(); ++s) {
                if (episode.support_labels[s] == c) {
                    d.push_back(metric(pq, pooled_support[s]));
                }
            }
            if (d.empty()) {
                throw UsageError("episode_logits: class " + std::to_string(c) + " has no support video");
            }
            per_class.push_back(ops::mean(ops::stack_scalars(d)));
        }
        rows.push_back(ops::stack_scalars(per_class));
    }
    MatchResult r;
    r.distances = ops::reshape(ops::concat(rows, 0), {features.query.size(), episode.n_way});
    r.logits = ops::scale(r.distances, -1.0);
    auto dv = r.distances.data();
    for (std::size_t q = 0; q < features.query.size(); ++q) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < episode.n_way; ++c) {
            if (dv[q * episode.n_way + c] < dv[q * episode.n_way + best]) {
                best = c;
            }
        }
        r.predicted.push_back(best);
    }
    return r;
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, t] : params_) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        Tensor& t = params_[p].second;
        if (!t.has_grad()) {
            continue;
        }
        const std::vector<double> g = t.grad();
        std::span<double> w = t.mutable_data();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            w[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& [name, t] : params_) {
        t.zero_grad();
    }
}

namespace {

std::vector<Tensor> clips_of(const Dataset& data, const std::vector<std::size_t>& idx) {
    std::vector<Tensor> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
        out.push_back(data.videos.at(i).clip);
    }
    return out;
}

double accuracy_of(const MatchResult& r, const Episode& ep) {
    std::size_t hits = 0;
    for (std::size_t q = 0; q < r.predicted.size(); ++q) {
        hits += r.predicted[q] == ep.query_labels[q] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(r.predicted.size());
}

} // namespace

TrainStep train_episode(FewShotModel& model, const Dataset& data, const Episode& episode, Adam& optimizer,
                        const Metric& metric) {
    optimizer.zero_grad();
    EpisodeFeatures f = model.forward(clips_of(data, episode.support), clips_of(data, episode.query));
    MatchResult r = episode_logits(f, episode, metric);
    Tensor loss = ops::cross_entropy(r.logits, episode.query_labels);
    if (!std::isfinite(loss.item())) {
        throw NumericError("train_episode: non-finite loss");
    }
    loss.backward();
    optimizer.step();
    return {loss.item(), accuracy_of(r, episode)};
}

double episode_accuracy(const FewShotModel& model, const Dataset& data, const Episode& episode,
                        const Metric& metric) {
    NoGradGuard guard;
    EpisodeFeatures f = model.forward(clips_of(data, episode.support), clips_of(data, episode.query));
    return accuracy_of(episode_logits(f, episode, metric), episode);
}

EvalResult evaluate_with(const std::function<double(const Episode&)>& scorer, const Dataset& data,
                         const EvalSpec& spec) {
    if (spec.episodes == 0) {
        throw ConfigError("evaluate: need at least one episode");
    }
    Rng rng(spec.seed);
    std::vector<Episode> episodes;
    episodes.reserve(spec.episodes);
    for (std::size_t e = 0; e < spec.episodes; ++e) {
        episodes.push_back(sample_episode(data, spec.n_way, spec.k_shot, spec.q_per_class, rng));
    }
    EvalResult r;
    r.per_episode.assign(spec.episodes, 0.0);
    unsigned threads = spec.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : spec.threads;
    threads = std::min<unsigned>(threads, static_cast<unsigned>(spec.episodes));
    if (threads <= 1) {
        for (std::size_t e = 0; e < episodes.size(); ++e) {
            r.per_episode[e] = scorer(episodes[e]);
        }
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(threads);
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t e = t; e < episodes.size(); e += threads) {
                        r.per_episode[e] = scorer(episodes[e]);
                    }
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) {
            th.join();
        }
        for (auto& err : errors) {
            if (err) {
                std::rethrow_exception(err);
            }
        }
    }
    double sum = 0.0;
    for (double a : r.per_episode) {
        sum += a;
    }
    const double n = static_cast<double>(spec.episodes);
    r.mean = sum / n;
    if (spec.episodes > 1) {
        double ss = 0.0;
        for (double a : r.per_episode) {
            ss += (a - r.mean) * (a - r.mean);
        }
        const double sd = std::sqrt(ss / (n - 1.0));
        r.ci95 = 1.96 * sd / std::sqrt(n);
    }
    return r;
}

EvalResult evaluate(const FewShotModel& model, const Dataset& data, const EvalSpec& spec, const Metric& metric) {
    return evaluate_with([&](const Episode& ep) { return episode_accuracy(model, data, ep, metric); }, data, spec);
}

} // namespace mga
