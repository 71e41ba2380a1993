#include "mga/experiment.hpp"

#include "mga/rng.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

namespace mga {

namespace {

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed ^ (stream * 0x9E3779B97F4A7C15ULL);
    return splitmix64(s);
}

} // namespace

Dataset train_corpus(const SynthConfig& cfg, std::uint64_t seed) {
    SynthConfig c = cfg;
    c.seed = derive(seed, 1);
    return generate_corpus(c);
}

Dataset eval_corpus(const SynthConfig& cfg, std::uint64_t seed) {
    SynthConfig c = cfg;
    c.seed = derive(seed, 2);
    return generate_corpus(c);
}

SeedResult run_seed(const ExperimentSpec& spec, std::uint64_t seed,
                    const std::function<void(std::size_t, double)>& on_step,
                    const std::function<void(const FewShotModel&, const Dataset&)>& on_trained) {
    ModelConfig mc = spec.model;
    mc.seed = derive(seed, 3);
    mc.frames = spec.data.frames;
    FewShotModel model(mc);
    const Metric metric = metric_by_name(spec.metric);
    const Dataset train = train_corpus(spec.data, seed);
    const Dataset test = eval_corpus(spec.data, seed);

    SeedResult r;
    r.seed = seed;
    Adam opt(model.params().trainable(), spec.learning_rate);
    Rng rng(derive(seed, 4));
    for (std::size_t e = 0; e < spec.train_episodes; ++e) {
        Episode ep = sample_episode(train, spec.n_way, spec.k_shot, spec.q_per_class, rng);
        TrainStep step = train_episode(model, train, ep, opt, metric);
        r.losses.push_back(step.loss);
        if (on_step) {
            on_step(e, step.loss);
        }
    }
    if (!r.losses.empty()) {
        const std::size_t tail = std::max<std::size_t>(1, r.losses.size() / 10);
        double s = 0.0;
        for (std::size_t i = r.losses.size() - tail; i < r.losses.size(); ++i) {
            s += r.losses[i];
        }
        r.final_loss = s / static_cast<double>(tail);
    }
    EvalSpec es;
    es.episodes = spec.eval_episodes;
    es.n_way = spec.n_way;
    es.k_shot = spec.k_shot;
    es.q_per_class = spec.q_per_class;
    es.seed = derive(seed, 5);
    es.threads = spec.eval_threads;
    EvalResult ev = evaluate(model, test, es, metric);
    r.accuracy = ev.mean;
    r.ci95 = ev.ci95;
    if (on_trained) {
        on_trained(model, test);
    }
    return r;
}

std::vector<SeedResult> run_seeds(
    const ExperimentSpec& spec, const std::vector<std::uint64_t>& seeds, unsigned workers,
    const std::function<void(std::size_t, const FewShotModel&, const Dataset&)>& on_trained) {
    auto one = [&](std::size_t i) {
        std::function<void(const FewShotModel&, const Dataset&)> hook;
        if (on_trained) {
            hook = [&, i](const FewShotModel& m, const Dataset& d) { on_trained(i, m, d); };
        }
        return run_seed(spec, seeds[i], {}, hook);
    };
    std::vector<SeedResult> out(seeds.size());
    if (workers == 0) {
        workers = std::max(1u, std::thread::hardware_concurrency());
    }
    workers = std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(seeds.size(), 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            out[i] = one(i);
        }
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = next++; i < seeds.size(); i = next++) {
                    out[i] = one(i);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (std::thread& t : pool) {
        t.join();
    }
    for (const std::exception_ptr& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return out;
}

} // namespace mga
