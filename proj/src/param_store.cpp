#include "mga/param_store.hpp"

#include "mga/error.hpp"

#include <algorithm>
#include <cmath>

namespace mga {

namespace init {

Initializer zeros() {
    return [](std::span<double> v, Rng&) { std::fill(v.begin(), v.end(), 0.0); };
}

Initializer constant(double value) {
    return [value](std::span<double> v, Rng&) { std::fill(v.begin(), v.end(), value); };
}

Initializer kaiming_uniform(std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    return [bound](std::span<double> v, Rng& rng) {
        for (double& e : v) {
            e = rng.uniform(-bound, bound);
        }
    };
}

Initializer center_tap3x3() {
    return [](std::span<double> v, Rng&) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = i % 9 == 4 ? 1.0 : 0.0;
        }
    };
}

Initializer temporal_identity() {
    return [](std::span<double> v, Rng&) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = i % 3 == 1 ? 1.0 : 0.0;
        }
    };
}

} // namespace init

void ParameterStore::initialize(const std::string& name, Entry& entry) const {
    Rng rng(seed_ ^ fnv1a(name));
    entry.initializer(entry.tensor.mutable_data(), rng);
    entry.tensor.zero_grad();
}

Tensor ParameterStore::add(const std::string& name, Shape shape, Initializer initializer, bool frozen) {
    if (entries_.count(name)) {
        throw ConfigError("duplicate parameter name: " + name);
    }
    Entry e{Tensor::zeros(std::move(shape), !frozen), std::move(initializer), frozen};
    initialize(name, e);
    return entries_.emplace(name, std::move(e)).first->second.tensor;
}

Tensor ParameterStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw ConfigError("unknown parameter: " + name);
    }
    return it->second.tensor;
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [n, e] : entries_) {
        out.push_back(n);
    }
    return out;
}

bool ParameterStore::frozen(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw ConfigError("unknown parameter: " + name);
    }
    return it->second.frozen;
}

void ParameterStore::set_frozen(const std::string& name, bool frozen) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw ConfigError("unknown parameter: " + name);
    }
    it->second.frozen = frozen;
    it->second.tensor.node()->requires_grad = !frozen;
}

std::vector<std::pair<std::string, Tensor>> ParameterStore::trainable() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [n, e] : entries_) {
        if (!e.frozen) {
            out.emplace_back(n, e.tensor);
        }
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> ParameterStore::all() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [n, e] : entries_) {
        out.emplace_back(n, e.tensor);
    }
    return out;
}

std::size_t ParameterStore::count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) {
        n += e.tensor.numel();
    }
    return n;
}

std::size_t ParameterStore::trainable_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) {
        if (!e.frozen) {
            n += e.tensor.numel();
        }
    }
    return n;
}

void ParameterStore::reinitialize() {
    for (auto& [n, e] : entries_) {
        initialize(n, e);
    }
}

void ParameterStore::zero_grad() {
    for (auto& [n, e] : entries_) {
        e.tensor.zero_grad();
    }
}

std::vector<std::vector<double>> ParameterStore::snapshot() const {
    std::vector<std::vector<double>> out;
    for (const auto& [n, e] : entries_) {
        out.push_back(e.tensor.to_vector());
    }
    return out;
}

} // namespace mga
