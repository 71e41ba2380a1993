#pragma once

#include "mga/rng.hpp"
#include "mga/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mga {

using Initializer = std::function<void(std::span<double> values, Rng& rng)>;

namespace init {
Initializer zeros();
Initializer constant(double value);
/// U(-b, b) with b = sqrt(6 / fan_in).
Initializer kaiming_uniform(std::size_t fan_in);
/// Per-channel 3x3 kernels with a single 1 at the centre.
Initializer center_tap3x3();
/// Per-channel 3-tap temporal kernels [0, 1, 0].
Initializer temporal_identity();
} // namespace init

/// Named learnable tensors. Every entry is initialised from its own stream
/// derived from (seed, name), so re-initialisation and insertion order never
/// change the values.
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

    Tensor add(const std::string& name, Shape shape, Initializer initializer, bool frozen = false);
    Tensor get(const std::string& name) const;
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    std::vector<std::string> names() const;
    bool frozen(const std::string& name) const;
    void set_frozen(const std::string& name, bool frozen);

    /// Entries the optimiser should update, in name order.
    std::vector<std::pair<std::string, Tensor>> trainable() const;
    std::vector<std::pair<std::string, Tensor>> all() const;

    std::size_t count() const;
    std::size_t trainable_count() const;

    void reinitialize();
    void zero_grad();
    std::uint64_t seed() const { return seed_; }

    /// Copies of every value, in name order.
    std::vector<std::vector<double>> snapshot() const;

private:
    struct Entry {
        Tensor tensor;
        Initializer initializer;
        bool frozen = false;
    };
    void initialize(const std::string& name, Entry& entry) const;

    std::uint64_t seed_;
    std::map<std::string, Entry> entries_;
};

} // namespace mga
