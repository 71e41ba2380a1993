#pragma once

#include "mga/ops.hpp"
#include "mga/param_store.hpp"
#include "mga/rng.hpp"
#include "mga/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>
#include <vector>

namespace mga::testing {

inline Tensor randn(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = scale * rng.normal();
    }
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Tensor randu(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = rng.uniform(lo, hi);
    }
    return Tensor::from(std::move(shape), std::move(v));
}

/// Adds N(0, scale^2) noise to every entry so zero-initialised gains and
/// projections become active.
inline void perturb(ParameterStore& store, Rng& rng, double scale = 0.3) {
    for (auto& [name, t] : store.all()) {
        for (double& x : t.mutable_data()) {
            x += scale * rng.normal();
        }
    }
}

/// Linear read-out sum(x * w) with a fixed random w: a scalar loss whose
/// gradient exercises every output element.
inline Tensor readout(const Tensor& x, std::uint64_t seed) {
    Rng rng(seed);
    return ops::sum(ops::mul(x, randn(x.shape(), rng)));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        return false;
    }
    return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

} // namespace mga::testing
