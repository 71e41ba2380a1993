#pragma once

#include "mga/param_store.hpp"
#include "mga/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mga {

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::string worst_parameter; // empty when every error is zero
    std::size_t checked = 0;     // scalars perturbed
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences with step h. The error per scalar is
/// |analytic - numeric| / max(1, |numeric|).
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params, double h = 1e-3);

GradCheckReport grad_check(const std::function<Tensor()>& f, const ParameterStore& params, double h = 1e-3);

} // namespace mga
