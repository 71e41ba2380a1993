#include "mga/grad_check.hpp"

#include "mga/error.hpp"

#include <algorithm>
#include <cmath>

namespace mga {

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params, double h) {
    for (auto [name, t] : params) {
        t.zero_grad();
    }
    Tensor out = f();
    if (out.numel() != 1) {
        throw UsageError("grad_check: function must return a scalar, got " + shape_str(out.shape()));
    }
    out.backward();

    GradCheckReport report;
    for (auto [name, t] : params) {
        const std::vector<double> analytic = t.grad();
        std::span<double> values = t.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            double plus = 0.0;
            double minus = 0.0;
            {
                NoGradGuard guard;
                values[i] = orig + h;
                plus = f().item();
                values[i] = orig - h;
                minus = f().item();
            }
            values[i] = orig;
            const double numeric = (plus - minus) / (2.0 * h);
            if (!std::isfinite(numeric)) {
                throw NumericError("grad_check: non-finite central difference for " + name);
            }
            const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
            if (err > report.max_relative_error) {
                report.max_relative_error = err;
                report.worst_parameter = name + "[" + std::to_string(i) + "]";
            }
            ++report.checked;
        }
        t.zero_grad();
    }
    return report;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, const ParameterStore& params, double h) {
    return grad_check(f, params.all(), h);
}

} // namespace mga
