#pragma once

#include <cmath>
#include <limits>

#include "poems/optim.hpp"

namespace poems {

/// Compares the analytic gradients stored in `params[i].grad` against central
/// finite differences of `loss_fn` (which must be deterministic and read the
/// parameters through the same ParamSet). Returns the max relative error;
/// non-finite comparisons come back as +inf.
template <typename LossFn>
double finite_diff_check(LossFn&& loss_fn, ParamSet& params, double step = 1e-5) {
    double worst = 0.0;
    for (auto& p : params) {
        Matrix& theta = *p.value;
        const Matrix& analytic = *p.grad;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double saved = theta.data[i];
            theta.data[i] = saved + step;
            const double up = loss_fn();
            theta.data[i] = saved - step;
            const double down = loss_fn();
            theta.data[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic.data[i];
            if (!std::isfinite(numeric) || !std::isfinite(a))
                return std::numeric_limits<double>::infinity();
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

} // namespace poems
