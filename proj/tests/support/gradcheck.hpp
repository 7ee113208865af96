#pragma once

// Central finite-difference gradient oracle used across the autodiff and
// model tests. The builder re-runs the full forward pass from the current
// parameter values, so it must be a pure function of those values (reseed any
// rng and reset any running stats inside the builder).

#include <functional>
#include <vector>

#include "bench/tensor.hpp"

namespace bench::testing {

using LossBuilder = std::function<TensorPtr(Tape&)>;

inline double loss_value(const LossBuilder& build) {
    Tape tape;
    return build(tape)->values[0];
}

// Returns the max relative error |analytic - fd| / max(1, |analytic|) over
// every element of every parameter.
inline double gradcheck(const std::vector<TensorPtr>& params, const LossBuilder& build,
                        double eps = 1e-5) {
    for (auto& p : params) p->zero_grad();
    Tape tape;
    auto loss = build(tape);
    tape.backward(loss);

    double worst = 0.0;
    for (auto& p : params) {
        p->ensure_grad();
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double saved = p->values[i];
            p->values[i] = saved + eps;
            const double up = loss_value(build);
            p->values[i] = saved - eps;
            const double down = loss_value(build);
            p->values[i] = saved;
            const double fd = (up - down) / (2.0 * eps);
            const double analytic = p->grad[i];
            const double rel =
                std::abs(analytic - fd) / std::max(1.0, std::abs(analytic));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

inline void fill_uniform(const TensorPtr& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t->values) v = u(rng);
}

}  // namespace bench::testing
