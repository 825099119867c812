#ifndef AULLMXX_CORE_GRADCHECK_HPP
#define AULLMXX_CORE_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "aullmxx/core/autograd.hpp"
#include "aullmxx/core/rng.hpp"

namespace aullmxx {

struct GradCheckReport {
    double max_rel_err{0.0};
    std::size_t checked{0};
    std::string worst_param;
    std::size_t worst_index{0};
    double worst_analytic{0.0};
    double worst_numeric{0.0};

    bool passes(double tol) const { return max_rel_err < tol; }
};

// Central finite-difference check of analytic gradients. `make_loss` rebuilds
// the full forward graph from the current parameter values and returns a
// scalar; run at Real = double.
template <typename Real>
GradCheckReport gradcheck(const std::function<Var<Real>()>& make_loss,
                          const std::vector<Var<Real>>& params, std::size_t samples_per_param,
                          Rng& rng, double step = 1e-5) {
    GradCheckReport report;

    auto loss = make_loss();
    for (const auto& p : params) p->zero_grad();
    backward(loss);

    std::vector<Tensor<Real>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        analytic.push_back(p->grad_alloc ? p->grad : Tensor<Real>(p->value.shape()));
    }

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto& p = params[pi];
        const std::size_t n = p->value.size();
        std::vector<std::size_t> picks;
        if (n <= samples_per_param) {
            for (std::size_t i = 0; i < n; ++i) picks.push_back(i);
        } else {
            for (std::size_t s = 0; s < samples_per_param; ++s) picks.push_back(rng.index(n));
        }
        for (std::size_t idx : picks) {
            const Real saved = p->value[idx];
            const double h = step * std::max(1.0, std::abs(static_cast<double>(saved)));
            p->value[idx] = saved + static_cast<Real>(h);
            const double lp = static_cast<double>(make_loss()->value.item());
            p->value[idx] = saved - static_cast<Real>(h);
            const double lm = static_cast<double>(make_loss()->value.item());
            p->value[idx] = saved;

            const double numeric = (lp - lm) / (2.0 * h);
            const double an = static_cast<double>(analytic[pi][idx]);
            const double scale = std::max({std::abs(numeric), std::abs(an), 1e-6});
            const double rel = std::abs(numeric - an) / scale;
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p->name.empty() ? ("param" + std::to_string(pi)) : p->name;
                report.worst_index = idx;
                report.worst_analytic = an;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace aullmxx

#endif  // AULLMXX_CORE_GRADCHECK_HPP
