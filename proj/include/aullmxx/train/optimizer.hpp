#ifndef AULLMXX_TRAIN_OPTIMIZER_HPP
#define AULLMXX_TRAIN_OPTIMIZER_HPP

#include <cmath>
#include <vector>

#include "aullmxx/core/autograd.hpp"

namespace aullmxx::train {

// Adaptive-moment optimizer with decoupled weight decay and per-group
// learning rates. Only parameters placed in a group ever move.
template <typename Real>
class AdamW {
public:
    struct Group {
        std::vector<Var<Real>> params;
        Real lr{Real(1e-3)};
    };

    AdamW(std::vector<Group> groups, Real weight_decay, Real beta1 = Real(0.9),
          Real beta2 = Real(0.999), Real eps = Real(1e-8))
        : groups_(std::move(groups)), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
        for (const auto& g : groups_) {
            std::vector<Tensor<Real>> m, v;
            for (const auto& p : g.params) {
                m.emplace_back(p->value.shape());
                v.emplace_back(p->value.shape());
            }
            m_.push_back(std::move(m));
            v_.push_back(std::move(v));
        }
    }

    void step() {
        ++t_;
        const Real bc1 = Real(1) - static_cast<Real>(std::pow(static_cast<double>(b1_), t_));
        const Real bc2 = Real(1) - static_cast<Real>(std::pow(static_cast<double>(b2_), t_));
        for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
            auto& g = groups_[gi];
            for (std::size_t pi = 0; pi < g.params.size(); ++pi) {
                auto& p = g.params[pi];
                auto& m = m_[gi][pi];
                auto& v = v_[gi][pi];
                const bool has_grad = p->grad_alloc;
                for (std::size_t i = 0; i < p->value.size(); ++i) {
                    const Real grad = has_grad ? p->grad[i] : Real(0);
                    m[i] = b1_ * m[i] + (Real(1) - b1_) * grad;
                    v[i] = b2_ * v[i] + (Real(1) - b2_) * grad * grad;
                    const Real mhat = m[i] / bc1;
                    const Real vhat = v[i] / bc2;
                    p->value[i] -=
                        g.lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p->value[i]);
                }
            }
        }
    }

    std::size_t step_count() const { return t_; }

private:
    std::vector<Group> groups_;
    std::vector<std::vector<Tensor<Real>>> m_, v_;
    Real wd_, b1_, b2_, eps_;
    std::size_t t_{0};
};

}  // namespace aullmxx::train

#endif  // AULLMXX_TRAIN_OPTIMIZER_HPP
