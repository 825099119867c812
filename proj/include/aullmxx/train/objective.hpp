#ifndef AULLMXX_TRAIN_OBJECTIVE_HPP
#define AULLMXX_TRAIN_OBJECTIVE_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "aullmxx/core/error.hpp"
#include "aullmxx/core/tensor.hpp"

namespace aullmxx::train {

inline constexpr double kProbClamp = 1e-7;

enum class CcrTargetMode { all, sample };

inline CcrTargetMode ccr_target_mode_from_string(const std::string& s) {
    if (s == "all") return CcrTargetMode::all;
    if (s == "sample") return CcrTargetMode::sample;
    throw ConfigError("unknown ccr target mode: " + s);
}

// Loss-term coefficients plus the learnable per-AU perturbation matrix. The
// live delta tensor is registered as `ccr.delta`; this plain copy backs the
// scalar-level loss surface.
struct CcrConfig {
    double lambda_inv{1.0};
    double lambda_delta{0.01};
    double lambda_ccr{0.1};
    CcrTargetMode target_mode{CcrTargetMode::sample};
    Tensor<double> delta;  // N x D

    void validate() const {
        if (lambda_inv < 0 || lambda_delta < 0 || lambda_ccr < 0) {
            throw ConfigError("CCR coefficients must be nonnegative");
        }
        if (!delta.data().empty() && !delta.all_finite()) {
            throw InputError("CCR delta contains non-finite entries");
        }
    }
};

inline double clamp_probability(double p) {
    return p < kProbClamp ? kProbClamp : (p > 1.0 - kProbClamp ? 1.0 - kProbClamp : p);
}

// Mean over classes of the standard binary cross-entropy.
inline double bce_loss(std::span<const double> y_hat, std::span<const double> y) {
    if (y_hat.size() != y.size()) throw ShapeError("bce_loss: length mismatch");
    if (y_hat.empty()) throw ShapeError("bce_loss: empty vectors");
    double acc = 0.0;
    for (std::size_t i = 0; i < y_hat.size(); ++i) {
        const double p = clamp_probability(y_hat[i]);
        acc -= y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
    }
    return acc / static_cast<double>(y_hat.size());
}

// KL between Bernoulli(p) and Bernoulli(q).
inline double bernoulli_kl(double p, double q) {
    p = clamp_probability(p);
    q = clamp_probability(q);
    return p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
}

inline double delta_row_norm(const Tensor<double>& delta, std::size_t k) {
    const std::size_t d = delta.dim(1);
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double v = delta[k * d + i];
        acc += v * v;
    }
    return std::sqrt(acc);
}

// L_ccr = BCE(y_cf_k, 1 - y_k) + lambda_inv * sum_{j!=k} KL(y_j || y_cf_j)
//       + lambda_delta * ||delta_k||_2
inline double ccr_loss(std::span<const double> y_hat, std::span<const double> y_hat_cf,
                       std::span<const double> y, std::size_t k, const CcrConfig& cfg) {
    const std::size_t n = y_hat.size();
    if (y_hat_cf.size() != n || y.size() != n) throw ShapeError("ccr_loss: length mismatch");
    if (k >= n) throw ShapeError("ccr_loss: target index out of range");
    const double flip_target = 1.0 - y[k];
    const double qk = clamp_probability(y_hat_cf[k]);
    double loss = -(flip_target * std::log(qk) + (1.0 - flip_target) * std::log(1.0 - qk));
    for (std::size_t j = 0; j < n; ++j) {
        if (j != k) loss += cfg.lambda_inv * bernoulli_kl(y_hat[j], y_hat_cf[j]);
    }
    if (cfg.delta.size() > 0) {
        loss += cfg.lambda_delta * delta_row_norm(cfg.delta, k);
    }
    return loss;
}

// L_total = L_cls + lambda_ccr * L_ccr
inline double total_loss(double l_cls, double l_ccr, double lambda_ccr) {
    if (!std::isfinite(l_cls) || !std::isfinite(l_ccr)) {
        throw InputError("total_loss: non-finite term");
    }
    return l_cls + lambda_ccr * l_ccr;
}

}  // namespace aullmxx::train

#endif  // AULLMXX_TRAIN_OBJECTIVE_HPP
