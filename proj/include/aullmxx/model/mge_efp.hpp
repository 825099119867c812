#ifndef AULLMXX_MODEL_MGE_EFP_HPP
#define AULLMXX_MODEL_MGE_EFP_HPP

#include <string>

#include "aullmxx/core/ops.hpp"
#include "aullmxx/core/ops_nn.hpp"
#include "aullmxx/core/params.hpp"

namespace aullmxx::model {

enum class FusionMode { full, mid_only, high_only, linear_proj };

inline FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "full") return FusionMode::full;
    if (s == "mid_only") return FusionMode::mid_only;
    if (s == "high_only") return FusionMode::high_only;
    if (s == "linear_proj") return FusionMode::linear_proj;
    throw ConfigError("unknown fusion mode: " + s);
}

// High-frequency excitation of the mid features, cross-channel gated fusion
// with the high features, and projection to the single content token.
template <typename Real>
class MgeEfp {
public:
    MgeEfp(ParamStore<Real>& ps, const std::string& prefix, std::size_t c1, std::size_t c2,
           std::size_t d, Rng& rng)
        : c1_(c1), c2_(c2), d_(d) {
        gamma_ = ps.add(prefix + ".gamma", Tensor<Real>::scalar(Real(0.1)));
        const Real a_std = static_cast<Real>(std::sqrt(2.0 / static_cast<double>(c1)));
        align_w_ = ps.add(prefix + ".align.w", Tensor<Real>::randn({c2, c1}, rng, a_std));
        align_b_ = ps.add(prefix + ".align.b", Tensor<Real>({c2}));
        const Real g_std = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(c2)));
        gate_w1_ = ps.add(prefix + ".gate.w1", Tensor<Real>::randn({c2, c2}, rng, g_std));
        gate_w2_ = ps.add(prefix + ".gate.w2", Tensor<Real>::randn({c2, c2}, rng, g_std));
        gate_b_ = ps.add(prefix + ".gate.b", Tensor<Real>({c2}));
        proj_w_ = ps.add(prefix + ".proj.w", Tensor<Real>::randn({d, c2}, rng, g_std));
    }

    // F_hf = F_mid + gamma * laplacian(F_mid)
    Var<Real> laplacian_enhance(const Var<Real>& f_mid) const {
        if (!f_mid->value.all_finite()) throw InputError("laplacian_enhance: non-finite input");
        return ops::add(f_mid, ops::scale_by(ops::laplacian5(f_mid), gamma_));
    }

    // Average-pool by 2 spatially, then project channels C1 -> C2.
    Var<Real> align(const Var<Real>& f_hf) const {
        return ops::conv1x1(ops::avg_pool3d(f_hf, 1, 2, 2), align_w_, align_b_);
    }

    // G = sigmoid(Wg1 * f_hf_aligned + Wg2 * f_high + b_g); 1x1x1 kernels keep
    // the gate purely cross-channel.
    Var<Real> gate(const Var<Real>& f_hf_aligned, const Var<Real>& f_high) const {
        if (!f_hf_aligned->value.same_shape(f_high->value)) {
            throw ShapeError("gated_fuse: aligned shape " + f_hf_aligned->value.shape_str() +
                             " vs high " + f_high->value.shape_str());
        }
        auto pre = ops::add(ops::conv1x1(f_hf_aligned, gate_w1_), ops::conv1x1(f_high, gate_w2_));
        return ops::sigmoid(ops::add_channel_bias(pre, gate_b_));
    }

    // F_fused = G (.) f_hf + (1 - G) (.) f_high
    static Var<Real> fuse(const Var<Real>& g, const Var<Real>& f_hf_aligned,
                          const Var<Real>& f_high) {
        return ops::add(ops::mul(g, f_hf_aligned),
                        ops::mul(ops::affine(g, Real(-1), Real(1)), f_high));
    }

    Var<Real> gated_fuse(const Var<Real>& f_hf_aligned, const Var<Real>& f_high) const {
        return fuse(gate(f_hf_aligned, f_high), f_hf_aligned, f_high);
    }

    // T_v = ReLU(GlobalAvgPool(F_fused) W_proj); no bias.
    Var<Real> project_content_token(const Var<Real>& f_fused) const {
        if (!f_fused->value.all_finite()) throw InputError("project_content_token: non-finite input");
        return ops::relu(ops::linear(ops::global_avg_pool(f_fused), proj_w_));
    }

    // Full path with the ablation switches. mid_only / high_only hard-set the
    // gate; linear_proj bypasses enhancement and fusion entirely.
    Var<Real> content_token(const Var<Real>& f_mid, const Var<Real>& f_high,
                            FusionMode mode = FusionMode::full) const {
        switch (mode) {
            case FusionMode::linear_proj:
                return project_content_token(f_high);
            case FusionMode::high_only:
                return project_content_token(f_high);
            case FusionMode::mid_only:
                return project_content_token(align(laplacian_enhance(f_mid)));
            case FusionMode::full:
            default: {
                auto aligned = align(laplacian_enhance(f_mid));
                return project_content_token(gated_fuse(aligned, f_high));
            }
        }
    }

    Var<Real> gamma_var() const { return gamma_; }
    Var<Real> gate_bias() const { return gate_b_; }
    Var<Real> proj() const { return proj_w_; }

private:
    std::size_t c1_, c2_, d_;
    Var<Real> gamma_, align_w_, align_b_, gate_w1_, gate_w2_, gate_b_, proj_w_;
};

}  // namespace aullmxx::model

#endif  // AULLMXX_MODEL_MGE_EFP_HPP
