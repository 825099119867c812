#ifndef AULLMXX_MODEL_BACKBONE_HPP
#define AULLMXX_MODEL_BACKBONE_HPP

#include <string>
#include <vector>

#include "aullmxx/core/ops.hpp"
#include "aullmxx/core/ops_nn.hpp"
#include "aullmxx/core/params.hpp"
#include "aullmxx/data/types.hpp"

namespace aullmxx::model {

// Mid- and high-level spatio-temporal tensors from one forward pass, in the
// clip's own layout (T', C, H', W').
template <typename Real>
struct FeaturePyramid {
    Tensor<Real> f_mid;
    Tensor<Real> f_high;
};

// Packs clips into the internal [B, C, T, H, W] layout.
template <typename Real>
Tensor<Real> clip_batch_tensor(const std::vector<const data::MicroClip*>& clips) {
    if (clips.empty()) throw ShapeError("empty clip batch");
    const auto& first = *clips.front();
    const std::size_t B = clips.size(), T = first.t, C = first.c, H = first.h, W = first.w;
    Tensor<Real> out({B, C, T, H, W});
    for (std::size_t b = 0; b < B; ++b) {
        const auto& clip = *clips[b];
        if (clip.t != T || clip.c != C || clip.h != H || clip.w != W) {
            throw ShapeError("mixed clip shapes in one batch");
        }
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < C; ++c) {
                const float* src = clip.frames.data() + (t * C + c) * H * W;
                Real* dst = out.ptr() + (((b * C + c) * T + t) * H) * W;
                for (std::size_t i = 0; i < H * W; ++i) dst[i] = static_cast<Real>(src[i]);
            }
    }
    return out;
}

// Three conv-norm-relu-pool blocks at widths 16/32/64. The mid tap comes out
// of block 2 at (T/2, 32, H/4, W/4), the high tap out of block 3 at
// (T/2, 64, H/8, W/8). Odd sizes are replicate-padded up front.
template <typename Real>
class Backbone {
public:
    static constexpr std::size_t kWidth1 = 16;
    static constexpr std::size_t kWidth2 = 32;  // C1
    static constexpr std::size_t kWidth3 = 64;  // C2

    Backbone(ParamStore<Real>& ps, const std::string& prefix, std::size_t in_channels, Rng& rng)
        : in_channels_(in_channels) {
        auto conv_init = [&](std::size_t co, std::size_t ci) {
            const Real std = static_cast<Real>(std::sqrt(2.0 / (27.0 * static_cast<double>(ci))));
            return Tensor<Real>::randn({co, ci, 3, 3, 3}, rng, std);
        };
        auto block = [&](const std::string& name, std::size_t co, std::size_t ci) {
            Block b;
            // no conv bias: the normalization's shift parameter covers it
            b.w = ps.add(prefix + "." + name + ".w", conv_init(co, ci));
            b.gamma = ps.add(prefix + "." + name + ".norm.gamma", Tensor<Real>::full({co}, Real(1)));
            b.beta = ps.add(prefix + "." + name + ".norm.beta", Tensor<Real>({co}));
            b.running_mean = ps.add_buffer(prefix + "." + name + ".norm.running_mean",
                                           Tensor<Real>({co}));
            b.running_var = ps.add_buffer(prefix + "." + name + ".norm.running_var",
                                          Tensor<Real>::full({co}, Real(1)));
            return b;
        };
        b1_ = block("block1", kWidth1, in_channels);
        b2_ = block("block2", kWidth2, kWidth1);
        b3_ = block("block3", kWidth3, kWidth2);
    }

    struct Features {
        Var<Real> f_mid;   // [B, C1, T/2, H/4, W/4]
        Var<Real> f_high;  // [B, C2, T/2, H/8, W/8]
    };

    Features forward(const Var<Real>& x, bool training) {
        const auto& sh = x->value.shape();
        if (sh.size() != 5) throw ShapeError("backbone input must be [B, C, T, H, W]");
        if (sh[1] != in_channels_) throw ShapeError("backbone: channel count mismatch");
        if (sh[3] < 16 || sh[4] < 16) {
            throw ShapeError("backbone: spatial size below 16x16");
        }
        if (!x->value.all_finite()) throw InputError("backbone: non-finite input");

        const std::size_t T = sh[2], H = sh[3], W = sh[4];
        auto pad = [](std::size_t v, std::size_t m) { return (m - v % m) % m; };
        auto h = ops::replicate_pad3d(x, pad(T, 2), pad(H, 8), pad(W, 8));

        h = stage(h, b1_, training, 2, 2, 2);
        h = stage(h, b2_, training, 1, 2, 2);
        Features f;
        f.f_mid = h;
        f.f_high = stage(h, b3_, training, 1, 2, 2);
        return f;
    }

    // Single-clip convenience surface in the clip's layout; runs in eval mode.
    FeaturePyramid<Real> extract_features(const data::MicroClip& clip) {
        clip.validate();
        auto x = constant(clip_batch_tensor<Real>({&clip}));
        auto f = forward(x, /*training=*/false);
        return {to_clip_layout(f.f_mid->value), to_clip_layout(f.f_high->value)};
    }

private:
    struct Block {
        Var<Real> w, gamma, beta, running_mean, running_var;
    };

    Var<Real> stage(const Var<Real>& in, Block& blk, bool training, std::size_t pt, std::size_t ph,
                    std::size_t pw) {
        auto h = ops::conv3d(in, blk.w);
        h = ops::batch_norm_channels(h, blk.gamma, blk.beta, blk.running_mean->value,
                                     blk.running_var->value, training);
        h = ops::relu(h);
        return ops::avg_pool3d(h, pt, ph, pw);
    }

    // [1, C, T, H, W] -> [T, C, H, W]
    static Tensor<Real> to_clip_layout(const Tensor<Real>& v) {
        const std::size_t C = v.dim(1), T = v.dim(2), H = v.dim(3), W = v.dim(4);
        Tensor<Real> out({T, C, H, W});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < T; ++t) {
                const Real* src = v.ptr() + (c * T + t) * H * W;
                std::copy(src, src + H * W, out.ptr() + (t * C + c) * H * W);
            }
        return out;
    }

    std::size_t in_channels_;
    Block b1_, b2_, b3_;
};

}  // namespace aullmxx::model

#endif  // AULLMXX_MODEL_BACKBONE_HPP
