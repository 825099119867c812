#ifndef AULLMXX_MODEL_REASONER_HPP
#define AULLMXX_MODEL_REASONER_HPP

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "aullmxx/core/ops.hpp"
#include "aullmxx/core/ops_nn.hpp"
#include "aullmxx/core/params.hpp"
#include "aullmxx/data/types.hpp"

namespace aullmxx::model {

// Deterministic whitespace tokenizer over a frozen hash-bucketed embedding
// table. The prompt string is opaque; only stability matters.
template <typename Real>
class TextEmbedder {
public:
    static constexpr std::size_t kVocab = 4096;

    TextEmbedder(ParamStore<Real>& ps, const std::string& prefix, std::size_t width, Rng& rng)
        : width_(width) {
        const Real std = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(width)));
        table_ = ps.add(prefix + ".text_embed", Tensor<Real>::randn({kVocab, width}, rng, std),
                        /*trainable=*/false);
    }

    Tensor<Real> embed(const std::string& prompt) const {
        const auto tokens = data::SyntheticConfig::split_ws(prompt);
        if (tokens.empty()) throw InputError("empty prompt text");
        Tensor<Real> out({tokens.size(), width_});
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            const std::size_t bucket = fnv1a64(tokens[i]) % kVocab;
            const Real* src = table_->value.ptr() + bucket * width_;
            std::copy(src, src + width_, out.ptr() + i * width_);
        }
        return out;
    }

private:
    std::size_t width_;
    Var<Real> table_;
};

template <typename Real>
struct PromptBundle {
    Var<Real> assembled;  // [B, L_text + 1 + N, D]
    std::size_t l_text{0};
    std::size_t n_instruction{0};
};

// E_in = [E_text || T_v || tau_au]; tau may be absent under the no-graph
// ablation.
template <typename Real>
PromptBundle<Real> assemble_prompt(const Tensor<Real>& e_text, const Var<Real>& t_v,
                                   const Var<Real>& tau = nullptr) {
    if (e_text.rank() != 2 || e_text.dim(0) == 0) throw InputError("assemble_prompt: empty text block");
    const std::size_t D = e_text.dim(1);
    if (t_v->value.rank() != 2 || t_v->value.dim(1) != D) {
        throw ShapeError("assemble_prompt: content token width mismatch");
    }
    const std::size_t B = t_v->value.dim(0);
    std::vector<Var<Real>> parts{ops::tile_batch(e_text, B),
                                 ops::reshape(t_v, {B, std::size_t{1}, D})};
    PromptBundle<Real> bundle;
    bundle.l_text = e_text.dim(0);
    if (tau) {
        if (tau->value.rank() != 3 || tau->value.dim(0) != B || tau->value.dim(2) != D) {
            throw ShapeError("assemble_prompt: instruction token shape mismatch");
        }
        bundle.n_instruction = tau->value.dim(1);
        parts.push_back(tau);
    }
    bundle.assembled = ops::concat_seq(parts);
    return bundle;
}

// Trainable-parameter count of a rank-r adapter set.
inline std::size_t lora_param_count(std::size_t rank,
                                    const std::vector<std::pair<std::size_t, std::size_t>>& shapes) {
    if (rank < 1) throw ConfigError("lora rank must be >= 1");
    std::size_t total = 0;
    for (const auto& [dout, din] : shapes) total += rank * (dout + din);
    return total;
}

// Anything that maps an assembled prompt to the final hidden state can sit
// behind this seam, including a full-scale external model.
template <typename Real>
class ReasonerBackend {
public:
    virtual ~ReasonerBackend() = default;
    virtual Var<Real> forward(const Var<Real>& assembled) = 0;
    virtual std::size_t width() const = 0;
};

// Stand-in reasoning engine: a small causal transformer with frozen base
// weights; the adapters on the attention query/value projections are the only
// trainable surface inside.
template <typename Real>
class TransformerBackend final : public ReasonerBackend<Real> {
public:
    struct Settings {
        std::size_t width{64};
        std::size_t layers{2};
        std::size_t heads{4};
        std::size_t lora_rank{4};
        double lora_alpha{8.0};
    };

    TransformerBackend(ParamStore<Real>& ps, const std::string& prefix, Settings s, Rng& rng)
        : s_(s) {
        if (s.width % s.heads) throw ConfigError("backend width must divide by head count");
        const Real std = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(s.width)));
        const Real ffn_std = static_cast<Real>(1.0 / std::sqrt(4.0 * static_cast<double>(s.width)));
        const Real a_std = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(s.lora_rank)));
        layers_.resize(s.layers);
        for (std::size_t l = 0; l < s.layers; ++l) {
            const std::string base = prefix + ".base.l" + std::to_string(l);
            auto& L = layers_[l];
            auto frozen = [&](const std::string& name, Tensor<Real> t) {
                return ps.add(base + name, std::move(t), /*trainable=*/false);
            };
            L.ln1_g = frozen(".ln1.g", Tensor<Real>::full({s.width}, Real(1)));
            L.ln1_b = frozen(".ln1.b", Tensor<Real>({s.width}));
            L.wq = frozen(".attn.wq", Tensor<Real>::randn({s.width, s.width}, rng, std));
            L.bq = frozen(".attn.bq", Tensor<Real>({s.width}));
            L.wk = frozen(".attn.wk", Tensor<Real>::randn({s.width, s.width}, rng, std));
            L.bk = frozen(".attn.bk", Tensor<Real>({s.width}));
            L.wv = frozen(".attn.wv", Tensor<Real>::randn({s.width, s.width}, rng, std));
            L.bv = frozen(".attn.bv", Tensor<Real>({s.width}));
            L.wo = frozen(".attn.wo", Tensor<Real>::randn({s.width, s.width}, rng, std));
            L.bo = frozen(".attn.bo", Tensor<Real>({s.width}));
            L.ln2_g = frozen(".ln2.g", Tensor<Real>::full({s.width}, Real(1)));
            L.ln2_b = frozen(".ln2.b", Tensor<Real>({s.width}));
            L.ffn_w1 = frozen(".ffn.w1", Tensor<Real>::randn({4 * s.width, s.width}, rng, std));
            L.ffn_b1 = frozen(".ffn.b1", Tensor<Real>({4 * s.width}));
            L.ffn_w2 = frozen(".ffn.w2", Tensor<Real>::randn({s.width, 4 * s.width}, rng, ffn_std));
            L.ffn_b2 = frozen(".ffn.b2", Tensor<Real>({s.width}));

            const std::string lora = prefix + ".lora.l" + std::to_string(l);
            // B starts at zero: the adapter is a no-op until trained.
            L.q_a = ps.add(lora + ".q.a", Tensor<Real>::randn({s.lora_rank, s.width}, rng, a_std));
            L.q_b = ps.add(lora + ".q.b", Tensor<Real>({s.width, s.lora_rank}));
            L.v_a = ps.add(lora + ".v.a", Tensor<Real>::randn({s.lora_rank, s.width}, rng, a_std));
            L.v_b = ps.add(lora + ".v.b", Tensor<Real>({s.width, s.lora_rank}));
        }
        final_ln_g_ = ps.add(prefix + ".base.final_ln.g", Tensor<Real>::full({s.width}, Real(1)),
                             false);
        final_ln_b_ = ps.add(prefix + ".base.final_ln.b", Tensor<Real>({s.width}), false);
    }

    bool lora_enabled{true};

    std::size_t width() const override { return s_.width; }

    // h_out is the last position of the final layer (the autoregressive pass
    // ends there).
    Var<Real> forward(const Var<Real>& assembled) override {
        const std::size_t L = assembled->value.dim(1);
        if (L == 0) throw ShapeError("backend: empty sequence");
        if (assembled->value.dim(2) != s_.width) throw ShapeError("backend: width mismatch");
        auto x = ops::add_seq_const(assembled, positional_encoding(L));
        const Real scale = static_cast<Real>(s_.lora_alpha / static_cast<double>(s_.lora_rank));
        for (auto& lay : layers_) {
            auto xn = ops::layer_norm(x, lay.ln1_g, lay.ln1_b);
            auto q = ops::linear(xn, lay.wq, lay.bq);
            auto v = ops::linear(xn, lay.wv, lay.bv);
            if (lora_enabled) {
                q = ops::add(q, ops::affine(ops::linear(ops::linear(xn, lay.q_a), lay.q_b), scale,
                                            Real(0)));
                v = ops::add(v, ops::affine(ops::linear(ops::linear(xn, lay.v_a), lay.v_b), scale,
                                            Real(0)));
            }
            auto k = ops::linear(xn, lay.wk, lay.bk);
            const std::size_t dh = s_.width / s_.heads;
            auto qh = ops::heads_split(q, s_.heads);
            auto kh = ops::heads_split(k, s_.heads);
            auto vh = ops::heads_split(v, s_.heads);
            auto scores = ops::affine(ops::bmm(qh, ops::transpose_last2(kh)),
                                      static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh))),
                                      Real(0));
            auto ctx = ops::heads_merge(ops::bmm(ops::softmax_last(scores, /*causal=*/true), vh),
                                        s_.heads);
            x = ops::add(x, ops::linear(ctx, lay.wo, lay.bo));
            auto x2 = ops::layer_norm(x, lay.ln2_g, lay.ln2_b);
            auto ffn = ops::linear(ops::gelu(ops::linear(x2, lay.ffn_w1, lay.ffn_b1)), lay.ffn_w2,
                                   lay.ffn_b2);
            x = ops::add(x, ffn);
        }
        x = ops::layer_norm(x, final_ln_g_, final_ln_b_);
        return ops::select_seq(x, L - 1);
    }

    static std::vector<std::pair<std::size_t, std::size_t>> adapted_shapes(std::size_t width,
                                                                           std::size_t layers) {
        std::vector<std::pair<std::size_t, std::size_t>> shapes;
        for (std::size_t l = 0; l < layers; ++l) {
            shapes.emplace_back(width, width);  // q
            shapes.emplace_back(width, width);  // v
        }
        return shapes;
    }

private:
    Tensor<Real> positional_encoding(std::size_t L) const {
        Tensor<Real> pe({L, s_.width});
        for (std::size_t pos = 0; pos < L; ++pos) {
            for (std::size_t i = 0; i < s_.width / 2; ++i) {
                const double freq =
                    std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(s_.width));
                pe[pos * s_.width + 2 * i] = static_cast<Real>(std::sin(pos * freq));
                pe[pos * s_.width + 2 * i + 1] = static_cast<Real>(std::cos(pos * freq));
            }
        }
        return pe;
    }

    struct Layer {
        Var<Real> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        Var<Real> ln2_g, ln2_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
        Var<Real> q_a, q_b, v_a, v_b;
    };

    Settings s_;
    std::vector<Layer> layers_;
    Var<Real> final_ln_g_, final_ln_b_;
};

// y_hat = sigmoid(W_cls h_out + b_cls)
template <typename Real>
class ClassifierHead {
public:
    ClassifierHead(ParamStore<Real>& ps, const std::string& prefix, std::size_t n,
                   std::size_t d_in, Rng& rng) {
        const Real std = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d_in)));
        w_ = ps.add(prefix + ".w", Tensor<Real>::randn({n, d_in}, rng, std));
        b_ = ps.add(prefix + ".b", Tensor<Real>({n}));
    }

    Var<Real> logits(const Var<Real>& h) const {
        if (!h->value.all_finite()) throw InputError("classify: non-finite input");
        return ops::linear(h, w_, b_);
    }

    Var<Real> probabilities(const Var<Real>& logit_var) const { return ops::sigmoid(logit_var); }

private:
    Var<Real> w_, b_;
};

}  // namespace aullmxx::model

#endif  // AULLMXX_MODEL_REASONER_HPP
