#ifndef AULLMXX_MODEL_PIPELINE_HPP
#define AULLMXX_MODEL_PIPELINE_HPP

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "aullmxx/data/types.hpp"
#include "aullmxx/model/backbone.hpp"
#include "aullmxx/model/mge_efp.hpp"
#include "aullmxx/model/r_augnn.hpp"
#include "aullmxx/model/reasoner.hpp"
#include "aullmxx/train/train_config.hpp"

namespace aullmxx::model {

// The assembled detection pipeline. One instance owns every parameter and the
// train/eval mode flag; the reasoning backend sits behind a swappable seam.
template <typename Real>
class Model {
public:
    Model(train::TrainConfig cfg, std::vector<std::string> au_names, std::size_t in_channels = 1)
        : cfg_(std::move(cfg)), au_names_(std::move(au_names)) {
        cfg_.validate();
        n_ = au_names_.size();
        if (n_ == 0) throw ConfigError("model needs at least one AU class");

        // Per-module seed forks keep initialization independent of which
        // optional modules exist, so ablation variants share weights.
        Rng rng_backbone(fork_seed(cfg_.seed, "init.backbone"));
        Rng rng_efp(fork_seed(cfg_.seed, "init.mge_efp"));
        Rng rng_graph(fork_seed(cfg_.seed, "init.r_augnn"));
        Rng rng_text(fork_seed(cfg_.seed, "init.text"));
        Rng rng_backend(fork_seed(cfg_.seed, "init.reasoner"));
        Rng rng_head(fork_seed(cfg_.seed, "init.head"));

        const std::size_t D = cfg_.reasoner_width;
        backbone_.emplace(store_, "backbone", in_channels, rng_backbone);
        efp_.emplace(store_, "mge_efp", Backbone<Real>::kWidth2, Backbone<Real>::kWidth3, D,
                     rng_efp);
        if (!cfg_.no_r_augnn) {
            raugnn_.emplace(store_, "r_augnn", n_, Backbone<Real>::kWidth3, cfg_.node_dim, D,
                            cfg_.graph_layers, cfg_.alpha_init, rng_graph);
            auto rules = cfg_.rules;
            if (!cfg_.rules_explicit) {
                // built-in defaults: keep only pairs the AU inventory covers
                std::erase_if(rules, [&](const AuRule& r) {
                    return !data::SyntheticConfig::contains(au_names_, r.a) ||
                           !data::SyntheticConfig::contains(au_names_, r.b);
                });
            }
            prior_graph_ = build_prior_graph(au_names_, rules,
                                             cfg_.rules_explicit ? "rule file" : "built-in default");
            prior_real_ = prior_matrix_for_mode(prior_graph_, cfg_.graph_mode).template cast<Real>();
        }
        embedder_.emplace(store_, "reasoner", D, rng_text);
        e_text_ = embedder_->embed(cfg_.prompt_text);

        if (cfg_.head_mode == train::HeadMode::llm) {
            typename TransformerBackend<Real>::Settings bs;
            bs.width = D;
            bs.layers = cfg_.reasoner_layers;
            bs.heads = cfg_.reasoner_heads;
            bs.lora_rank = cfg_.lora_rank;
            bs.lora_alpha = cfg_.lora_alpha;
            transformer_ = std::make_shared<TransformerBackend<Real>>(store_, "reasoner", bs,
                                                                      rng_backend);
            backend_ = transformer_;
            head_.emplace(store_, "reasoner.head", n_, D, rng_head);
        } else {
            // Ablation head: a two-layer perceptron over [T_v || mean(tau)].
            const Real std1 = static_cast<Real>(1.0 / std::sqrt(2.0 * static_cast<double>(D)));
            const Real std2 = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(D)));
            mlp_w1_ = store_.add("mlp_head.w1", Tensor<Real>::randn({D, 2 * D}, rng_head, std1));
            mlp_b1_ = store_.add("mlp_head.b1", Tensor<Real>({D}));
            mlp_w2_ = store_.add("mlp_head.w2", Tensor<Real>::randn({n_, D}, rng_head, std2));
            mlp_b2_ = store_.add("mlp_head.b2", Tensor<Real>({n_}));
        }
        delta_ = store_.add("ccr.delta", Tensor<Real>({n_, D}));
    }

    ParamStore<Real>& params() { return store_; }
    const ParamStore<Real>& params() const { return store_; }
    const train::TrainConfig& config() const { return cfg_; }
    const std::vector<std::string>& au_names() const { return au_names_; }
    std::size_t num_aus() const { return n_; }

    void set_training(bool training) { training_ = training; }
    bool training() const { return training_; }

    // Backend seam: anything mapping the assembled prompt to a width-D hidden
    // state can replace the stand-in.
    void set_backend(std::shared_ptr<ReasonerBackend<Real>> backend) {
        if (cfg_.head_mode != train::HeadMode::llm) {
            throw StateError("backend seam only exists under the llm head");
        }
        backend_ = std::move(backend);
    }

    std::shared_ptr<TransformerBackend<Real>> standin_backend() { return transformer_; }
    MgeEfp<Real>& efp() { return *efp_; }
    RAugnn<Real>& relation_graph() {
        if (!raugnn_) throw StateError("relation graph disabled by configuration");
        return *raugnn_;
    }
    Backbone<Real>& backbone() { return *backbone_; }
    Var<Real> delta() { return delta_; }
    const Tensor<Real>& prior_matrix() const { return prior_real_; }
    const Tensor<Real>& text_embeddings() const { return e_text_; }

    struct Forward {
        Var<Real> input;
        Var<Real> f_mid, f_high;
        Var<Real> t_v;
        Var<Real> h0, a_dynamic, a_hat, tau;  // null when the graph is ablated
        Var<Real> h_out;                      // null under the mlp head
        Var<Real> logits, y_hat;
        std::size_t prompt_length{0};
        std::size_t batch{0};
    };

    Forward forward_clips(const std::vector<const data::MicroClip*>& clips,
                          bool want_input_grad = false) {
        Forward fw;
        fw.batch = clips.size();
        fw.input = make_leaf(clip_batch_tensor<Real>(clips), want_input_grad);
        run_forward(fw);
        return fw;
    }

    Forward forward_tensor(Tensor<Real> batch_input, bool want_input_grad = false) {
        Forward fw;
        fw.batch = batch_input.dim(0);
        fw.input = make_leaf(std::move(batch_input), want_input_grad);
        run_forward(fw);
        return fw;
    }

    struct Counterfactual {
        Var<Real> y_cf;
        Var<Real> tau_cf;
    };

    // Phase-2 pass: perturb instruction token k with delta_k on top of the
    // cached (detached) intermediates, re-run backend and head only.
    Counterfactual counterfactual(const Forward& fw, std::size_t k) {
        if (!training_) throw StateError("counterfactual pass is training-only");
        if (!cfg_.ccr_enabled) throw StateError("counterfactual pass with CCR disabled");
        if (!fw.tau || !backend_) {
            throw StateError("counterfactual pass needs instruction tokens and a backend");
        }
        if (k >= n_) throw ShapeError("counterfactual target index out of range");
        Counterfactual cf;
        cf.tau_cf = ops::add_to_row(detach(fw.tau), k, ops::select_row2d(delta_, k));
        auto bundle = assemble_prompt(e_text_, detach(fw.t_v), cf.tau_cf);
        auto h = backend_->forward(bundle.assembled);
        cf.y_cf = ops::sigmoid(head_->logits(h));
        return cf;
    }

    Var<Real> counterfactual_probs(const Forward& fw, std::size_t k) {
        return counterfactual(fw, k).y_cf;
    }

    // Eval-mode single-clip prediction.
    std::vector<double> infer_probs(const data::MicroClip& clip) {
        if (training_) throw StateError("inference requires eval mode");
        auto fw = forward_clips({&clip});
        std::vector<double> out(n_);
        for (std::size_t i = 0; i < n_; ++i) out[i] = static_cast<double>(fw.y_hat->value[i]);
        return out;
    }

    // Ties at exactly 0.5 map to positive.
    static std::vector<std::uint8_t> threshold(const std::vector<double>& probs) {
        std::vector<std::uint8_t> out(probs.size());
        for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= 0.5 ? 1 : 0;
        return out;
    }

private:
    void run_forward(Forward& fw) {
        auto features = backbone_->forward(fw.input, training_);
        fw.f_mid = features.f_mid;
        fw.f_high = features.f_high;
        fw.t_v = efp_->content_token(fw.f_mid, fw.f_high, cfg_.fusion_mode);

        if (raugnn_) {
            auto g = raugnn_->instruction_tokens(fw.f_high, prior_real_);
            fw.h0 = g.h0;
            fw.a_dynamic = g.a_dynamic;
            fw.a_hat = g.a_hat;
            fw.tau = g.tau;
        }

        if (cfg_.head_mode == train::HeadMode::llm) {
            auto bundle = assemble_prompt(e_text_, fw.t_v, fw.tau);
            fw.prompt_length = bundle.assembled->value.dim(1);
            fw.h_out = backend_->forward(bundle.assembled);
            fw.logits = head_->logits(fw.h_out);
        } else {
            auto tau_summary = fw.tau
                                   ? ops::mean_rows(fw.tau)
                                   : constant(Tensor<Real>({fw.batch, cfg_.reasoner_width}));
            auto feat = ops::concat_feat(fw.t_v, tau_summary);
            auto hidden = ops::relu(ops::linear(feat, mlp_w1_, mlp_b1_));
            fw.logits = ops::linear(hidden, mlp_w2_, mlp_b2_);
        }
        fw.y_hat = ops::sigmoid(fw.logits);
    }

    train::TrainConfig cfg_;
    std::vector<std::string> au_names_;
    std::size_t n_{0};
    bool training_{true};

    ParamStore<Real> store_;
    std::optional<Backbone<Real>> backbone_;
    std::optional<MgeEfp<Real>> efp_;
    std::optional<RAugnn<Real>> raugnn_;
    std::optional<TextEmbedder<Real>> embedder_;
    std::optional<ClassifierHead<Real>> head_;
    std::shared_ptr<TransformerBackend<Real>> transformer_;
    std::shared_ptr<ReasonerBackend<Real>> backend_;
    Var<Real> mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
    Var<Real> delta_;
    PriorGraph prior_graph_;
    Tensor<Real> prior_real_;
    Tensor<Real> e_text_;
};

}  // namespace aullmxx::model

#endif  // AULLMXX_MODEL_PIPELINE_HPP
