#ifndef AULLMXX_TRAIN_TRAINER_HPP
#define AULLMXX_TRAIN_TRAINER_HPP

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "aullmxx/core/checkpoint.hpp"
#include "aullmxx/data/manifest.hpp"
#include "aullmxx/model/pipeline.hpp"
#include "aullmxx/train/optimizer.hpp"
#include "aullmxx/train/train_config.hpp"

namespace aullmxx::train {

template <typename Real>
Tensor<Real> labels_tensor(const std::vector<const data::SampleRecord*>& records) {
    if (records.empty()) throw ShapeError("labels_tensor: empty batch");
    const std::size_t B = records.size(), N = records[0]->labels.size();
    Tensor<Real> out({B, N});
    for (std::size_t b = 0; b < B; ++b) {
        if (records[b]->labels.size() != N) throw ShapeError("labels_tensor: ragged labels");
        for (std::size_t j = 0; j < N; ++j) out[b * N + j] = static_cast<Real>(records[b]->labels[j]);
    }
    return out;
}

// CCR is only meaningful when instruction tokens and the reasoning backend
// both exist; the no-graph and mlp-head ablations train on the plain
// classification loss.
inline bool ccr_active(const TrainConfig& cfg) {
    return cfg.ccr_enabled && !cfg.no_r_augnn && cfg.head_mode == HeadMode::llm;
}

template <typename Real>
class Trainer {
public:
    explicit Trainer(model::Model<Real>& m) : model_(m), opt_(make_groups(m), make_wd(m)) {}

    struct StepStats {
        double l_cls{0.0};
        double l_ccr{0.0};
        double l_total{0.0};
        std::size_t step{0};
    };

    // Phase 1 forward, optional phase 2 intervention, one optimizer step.
    StepStats train_step(const std::vector<const data::MicroClip*>& clips,
                         const Tensor<Real>& labels, Rng& step_rng) {
        model_.set_training(true);
        const auto& cfg = model_.config();
        auto fw = model_.forward_clips(clips);
        auto l_cls = ops::bce_mean(fw.y_hat, labels);

        Var<Real> l_total = l_cls;
        StepStats stats;
        if (ccr_active(cfg)) {
            std::vector<std::size_t> targets;
            if (cfg.target_mode == CcrTargetMode::sample) {
                targets.push_back(step_rng.index(model_.num_aus()));
            } else {
                for (std::size_t k = 0; k < model_.num_aus(); ++k) targets.push_back(k);
            }
            Var<Real> l_ccr;
            for (std::size_t k : targets) {
                auto y_cf = model_.counterfactual_probs(fw, k);
                auto term = ops::bce_flip_column(y_cf, labels, k);
                term = ops::add(term, ops::affine(ops::bernoulli_kl_sum_excluding(
                                                      fw.y_hat->value, y_cf, k),
                                                  static_cast<Real>(cfg.lambda_inv), Real(0)));
                term = ops::add(term, ops::affine(ops::row_norm2(model_.delta(), k),
                                                  static_cast<Real>(cfg.lambda_delta), Real(0)));
                l_ccr = l_ccr ? ops::add(l_ccr, term) : term;
            }
            l_ccr = ops::affine(l_ccr, Real(1) / static_cast<Real>(targets.size()), Real(0));
            stats.l_ccr = static_cast<double>(l_ccr->value.item());
            l_total = ops::add(l_cls, ops::affine(l_ccr, static_cast<Real>(cfg.lambda_ccr), Real(0)));
        }

        stats.l_cls = static_cast<double>(l_cls->value.item());
        stats.l_total = static_cast<double>(l_total->value.item());
        if (!std::isfinite(stats.l_total)) {
            throw Error("non-finite training loss: l_cls=" + std::to_string(stats.l_cls) +
                        " l_ccr=" + std::to_string(stats.l_ccr) +
                        " l_total=" + std::to_string(stats.l_total));
        }

        model_.params().zero_grads();
        backward(l_total);
        opt_.step();
        stats.step = opt_.step_count();
        return stats;
    }

    struct FitOptions {
        std::ostream* log{nullptr};
        std::string checkpoint_dir;
        std::size_t checkpoint_every{0};
    };

    // Seeded epoch shuffling; batches are consecutive chunks, the trailing
    // partial batch is kept.
    void fit(data::ClipSource& source, const std::vector<std::size_t>& ids,
             const FitOptions& options = {}) {
        const auto& cfg = model_.config();
        const auto& manifest = source.manifest();
        if (options.log) {
            *options.log << "step,l_cls,l_ccr,l_total,lr_visual_graph,lr_lora\n";
        }
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::vector<std::size_t> order(ids);
            Rng shuffle_rng(fork_seed(cfg.seed, "shuffle", epoch));
            shuffle_rng.shuffle(order);
            for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
                const std::size_t take = std::min(cfg.batch_size, order.size() - off);
                std::vector<std::pair<data::MicroClip, data::AULabelVector>> loaded;
                loaded.reserve(take);
                std::vector<const data::MicroClip*> clips;
                std::vector<const data::SampleRecord*> records;
                for (std::size_t i = 0; i < take; ++i) {
                    const auto& rec = manifest.samples[order[off + i]];
                    loaded.push_back(source.load(rec.clip_id));
                    records.push_back(&rec);
                }
                for (auto& [clip, labels] : loaded) clips.push_back(&clip);
                Rng step_rng(fork_seed(cfg.seed, "ccr-target", opt_.step_count()));
                const auto stats = train_step(clips, labels_tensor<Real>(records), step_rng);
                if (options.log) {
                    *options.log << stats.step << ',' << stats.l_cls << ',' << stats.l_ccr << ','
                                 << stats.l_total << ',' << cfg.lr_visual_graph << ','
                                 << cfg.lr_lora << '\n';
                }
            }
            const bool periodic = options.checkpoint_every > 0 &&
                                  (epoch + 1) % options.checkpoint_every == 0;
            if (!options.checkpoint_dir.empty() && periodic) {
                save_checkpoint(model_.params(),
                                (std::filesystem::path(options.checkpoint_dir) /
                                 ("checkpoint_epoch" + std::to_string(epoch + 1) + ".bin"))
                                    .string());
            }
        }
        if (!options.checkpoint_dir.empty()) {
            save_checkpoint(model_.params(), (std::filesystem::path(options.checkpoint_dir) /
                                              "checkpoint.bin")
                                                 .string());
        }
    }

    // Eval-mode probabilities for the given ids, batched.
    std::vector<std::vector<double>> predict(data::ClipSource& source,
                                             const std::vector<std::size_t>& ids) {
        model_.set_training(false);
        const auto& manifest = source.manifest();
        const std::size_t N = model_.num_aus();
        std::vector<std::vector<double>> out;
        out.reserve(ids.size());
        const std::size_t batch = model_.config().batch_size;
        for (std::size_t off = 0; off < ids.size(); off += batch) {
            const std::size_t take = std::min(batch, ids.size() - off);
            std::vector<std::pair<data::MicroClip, data::AULabelVector>> loaded;
            loaded.reserve(take);
            std::vector<const data::MicroClip*> clips;
            for (std::size_t i = 0; i < take; ++i) {
                loaded.push_back(source.load(manifest.samples[ids[off + i]].clip_id));
            }
            for (auto& [clip, labels] : loaded) clips.push_back(&clip);
            auto fw = model_.forward_clips(clips);
            for (std::size_t b = 0; b < take; ++b) {
                std::vector<double> row(N);
                for (std::size_t j = 0; j < N; ++j) {
                    row[j] = static_cast<double>(fw.y_hat->value[b * N + j]);
                }
                out.push_back(std::move(row));
            }
        }
        return out;
    }

    std::size_t step_count() const { return opt_.step_count(); }

private:
    static std::vector<typename AdamW<Real>::Group> make_groups(model::Model<Real>& m) {
        const auto& cfg = m.config();
        typename AdamW<Real>::Group visual_graph;
        visual_graph.lr = static_cast<Real>(cfg.lr_visual_graph);
        for (const auto& prefix : {"backbone.", "mge_efp.", "r_augnn."}) {
            for (auto& p : m.params().trainable_with_prefix(prefix)) {
                visual_graph.params.push_back(p);
            }
        }
        typename AdamW<Real>::Group adapters;
        adapters.lr = static_cast<Real>(cfg.lr_lora);
        for (const auto& prefix : {"reasoner.lora.", "reasoner.head.", "mlp_head."}) {
            for (auto& p : m.params().trainable_with_prefix(prefix)) {
                adapters.params.push_back(p);
            }
        }
        if (ccr_active(cfg)) {
            adapters.params.push_back(m.params().get("ccr.delta"));
        }
        return {std::move(visual_graph), std::move(adapters)};
    }

    static Real make_wd(model::Model<Real>& m) {
        return static_cast<Real>(m.config().weight_decay);
    }

    model::Model<Real>& model_;
    AdamW<Real> opt_;
};

}  // namespace aullmxx::train

#endif  // AULLMXX_TRAIN_TRAINER_HPP
