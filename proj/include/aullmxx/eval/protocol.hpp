#ifndef AULLMXX_EVAL_PROTOCOL_HPP
#define AULLMXX_EVAL_PROTOCOL_HPP

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <thread>
#include <string>
#include <vector>

#include "aullmxx/data/manifest.hpp"
#include "aullmxx/data/splits.hpp"
#include "aullmxx/eval/metrics.hpp"
#include "aullmxx/model/pipeline.hpp"
#include "aullmxx/train/trainer.hpp"

namespace aullmxx::eval {

struct FoldDetail {
    std::string held_out_subject;
    std::size_t train_size{0};
    std::size_t test_size{0};
    double final_loss{0.0};
};

struct EvalReport {
    std::string protocol;     // "loso" or "crossdomain"
    std::string aggregation;  // "pooled" or "per_fold_mean"
    std::vector<std::string> au_names;
    std::vector<double> per_au_f1;
    std::vector<bool> included;
    double macro{0.0};
    std::vector<FoldDetail> fold_details;
    std::string config_fingerprint;
    std::uint64_t seed{0};

    void validate() const {
        if (per_au_f1.size() != au_names.size() || included.size() != au_names.size()) {
            throw ShapeError("report: per-AU vector lengths disagree");
        }
        for (std::size_t k = 0; k < per_au_f1.size(); ++k) {
            if (per_au_f1[k] < 0.0 || per_au_f1[k] > 1.0) throw InputError("report: F1 outside [0, 1]");
        }
        if (std::abs(macro - macro_f1(per_au_f1, included)) > 1e-9) {
            throw InputError("report: macro is not the unweighted mean of included per-AU F1");
        }
    }
};

// A trained predictor maps a clip to per-AU probabilities.
using PredictorFn = std::function<std::vector<double>(const data::MicroClip&)>;

struct TrainedPredictor {
    PredictorFn predict;
    double final_loss{std::numeric_limits<double>::quiet_NaN()};
};

// Builds a predictor from training data; the seam the oracle tests use.
using PredictorFactory = std::function<TrainedPredictor(
    data::ClipSource& source, const std::vector<std::size_t>& train_ids, std::uint64_t seed)>;

// Trains a fresh full model; the seed argument drives every random choice so
// folds are reproducible independent of execution order.
template <typename Real>
PredictorFactory model_predictor_factory(const train::TrainConfig& base_cfg) {
    return [base_cfg](data::ClipSource& source, const std::vector<std::size_t>& train_ids,
                      std::uint64_t seed) -> TrainedPredictor {
        train::TrainConfig cfg = base_cfg;
        cfg.seed = seed;
        auto m = std::make_shared<model::Model<Real>>(cfg, source.manifest().au_names);
        train::Trainer<Real> trainer(*m);

        double final_loss = std::numeric_limits<double>::quiet_NaN();
        // run the fit loop inline so the final batch loss is observable
        const auto& manifest = source.manifest();
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::vector<std::size_t> order(train_ids);
            Rng shuffle_rng(fork_seed(cfg.seed, "shuffle", epoch));
            shuffle_rng.shuffle(order);
            for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
                const std::size_t take = std::min(cfg.batch_size, order.size() - off);
                std::vector<std::pair<data::MicroClip, data::AULabelVector>> loaded;
                std::vector<const data::MicroClip*> clips;
                std::vector<const data::SampleRecord*> records;
                for (std::size_t i = 0; i < take; ++i) {
                    const auto& rec = manifest.samples[order[off + i]];
                    loaded.push_back(source.load(rec.clip_id));
                    records.push_back(&rec);
                }
                for (auto& [clip, labels] : loaded) clips.push_back(&clip);
                Rng step_rng(fork_seed(cfg.seed, "ccr-target", trainer.step_count()));
                final_loss =
                    trainer.train_step(clips, train::labels_tensor<Real>(records), step_rng)
                        .l_total;
            }
        }
        m->set_training(false);
        TrainedPredictor out;
        out.final_loss = final_loss;
        out.predict = [m](const data::MicroClip& clip) { return m->infer_probs(clip); };
        return out;
    };
}

// Oracle that reads the labels straight from the manifest; plumbing checks.
inline PredictorFactory oracle_predictor_factory() {
    return [](data::ClipSource& source, const std::vector<std::size_t>&,
              std::uint64_t) -> TrainedPredictor {
        const auto* manifest = &source.manifest();
        TrainedPredictor out;
        out.final_loss = 0.0;
        out.predict = [manifest](const data::MicroClip& clip) {
            const auto& rec = manifest->find(clip.clip_id);
            std::vector<double> probs(rec.labels.size());
            for (std::size_t k = 0; k < probs.size(); ++k) probs[k] = rec.labels[k] ? 1.0 : 0.0;
            return probs;
        };
        return out;
    };
}

inline PredictorFactory constant_predictor_factory(double p) {
    return [p](data::ClipSource& source, const std::vector<std::size_t>&,
               std::uint64_t) -> TrainedPredictor {
        const std::size_t n = source.manifest().au_names.size();
        TrainedPredictor out;
        out.final_loss = 0.0;
        out.predict = [p, n](const data::MicroClip&) { return std::vector<double>(n, p); };
        return out;
    };
}

namespace protocol_detail {

inline std::vector<std::uint8_t> threshold_row(const std::vector<double>& probs) {
    std::vector<std::uint8_t> row(probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) row[k] = probs[k] >= 0.5 ? 1 : 0;
    return row;
}

}  // namespace protocol_detail

struct LosoOptions {
    bool pooled{true};
    std::size_t jobs{1};
    // With jobs > 1 each worker opens an independent source through this.
    std::function<std::unique_ptr<data::ClipSource>()> source_factory;
    std::string config_fingerprint;
};

// One fold per subject, fresh model per fold. Default aggregation pools all
// fold predictions and computes F1 once; per_fold_mean averages per-fold F1
// over the folds where the AU is defined. Fold results are keyed by sample
// id, so the pooled metrics cannot depend on execution order.
inline EvalReport run_loso(data::ClipSource& source, const train::TrainConfig& cfg,
                           const PredictorFactory& factory, const LosoOptions& options = {}) {
    const auto& manifest = source.manifest();
    const auto folds = data::loso_folds(manifest);
    const std::size_t n = manifest.au_names.size();
    const bool pooled = options.pooled;

    EvalReport report;
    report.protocol = "loso";
    report.aggregation = pooled ? "pooled" : "per_fold_mean";
    report.au_names = manifest.au_names;
    report.config_fingerprint = options.config_fingerprint;
    report.seed = cfg.seed;

    std::vector<std::vector<std::uint8_t>> pooled_pred(manifest.size()),
        pooled_truth(manifest.size());
    std::vector<std::vector<double>> fold_f1(folds.size());
    std::vector<std::vector<bool>> fold_mask(folds.size());
    report.fold_details.resize(folds.size());

    auto run_fold = [&](std::size_t fi, data::ClipSource& src) {
        const auto& fold = folds[fi];
        TrainedPredictor predictor;
        try {
            predictor = factory(src, fold.train_ids,
                                fork_seed(cfg.seed, "fold-" + fold.held_out_subject));
        } catch (const std::exception& e) {
            throw Error("LOSO fold for subject " + fold.held_out_subject +
                        " failed: " + e.what());
        }
        std::vector<std::vector<std::uint8_t>> fold_pred, fold_truth;
        for (std::size_t id : fold.test_ids) {
            auto [clip, labels] = src.load(manifest.samples[id].clip_id);
            auto row = protocol_detail::threshold_row(predictor.predict(clip));
            fold_pred.push_back(row);
            fold_truth.push_back(labels.values);
            pooled_pred[id] = std::move(row);
            pooled_truth[id] = labels.values;
        }
        if (!pooled) {
            auto r = f1_per_au(fold_pred, fold_truth);
            fold_f1[fi] = r.f1;
            fold_mask[fi] = std::vector<bool>(r.included.begin(), r.included.end());
        }
        report.fold_details[fi] = {fold.held_out_subject, fold.train_ids.size(),
                                   fold.test_ids.size(), predictor.final_loss};
    };

    const std::size_t jobs =
        options.source_factory ? std::min(std::max<std::size_t>(options.jobs, 1), folds.size())
                               : 1;
    if (jobs <= 1) {
        for (std::size_t fi = 0; fi < folds.size(); ++fi) run_fold(fi, source);
    } else {
        std::vector<std::exception_ptr> errors(folds.size());
        std::vector<std::thread> workers;
        for (std::size_t w = 0; w < jobs; ++w) {
            workers.emplace_back([&, w]() {
                auto own = options.source_factory();
                for (std::size_t fi = w; fi < folds.size(); fi += jobs) {
                    try {
                        run_fold(fi, *own);
                    } catch (...) {
                        errors[fi] = std::current_exception();
                        return;
                    }
                }
            });
        }
        for (auto& t : workers) t.join();
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    if (pooled) {
        auto r = f1_per_au(pooled_pred, pooled_truth);
        report.per_au_f1 = r.f1;
        report.included.assign(r.included.begin(), r.included.end());
    } else {
        report.per_au_f1.assign(n, 0.0);
        report.included.assign(n, false);
        for (std::size_t k = 0; k < n; ++k) {
            double acc = 0.0;
            std::size_t count = 0;
            for (std::size_t fi = 0; fi < folds.size(); ++fi) {
                if (fold_mask[fi][k]) {
                    acc += fold_f1[fi][k];
                    ++count;
                }
            }
            if (count > 0) {
                report.per_au_f1[k] = acc / static_cast<double>(count);
                report.included[k] = true;
            }
        }
    }
    report.macro = macro_f1(report.per_au_f1, report.included);
    report.validate();
    return report;
}

// Train once on every source sample, evaluate on every target sample. The
// factory never sees the target source, which is what the access-recording
// test verifies.
inline EvalReport run_crossdomain(data::ClipSource& source, data::ClipSource& target,
                                  const train::TrainConfig& cfg, const PredictorFactory& factory,
                                  const std::string& config_fingerprint = "") {
    if (source.manifest().au_names != target.manifest().au_names) {
        throw ConfigError("cross-domain: AU name orderings disagree");
    }
    std::vector<std::size_t> all_ids(source.manifest().size());
    std::iota(all_ids.begin(), all_ids.end(), 0);
    auto predictor = factory(source, all_ids, fork_seed(cfg.seed, "crossdomain"));

    std::vector<std::vector<std::uint8_t>> pred, truth;
    const auto& tm = target.manifest();
    for (const auto& rec : tm.samples) {
        auto [clip, labels] = target.load(rec.clip_id);
        pred.push_back(protocol_detail::threshold_row(predictor.predict(clip)));
        truth.push_back(labels.values);
    }
    auto r = f1_per_au(pred, truth);

    EvalReport report;
    report.protocol = "crossdomain";
    report.aggregation = "pooled";
    report.au_names = tm.au_names;
    report.per_au_f1 = r.f1;
    report.included.assign(r.included.begin(), r.included.end());
    report.macro = macro_f1(r);
    report.fold_details.push_back(
        {"target:" + (tm.samples.empty() ? std::string("none") : tm.samples[0].domain_id),
         source.manifest().size(), tm.size(), predictor.final_loss});
    report.config_fingerprint = config_fingerprint;
    report.seed = cfg.seed;
    report.validate();
    return report;
}

}  // namespace aullmxx::eval

#endif  // AULLMXX_EVAL_PROTOCOL_HPP
