#ifndef AULLMXX_TRAIN_GRADSUITE_HPP
#define AULLMXX_TRAIN_GRADSUITE_HPP

#include <string>
#include <vector>

#include "aullmxx/core/gradcheck.hpp"
#include "aullmxx/model/pipeline.hpp"
#include "aullmxx/train/trainer.hpp"

namespace aullmxx::train {

// 64-bit finite-difference verification of every trainable surface, module by
// module. Each check builds a small double-precision instance, contracts the
// output through fixed random weights, and compares analytic gradients of at
// least 20 sampled parameters against central differences.
struct ModuleGradReport {
    std::string module;
    GradCheckReport report;
    double tolerance{1e-4};

    bool passes() const { return report.passes(tolerance); }
};

namespace gradsuite_detail {

inline TrainConfig tiny_cfg(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.reasoner_width = 32;
    cfg.reasoner_layers = 2;
    cfg.reasoner_heads = 2;
    cfg.lora_rank = 2;
    cfg.lora_alpha = 4.0;
    cfg.node_dim = 16;
    cfg.rules = {{"AU1", "AU2", 0.8}, {"AU4", "AU12", -0.4}};
    cfg.target_mode = CcrTargetMode::all;
    return cfg;
}

inline std::vector<std::string> tiny_aus() { return {"AU1", "AU2", "AU4", "AU12"}; }

inline GradCheckReport check_prefixes(model::Model<double>& m,
                                      const std::vector<std::string>& prefixes,
                                      std::uint64_t seed, std::size_t samples,
                                      bool through_ccr = false) {
    Rng input_rng(fork_seed(seed, "gradsuite.input"));
    Tensor<double> batch = Tensor<double>::randn({2, 1, 4, 16, 16}, input_rng, 0.25);
    for (auto& v : batch.data()) v = 0.5 + v;  // keep the clip-like range
    Rng w_rng(fork_seed(seed, "gradsuite.w"));
    Tensor<double> w = Tensor<double>::randn({2, static_cast<std::size_t>(m.num_aus())}, w_rng);
    Tensor<double> y({2, static_cast<std::size_t>(m.num_aus())});
    Rng y_rng(fork_seed(seed, "gradsuite.y"));
    for (auto& v : y.data()) v = y_rng.bernoulli(0.5) ? 1.0 : 0.0;

    m.set_training(true);
    auto make_loss = [&]() -> Var<double> {
        auto fw = m.forward_tensor(Tensor<double>(batch));
        auto loss = ops::sum_all(ops::mul(fw.y_hat, constant(Tensor<double>(w))));
        if (through_ccr) {
            const auto& cfg = m.config();
            for (std::size_t k = 0; k < m.num_aus(); ++k) {
                auto y_cf = m.counterfactual_probs(fw, k);
                auto term = ops::bce_flip_column(y_cf, y, k);
                term = ops::add(term, ops::affine(ops::bernoulli_kl_sum_excluding(
                                                      fw.y_hat->value, y_cf, k),
                                                  cfg.lambda_inv, 0.0));
                term = ops::add(term, ops::affine(ops::row_norm2(m.delta(), k),
                                                  cfg.lambda_delta, 0.0));
                loss = ops::add(loss, term);
            }
        }
        return loss;
    };

    std::vector<Var<double>> params;
    for (const auto& prefix : prefixes) {
        for (auto& p : m.params().trainable_with_prefix(prefix)) params.push_back(p);
    }
    Rng check_rng(fork_seed(seed, "gradsuite.check"));
    const std::size_t per_param = std::max<std::size_t>(1, (samples + params.size() - 1) /
                                                               std::max<std::size_t>(params.size(), 1));
    return gradcheck<double>(make_loss, params, per_param, check_rng);
}

}  // namespace gradsuite_detail

inline ModuleGradReport gradcheck_module(const std::string& name, std::uint64_t seed) {
    using namespace gradsuite_detail;
    auto cfg = tiny_cfg(seed);
    ModuleGradReport out;
    out.module = name;
    if (name == "backbone") {
        model::Model<double> m(cfg, tiny_aus());
        out.report = check_prefixes(m, {"backbone."}, seed, 60);
    } else if (name == "mge-efp") {
        model::Model<double> m(cfg, tiny_aus());
        out.report = check_prefixes(m, {"mge_efp."}, seed, 60);
    } else if (name == "r-augnn") {
        model::Model<double> m(cfg, tiny_aus());
        out.report = check_prefixes(m, {"r_augnn."}, seed, 60);
    } else if (name == "reasoner") {
        model::Model<double> m(cfg, tiny_aus());
        // push the zero-initialized B factors off zero so A gradients carry
        Rng br(fork_seed(seed, "gradsuite.loraB"));
        for (const auto& e : m.params().entries()) {
            if (e.name.find(".lora.") != std::string::npos && e.name.back() == 'b') {
                e.var->value = Tensor<double>::randn(e.var->value.shape(), br, 0.05);
            }
        }
        out.report = check_prefixes(m, {"reasoner.lora."}, seed, 40);
    } else if (name == "head") {
        model::Model<double> m(cfg, tiny_aus());
        out.report = check_prefixes(m, {"reasoner.head."}, seed, 40);
    } else if (name == "ccr") {
        model::Model<double> m(cfg, tiny_aus());
        Rng dr(fork_seed(seed, "gradsuite.delta"));
        m.params().get("ccr.delta")->value =
            Tensor<double>::randn(m.params().get("ccr.delta")->value.shape(), dr, 0.1);
        out.report = check_prefixes(m, {"ccr.delta"}, seed, 40, /*through_ccr=*/true);
    } else {
        throw ConfigError("unknown gradcheck module: " + name +
                          " (expected backbone|mge-efp|r-augnn|reasoner|head|ccr|all)");
    }
    return out;
}

inline std::vector<ModuleGradReport> gradcheck_all(std::uint64_t seed) {
    std::vector<ModuleGradReport> reports;
    for (const auto* name : {"backbone", "mge-efp", "r-augnn", "reasoner", "head", "ccr"}) {
        reports.push_back(gradcheck_module(name, seed));
    }
    return reports;
}

}  // namespace aullmxx::train

#endif  // AULLMXX_TRAIN_GRADSUITE_HPP
