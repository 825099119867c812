#ifndef AULLMXX_TRAIN_TRAIN_CONFIG_HPP
#define AULLMXX_TRAIN_TRAIN_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "aullmxx/core/config.hpp"
#include "aullmxx/model/mge_efp.hpp"
#include "aullmxx/model/r_augnn.hpp"
#include "aullmxx/train/objective.hpp"

namespace aullmxx::train {

enum class HeadMode { llm, mlp };

inline HeadMode head_mode_from_string(const std::string& s) {
    if (s == "llm") return HeadMode::llm;
    if (s == "mlp") return HeadMode::mlp;
    throw ConfigError("unknown head mode: " + s);
}

// Shipped profiles: desk (epochs 60, batch 32) and paper-faithful (350, 256).
// Optimizer constants follow the published settings either way.
struct TrainConfig {
    std::size_t epochs{60};
    std::size_t batch_size{32};
    double weight_decay{1e-4};
    double lr_visual_graph{2e-4};
    double lr_lora{1e-4};
    std::uint64_t seed{7};
    std::size_t checkpoint_every{0};  // 0: final checkpoint only

    // ablation switches
    bool no_r_augnn{false};
    model::GraphMode graph_mode{model::GraphMode::facs};
    model::FusionMode fusion_mode{model::FusionMode::full};
    HeadMode head_mode{HeadMode::llm};
    bool ccr_enabled{true};

    // CCR coefficients
    double lambda_inv{1.0};
    double lambda_delta{0.01};
    double lambda_ccr{0.1};
    CcrTargetMode target_mode{CcrTargetMode::sample};

    // reasoner stand-in
    std::size_t reasoner_width{64};
    std::size_t reasoner_layers{2};
    std::size_t reasoner_heads{4};
    std::size_t lora_rank{4};
    double lora_alpha{8.0};
    std::string prompt_text{
        "Given facial evidence and AU relation instructions, decide which action units are "
        "active."};

    // relation graph
    std::size_t graph_layers{2};
    std::size_t node_dim{32};
    double alpha_init{0.7};
    std::vector<model::AuRule> rules{model::default_facs_rules()};
    // Explicit rule files must name known AUs; the built-in default set is
    // filtered down to whatever inventory the dataset uses.
    bool rules_explicit{false};

    void validate() const {
        if (epochs == 0 || batch_size == 0) throw ConfigError("epochs and batch size must be positive");
        if (lr_visual_graph < 0 || lr_lora < 0 || weight_decay < 0) {
            throw ConfigError("learning rates and weight decay must be nonnegative");
        }
        if (lambda_inv < 0 || lambda_delta < 0 || lambda_ccr < 0) {
            throw ConfigError("CCR coefficients must be nonnegative");
        }
        if (reasoner_width % reasoner_heads) {
            throw ConfigError("reasoner width must divide by head count");
        }
        if (lora_rank < 1) throw ConfigError("lora rank must be >= 1");
        if (alpha_init <= 0.0 || alpha_init >= 1.0) throw ConfigError("alpha_init must lie in (0, 1)");
        if (prompt_text.empty()) throw ConfigError("prompt text must be nonempty");
        if (graph_layers < 1) throw ConfigError("graph layer count must be >= 1");
    }

    static TrainConfig from_config(const Config& cfg) {
        TrainConfig t;
        t.epochs = static_cast<std::size_t>(cfg.get_int("trainer.epochs", 60));
        t.batch_size = static_cast<std::size_t>(cfg.get_int("trainer.batch_size", 32));
        t.weight_decay = cfg.get_double("trainer.weight_decay", 1e-4);
        t.lr_visual_graph = cfg.get_double("trainer.lr_visual_graph", 2e-4);
        t.lr_lora = cfg.get_double("trainer.lr_lora", 1e-4);
        t.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 7));
        t.checkpoint_every = static_cast<std::size_t>(cfg.get_int("trainer.checkpoint_every", 0));
        t.no_r_augnn = cfg.get_bool("trainer.no_r_augnn", false);
        t.graph_mode = model::graph_mode_from_string(cfg.get_string("trainer.graph_mode", "facs"));
        t.fusion_mode =
            model::fusion_mode_from_string(cfg.get_string("trainer.fusion_mode", "full"));
        t.head_mode = head_mode_from_string(cfg.get_string("trainer.head_mode", "llm"));
        t.ccr_enabled = cfg.get_bool("trainer.ccr_enabled", true);
        t.lambda_inv = cfg.get_double("ccr.lambda_inv", 1.0);
        t.lambda_delta = cfg.get_double("ccr.lambda_delta", 0.01);
        t.lambda_ccr = cfg.get_double("ccr.lambda_ccr", 0.1);
        t.target_mode = ccr_target_mode_from_string(cfg.get_string("ccr.target_mode", "sample"));
        t.reasoner_width = static_cast<std::size_t>(cfg.get_int("reasoner.width", 64));
        t.reasoner_layers = static_cast<std::size_t>(cfg.get_int("reasoner.layers", 2));
        t.reasoner_heads = static_cast<std::size_t>(cfg.get_int("reasoner.heads", 4));
        t.lora_rank = static_cast<std::size_t>(cfg.get_int("lora.rank", 4));
        t.lora_alpha = cfg.get_double("lora.alpha", 8.0);
        t.prompt_text = cfg.get_string("prompt.text", t.prompt_text);
        t.graph_layers = static_cast<std::size_t>(cfg.get_int("graph.layers", 2));
        t.node_dim = static_cast<std::size_t>(cfg.get_int("graph.node_dim", 32));
        t.alpha_init = cfg.get_double("graph.alpha_init", 0.7);
        if (cfg.has("graph.rules_file")) {
            t.rules = model::load_rules_file(cfg.get_string("graph.rules_file"));
            t.rules_explicit = true;
        }
        t.validate();
        return t;
    }
};

}  // namespace aullmxx::train

#endif  // AULLMXX_TRAIN_TRAIN_CONFIG_HPP
