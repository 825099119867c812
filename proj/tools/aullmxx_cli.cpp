// Command-line entry point: data generation, training, evaluation protocols,
// ablation sweeps, gradient diagnostics, and report rendering.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "aullmxx/aullmxx.hpp"

namespace fs = std::filesystem;
using namespace aullmxx;

namespace {

using CliReal = float;  // training scalar; gradient diagnostics run in double

struct Timer {
    std::chrono::steady_clock::time_point start{std::chrono::steady_clock::now()};
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

// Seed precedence: AULLMXX_SEED environment variable, then --seed, then the
// config file. The effective seed is written back so fingerprints reflect it.
void resolve_seed(Config& cfg, const std::optional<long long>& flag_seed) {
    if (const char* env = std::getenv("AULLMXX_SEED")) {
        cfg.set("seed", env);
        (void)cfg.get_int("seed");  // validate
        return;
    }
    if (flag_seed) cfg.set("seed", std::to_string(*flag_seed));
    if (!cfg.has("seed")) cfg.set("seed", "7");
}

int cmd_gen_data(const std::string& config_path, const std::string& out,
                 const std::optional<long long>& seed) {
    Timer timer;
    auto cfg = Config::load(config_path);
    resolve_seed(cfg, seed);
    auto synth = data::SyntheticConfig::from_config(cfg);
    auto ds = data::generate_synthetic(synth);
    data::write_dataset(ds, out);
    std::printf("gen-data: M=%zu clips, %zu subjects, %zu AUs, clamped=%llu voxels -> %s (%.1fs)\n",
                ds.manifest.size(), ds.manifest.subjects().size(), ds.manifest.au_names.size(),
                static_cast<unsigned long long>(ds.clamped_voxels), out.c_str(), timer.seconds());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out,
              const std::optional<long long>& seed) {
    Timer timer;
    auto cfg = Config::load(config_path);
    resolve_seed(cfg, seed);
    auto tcfg = train::TrainConfig::from_config(cfg);
    auto source = data::ManifestSource::open(data_dir);
    fs::create_directories(out);
    cfg.save((fs::path(out) / "config_used.cfg").string());

    model::Model<CliReal> m(tcfg, source.manifest().au_names);
    train::Trainer<CliReal> trainer(m);
    std::vector<std::size_t> ids(source.manifest().size());
    std::iota(ids.begin(), ids.end(), 0);

    std::ofstream log(fs::path(out) / "train_log.csv");
    train::Trainer<CliReal>::FitOptions opts;
    opts.log = &log;
    opts.checkpoint_dir = out;
    opts.checkpoint_every = tcfg.checkpoint_every;
    trainer.fit(source, ids, opts);
    std::printf("train: %zu steps over %zu samples -> %s (%.1fs)\n", trainer.step_count(),
                ids.size(), out.c_str(), timer.seconds());
    return 0;
}

eval::LosoOptions loso_options(const Config& cfg, const std::string& data_dir, std::size_t jobs,
                               bool per_fold) {
    eval::LosoOptions opt;
    opt.pooled = !per_fold;
    opt.jobs = jobs;
    opt.config_fingerprint = cfg.fingerprint();
    if (jobs > 1) {
        opt.source_factory = [data_dir]() -> std::unique_ptr<data::ClipSource> {
            return std::make_unique<data::ManifestSource>(data::ManifestSource::open(data_dir));
        };
    }
    return opt;
}

int cmd_eval_loso(const std::string& config_path, const std::string& data_dir,
                  const std::string& out, const std::optional<long long>& seed, std::size_t jobs,
                  bool per_fold) {
    Timer timer;
    auto cfg = Config::load(config_path);
    resolve_seed(cfg, seed);
    auto tcfg = train::TrainConfig::from_config(cfg);
    auto source = data::ManifestSource::open(data_dir);
    auto report = eval::run_loso(source, tcfg, eval::model_predictor_factory<CliReal>(tcfg),
                                 loso_options(cfg, data_dir, jobs, per_fold));
    eval::emit_report(report, out);
    eval::render_plots(report, out);
    std::printf("eval-loso: macro_f1=%.4f (%s, %zu folds) -> %s (%.1fs)\n", report.macro,
                report.aggregation.c_str(), report.fold_details.size(), out.c_str(),
                timer.seconds());
    return 0;
}

int cmd_eval_crossdomain(const std::string& config_path, const std::string& source_dir,
                         const std::string& target_dir, const std::string& out,
                         const std::optional<long long>& seed) {
    Timer timer;
    auto cfg = Config::load(config_path);
    resolve_seed(cfg, seed);
    auto tcfg = train::TrainConfig::from_config(cfg);
    auto source = data::ManifestSource::open(source_dir);
    auto target = data::ManifestSource::open(target_dir);
    auto report = eval::run_crossdomain(source, target, tcfg,
                                        eval::model_predictor_factory<CliReal>(tcfg),
                                        cfg.fingerprint());
    eval::emit_report(report, out);
    eval::render_plots(report, out);
    std::printf("eval-crossdomain: macro_f1=%.4f (train %zu -> test %zu) -> %s (%.1fs)\n",
                report.macro, report.fold_details[0].train_size,
                report.fold_details[0].test_size, out.c_str(), timer.seconds());
    return 0;
}

struct AblationAxis {
    std::string axis;
    std::string label;
};

const std::vector<AblationAxis> kAblationAxes{
    {"full", "Full Framework"},
    {"no_r_augnn", "w/o R-AUGNN (no tau_au)"},
    {"graph_full", "FACS graph -> fully-connected"},
    {"graph_selfloop", "FACS graph -> self-loops only"},
    {"no_efp", "w/o EFP (linear proj.)"},
    {"mid_only", "F_mid only"},
    {"high_only", "F_high only"},
    {"mlp_head", "w/o LLM (MLP head)"},
    {"no_ccr", "w/o CCR++"},
};

train::TrainConfig apply_axis(train::TrainConfig cfg, const std::string& axis) {
    if (axis == "full") {
    } else if (axis == "no_r_augnn") {
        cfg.no_r_augnn = true;
    } else if (axis == "graph_full") {
        cfg.graph_mode = model::GraphMode::full;
    } else if (axis == "graph_selfloop") {
        cfg.graph_mode = model::GraphMode::selfloop;
    } else if (axis == "no_efp") {
        cfg.fusion_mode = model::FusionMode::linear_proj;
    } else if (axis == "mid_only") {
        cfg.fusion_mode = model::FusionMode::mid_only;
    } else if (axis == "high_only") {
        cfg.fusion_mode = model::FusionMode::high_only;
    } else if (axis == "mlp_head") {
        cfg.head_mode = train::HeadMode::mlp;
    } else if (axis == "no_ccr") {
        cfg.ccr_enabled = false;
    } else {
        throw ConfigError("unknown ablation axis: " + axis);
    }
    return cfg;
}

std::string axis_label(const std::string& axis) {
    for (const auto& a : kAblationAxes) {
        if (a.axis == axis) return a.label;
    }
    throw ConfigError("unknown ablation axis: " + axis);
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& out, const std::optional<long long>& seed,
               const std::vector<std::string>& axes, std::size_t jobs) {
    Timer timer;
    auto cfg = Config::load(config_path);
    resolve_seed(cfg, seed);
    auto base = train::TrainConfig::from_config(cfg);
    auto source = data::ManifestSource::open(data_dir);
    fs::create_directories(out);

    std::ofstream table(fs::path(out) / "ablation.csv");
    table << "variant,axis,macro_f1\n";
    std::printf("%-36s %s\n", "variant", "macro_f1");
    for (const auto& axis : axes) {
        const auto label = axis_label(axis);
        auto variant = apply_axis(base, axis);  // shared seed across variants
        auto report = eval::run_loso(source, variant,
                                     eval::model_predictor_factory<CliReal>(variant),
                                     loso_options(cfg, data_dir, jobs, false));
        const std::string vdir = (fs::path(out) / axis).string();
        eval::emit_report(report, vdir);
        eval::render_plots(report, vdir);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", report.macro);
        table << label << ',' << axis << ',' << buf << '\n';
        std::printf("%-36s %s\n", label.c_str(), buf);
    }
    std::printf("ablate: %zu variants -> %s (%.1fs)\n", axes.size(), out.c_str(),
                timer.seconds());
    return 0;
}

int cmd_gradcheck(const std::string& module, long long seed) {
    Timer timer;
    std::vector<train::ModuleGradReport> reports;
    if (module == "all") {
        reports = train::gradcheck_all(static_cast<std::uint64_t>(seed));
    } else {
        reports.push_back(train::gradcheck_module(module, static_cast<std::uint64_t>(seed)));
    }
    bool ok = true;
    for (const auto& r : reports) {
        std::printf("gradcheck %-10s max_rel_err=%.3e over %zu samples (worst %s) %s\n",
                    r.module.c_str(), r.report.max_rel_err, r.report.checked,
                    r.report.worst_param.c_str(), r.passes() ? "PASS" : "FAIL");
        ok = ok && r.passes();
    }
    std::printf("gradcheck: %s (%.1fs)\n", ok ? "all modules PASS" : "FAILURES", timer.seconds());
    return ok ? 0 : 1;
}

int cmd_graph_inspect(const std::optional<std::string>& config_path,
                      const std::optional<std::string>& rules_path,
                      const std::optional<long long>& seed) {
    Config cfg = config_path ? Config::load(*config_path) : Config();
    resolve_seed(cfg, seed);
    std::vector<std::string> au_names = cfg.has("synth.au_names")
                                            ? data::SyntheticConfig::split_ws(
                                                  cfg.get_string("synth.au_names"))
                                            : data::SyntheticConfig::default_au_names();
    std::vector<model::AuRule> rules;
    std::string rule_source = "rule file";
    if (rules_path) {
        rules = model::load_rules_file(*rules_path);
    } else if (cfg.has("graph.rules_file")) {
        rules = model::load_rules_file(cfg.get_string("graph.rules_file"));
    } else {
        rules = model::default_facs_rules();
        std::erase_if(rules, [&](const model::AuRule& r) {
            return !data::SyntheticConfig::contains(au_names, r.a) ||
                   !data::SyntheticConfig::contains(au_names, r.b);
        });
        rule_source = "built-in default";
    }
    auto prior = model::build_prior_graph(au_names, rules, rule_source);
    const std::size_t n = au_names.size();

    std::printf("A_prior (%zu AUs, source: %s)\n        ", n, prior.rule_source.c_str());
    for (const auto& au : au_names) std::printf("%7s", au.c_str());
    std::printf("\n");
    for (std::size_t i = 0; i < n; ++i) {
        std::printf("%7s ", au_names[i].c_str());
        for (std::size_t j = 0; j < n; ++j) std::printf("%7.2f", prior.a_prior[i * n + j]);
        std::printf("\n");
    }

    const auto tcfg = train::TrainConfig::from_config(cfg);
    ParamStore<double> ps;
    Rng rng(fork_seed(tcfg.seed, "graph-inspect"));
    model::RAugnn<double> net(ps, "r_augnn", n, 8, tcfg.node_dim, tcfg.reasoner_width,
                              tcfg.graph_layers, tcfg.alpha_init, rng);
    Rng ir(fork_seed(tcfg.seed, "graph-inspect.h0"));
    auto h0 = constant(Tensor<double>::randn({1, n, tcfg.node_dim}, ir));
    auto a_dyn = net.dynamic_attention(h0);
    auto a_hat = net.fuse_adjacency(prior.a_prior.cast<double>(), a_dyn);
    std::printf("\nsample A_hat at alpha=%.3f (seeded random node states)\n",
                net.alpha()->value[0]);
    for (std::size_t i = 0; i < n; ++i) {
        double row_sum = 0.0;
        std::printf("%7s ", au_names[i].c_str());
        for (std::size_t j = 0; j < n; ++j) {
            std::printf("%7.3f", a_hat->value[i * n + j]);
            row_sum += a_hat->value[i * n + j];
        }
        std::printf("  | row sum %.6f\n", row_sum);
    }
    return 0;
}

int cmd_report(const std::string& in_path, const std::string& out) {
    auto report = eval::load_report(in_path);
    eval::emit_report(report, out);
    eval::render_plots(report, out);
    std::printf("report: macro_f1=%.4f (%s) re-rendered -> %s\n", report.macro,
                report.protocol.c_str(), out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Micro-expression action unit detection pipeline"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_dir, source_dir, target_dir, module = "all";
    std::string report_in;
    std::optional<std::string> rules_path, opt_config;
    std::optional<long long> seed_flag;
    long long gradcheck_seed = 7;
    std::size_t jobs = 1;
    bool per_fold = false;
    std::vector<std::string> axes;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen->add_option("--config", config_path, "config file")->required();
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--seed", seed_flag, "seed override");

    auto* tr = app.add_subcommand("train", "Train on every sample in a dataset");
    tr->add_option("--config", config_path)->required();
    tr->add_option("--data", data_dir)->required();
    tr->add_option("--out", out_dir)->required();
    tr->add_option("--seed", seed_flag);

    auto* lo = app.add_subcommand("eval-loso", "Leave-one-subject-out evaluation");
    lo->add_option("--config", config_path)->required();
    lo->add_option("--data", data_dir)->required();
    lo->add_option("--out", out_dir)->required();
    lo->add_option("--seed", seed_flag);
    lo->add_option("--jobs", jobs, "parallel fold workers");
    lo->add_flag("--per-fold", per_fold, "average F1 per fold instead of pooling");

    auto* cd = app.add_subcommand("eval-crossdomain", "Train on source, test on target");
    cd->add_option("--config", config_path)->required();
    cd->add_option("--source", source_dir)->required();
    cd->add_option("--target", target_dir)->required();
    cd->add_option("--out", out_dir)->required();
    cd->add_option("--seed", seed_flag);

    auto* ab = app.add_subcommand("ablate", "Run eval-loso across ablation variants");
    ab->add_option("--config", config_path)->required();
    ab->add_option("--data", data_dir)->required();
    ab->add_option("--out", out_dir)->required();
    ab->add_option("--axes", axes, "comma-separated variant list")
        ->required()
        ->delimiter(',');
    ab->add_option("--seed", seed_flag);
    ab->add_option("--jobs", jobs);

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    gc->add_option("--module", module, "backbone|mge-efp|r-augnn|reasoner|head|ccr|all");
    gc->add_option("--seed", gradcheck_seed);

    auto* gi = app.add_subcommand("graph-inspect", "Print the prior and a sample routing matrix");
    gi->add_option("--config", opt_config);
    gi->add_option("--rules", rules_path, "rule file override");
    gi->add_option("--seed", seed_flag);

    auto* rp = app.add_subcommand("report", "Re-render CSV and plots from a report.json");
    rp->add_option("--in", report_in)->required();
    rp->add_option("--out", out_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_dir, seed_flag);
        if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir, seed_flag);
        if (lo->parsed())
            return cmd_eval_loso(config_path, data_dir, out_dir, seed_flag, jobs, per_fold);
        if (cd->parsed())
            return cmd_eval_crossdomain(config_path, source_dir, target_dir, out_dir, seed_flag);
        if (ab->parsed()) return cmd_ablate(config_path, data_dir, out_dir, seed_flag, axes, jobs);
        if (gc->parsed()) return cmd_gradcheck(module, gradcheck_seed);
        if (gi->parsed()) return cmd_graph_inspect(opt_config, rules_path, seed_flag);
        if (rp->parsed()) return cmd_report(report_in, out_dir);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
