#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "aullmxx/eval/metrics.hpp"
#include "aullmxx/eval/protocol.hpp"
#include "aullmxx/eval/report.hpp"

using namespace aullmxx;
using namespace aullmxx::eval;
namespace fs = std::filesystem;

namespace {

using Matrix = std::vector<std::vector<std::uint8_t>>;

// Independent reference: per-AU confusion counting in column-major order with
// its own masking logic.
struct OracleResult {
    std::vector<double> f1;
    std::vector<bool> included;
};

OracleResult brute_force_f1(const Matrix& pred, const Matrix& truth) {
    const std::size_t m = pred.size(), n = pred[0].size();
    OracleResult out;
    for (std::size_t k = 0; k < n; ++k) {
        long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < m; ++i) {
            tp += (pred[i][k] == 1 && truth[i][k] == 1) ? 1 : 0;
            fp += (pred[i][k] == 1 && truth[i][k] == 0) ? 1 : 0;
            fn += (pred[i][k] == 0 && truth[i][k] == 1) ? 1 : 0;
        }
        if (tp == 0 && fp == 0 && fn == 0) {
            out.f1.push_back(0.0);
            out.included.push_back(false);
        } else if (tp == 0) {
            out.f1.push_back(0.0);
            out.included.push_back(true);
        } else {
            out.f1.push_back(2.0 * static_cast<double>(tp) /
                             static_cast<double>(2 * tp + fp + fn));
            out.included.push_back(true);
        }
    }
    return out;
}

data::SyntheticConfig proto_data(std::size_t subjects, std::size_t clips,
                                 data::DomainStyle style = {0.0, 0.005},
                                 const std::string& domain = "base") {
    data::SyntheticConfig cfg;
    cfg.seed = 21;
    cfg.num_subjects = subjects;
    cfg.clips_per_subject = clips;
    cfg.au_names = {"AU1", "AU2", "AU4", "AU12"};
    cfg.t = 8;
    cfg.h = 16;
    cfg.w = 16;
    cfg.au_region_centers = data::SyntheticConfig::grid_centers(4, 16, 16);
    cfg.bump_amplitude = 0.15;
    cfg.domain_styles = {{domain, style}};
    return cfg;
}

train::TrainConfig proto_train() {
    train::TrainConfig cfg;
    cfg.seed = 9;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.reasoner_width = 16;
    cfg.reasoner_layers = 1;
    cfg.reasoner_heads = 2;
    cfg.lora_rank = 2;
    cfg.lora_alpha = 4.0;
    cfg.node_dim = 8;
    cfg.rules = {{"AU1", "AU2", 0.8}};
    return cfg;
}

}  // namespace

TEST_CASE("f1 hand cases") {
    SECTION("perfect prediction with positives present") {
        Matrix t{{1, 0}, {0, 1}, {1, 1}};
        auto r = f1_per_au(t, t);
        CHECK(r.f1 == std::vector<double>{1.0, 1.0});
        CHECK(macro_f1(r) == 1.0);
    }
    SECTION("single AU half precision / half recall") {
        Matrix pred{{1}, {1}, {0}, {0}};
        Matrix truth{{1}, {0}, {1}, {0}};
        auto r = f1_per_au(pred, truth);
        CHECK(r.counts[0].tp == 1);
        CHECK(r.counts[0].fp == 1);
        CHECK(r.counts[0].fn == 1);
        CHECK(r.f1[0] == Catch::Approx(0.5).margin(1e-15));
    }
    SECTION("all-zero AU is masked") {
        Matrix pred{{0, 1}, {0, 1}};
        Matrix truth{{0, 1}, {0, 1}};
        auto r = f1_per_au(pred, truth);
        CHECK_FALSE(r.included[0]);
        CHECK(r.included[1]);
        CHECK(macro_f1(r) == 1.0);
    }
    SECTION("zero TP with errors scores zero, stays included") {
        Matrix pred{{1}, {0}};
        Matrix truth{{0}, {1}};
        auto r = f1_per_au(pred, truth);
        CHECK(r.included[0]);
        CHECK(r.f1[0] == 0.0);
    }
    SECTION("macro arithmetic and masking") {
        CHECK(macro_f1({1.0, 0.5}, {true, true}) == 0.75);
        CHECK(macro_f1({0.8, 0.6, 0.123}, {true, true, false}) ==
              Catch::Approx(0.7).margin(1e-15));
        CHECK(macro_f1({0.4}, {true}) == 0.4);
        CHECK_THROWS_AS(macro_f1({0.4}, {false}), Error);
    }
    SECTION("shape mismatch") {
        CHECK_THROWS_AS(f1_per_au({{1, 0}}, {{1}}), ShapeError);
    }
}

TEST_CASE("metric engine agrees with the brute-force oracle on 1000 random matrices") {
    Rng rng(77);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t m = 1 + rng.index(12);
        const std::size_t n = 1 + rng.index(6);
        Matrix pred(m, std::vector<std::uint8_t>(n)), truth(m, std::vector<std::uint8_t>(n));
        for (auto& row : pred)
            for (auto& v : row) v = rng.bernoulli(0.4) ? 1 : 0;
        for (auto& row : truth)
            for (auto& v : row) v = rng.bernoulli(0.35) ? 1 : 0;

        auto got = f1_per_au(pred, truth);
        auto want = brute_force_f1(pred, truth);
        for (std::size_t k = 0; k < n; ++k) {
            REQUIRE(got.f1[k] == want.f1[k]);  // exact
            REQUIRE(got.included[k] == want.included[k]);
        }
        bool any = false;
        for (bool b : want.included) any = any || b;
        if (any) {
            REQUIRE(macro_f1(got) == macro_f1(want.f1, want.included));
        }
    }
}

TEST_CASE("loso runner with oracle and constant predictors") {
    auto ds = data::generate_synthetic(proto_data(3, 4));
    data::MemorySource source(std::move(ds));
    auto cfg = proto_train();

    SECTION("oracle predictor pools to macro F1 = 1") {
        auto report = run_loso(source, cfg, oracle_predictor_factory());
        CHECK(report.macro == 1.0);
        CHECK(report.fold_details.size() == 3);
        std::size_t pooled = 0;
        for (const auto& f : report.fold_details) pooled += f.test_size;
        CHECK(pooled == source.manifest().size());
        report.validate();
    }
    SECTION("constant all-negative predictor scores zero everywhere") {
        auto report = run_loso(source, cfg, constant_predictor_factory(0.1));
        for (std::size_t k = 0; k < report.per_au_f1.size(); ++k) {
            if (report.included[k]) CHECK(report.per_au_f1[k] == 0.0);
        }
        CHECK(report.macro == 0.0);
    }
    SECTION("per-fold aggregation mode is labeled and valid") {
        auto report = run_loso(source, cfg, oracle_predictor_factory(), {.pooled = false});
        CHECK(report.aggregation == "per_fold_mean");
        CHECK(report.macro == 1.0);
    }
    SECTION("failing fold aborts with the subject named") {
        PredictorFactory bad = [](data::ClipSource&, const std::vector<std::size_t>&,
                                  std::uint64_t) -> TrainedPredictor {
            throw Error("boom");
        };
        CHECK_THROWS_WITH(run_loso(source, cfg, bad),
                          Catch::Matchers::ContainsSubstring("s000"));
    }
}

namespace {

class RecordingSource final : public data::ClipSource {
public:
    explicit RecordingSource(data::ClipSource& inner) : inner_(inner) {}
    const data::DatasetManifest& manifest() const override { return inner_.manifest(); }
    std::pair<data::MicroClip, data::AULabelVector> load(const std::string& id) override {
        ++loads_;
        return inner_.load(id);
    }
    std::size_t loads() const { return loads_; }

private:
    data::ClipSource& inner_;
    std::size_t loads_{0};
};

}  // namespace

TEST_CASE("cross-domain runner never reads target tensors during training") {
    auto src_ds = data::generate_synthetic(proto_data(2, 3));
    auto tgt_ds = data::generate_synthetic(proto_data(2, 3, {0.1, 0.02}, "shifted"));
    data::MemorySource src_inner(std::move(src_ds));
    data::MemorySource tgt_inner(std::move(tgt_ds));
    RecordingSource source(src_inner);
    RecordingSource target(tgt_inner);

    auto cfg = proto_train();
    auto inner_factory = model_predictor_factory<double>(cfg);
    std::size_t target_loads_during_training = 999;
    PredictorFactory factory = [&](data::ClipSource& s, const std::vector<std::size_t>& ids,
                                   std::uint64_t seed) {
        auto p = inner_factory(s, ids, seed);
        target_loads_during_training = target.loads();
        return p;
    };

    auto report = run_crossdomain(source, target, cfg, factory);
    CHECK(target_loads_during_training == 0);
    CHECK(source.loads() >= source.manifest().size());
    CHECK(target.loads() == target.manifest().size());
    CHECK(report.protocol == "crossdomain");
    CHECK(report.macro >= 0.0);
    CHECK(report.macro <= 1.0);

    SECTION("AU ordering mismatch rejected") {
        auto other = proto_data(2, 2);
        other.au_names = {"AU2", "AU1", "AU4", "AU12"};
        other.au_region_centers = data::SyntheticConfig::grid_centers(4, 16, 16);
        auto other_ds = data::generate_synthetic(other);
        data::MemorySource bad(std::move(other_ds));
        CHECK_THROWS_AS(run_crossdomain(source, bad, cfg, oracle_predictor_factory()),
                        ConfigError);
    }
}

TEST_CASE("cross-domain identity configuration reduces to train-on-all, test-on-all") {
    auto ds = data::generate_synthetic(proto_data(2, 3));
    data::MemorySource source(std::move(ds));
    auto report = run_crossdomain(source, source, proto_train(), oracle_predictor_factory());
    CHECK(report.macro == 1.0);
    CHECK(report.fold_details[0].train_size == source.manifest().size());
    CHECK(report.fold_details[0].test_size == source.manifest().size());
}

TEST_CASE("report emission: round-trip, byte determinism, csv shape") {
    EvalReport r;
    r.protocol = "loso";
    r.aggregation = "pooled";
    r.au_names = {"AU1", "AU2", "AU4", "AU6", "AU7", "AU12", "AU15", "AU17"};
    r.per_au_f1 = {0.9, 0.8, 0.85, 0.0, 0.75, 0.95, 0.6, 0.7};
    r.included = {true, true, true, false, true, true, true, true};
    r.macro = macro_f1(r.per_au_f1, r.included);
    r.fold_details = {{"s000", 40, 8, 0.21}, {"s001", 40, 8, 0.19}};
    r.config_fingerprint = "abc123";
    r.seed = 7;
    r.validate();

    const std::string dir = (fs::temp_directory_path() / "aullmxx_report_test").string();
    fs::remove_all(dir);
    emit_report(r, dir);
    auto r2 = load_report((fs::path(dir) / "report.json").string());
    CHECK(report_to_json(r2).dump() == report_to_json(r).dump());

    auto read_file = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    const auto json_once = read_file(fs::path(dir) / "report.json");
    const auto csv_once = read_file(fs::path(dir) / "report.csv");
    emit_report(r, dir);
    CHECK(read_file(fs::path(dir) / "report.json") == json_once);
    CHECK(read_file(fs::path(dir) / "report.csv") == csv_once);

    std::size_t lines = std::count(csv_once.begin(), csv_once.end(), '\n');
    CHECK(lines == 1 + 8 + 1);  // header + 8 AU rows + macro row

    SECTION("plots are emitted and deterministic") {
        render_plots(r, dir);
        CHECK(fs::exists(fs::path(dir) / "per_au_f1.svg"));
        CHECK_FALSE(fs::exists(fs::path(dir) / "crossdomain_heatmap.svg"));
        r.protocol = "crossdomain";
        render_plots(r, dir);
        CHECK(fs::exists(fs::path(dir) / "crossdomain_heatmap.svg"));
        const auto svg_once = read_file(fs::path(dir) / "per_au_f1.svg");
        render_plots(r, dir);
        CHECK(read_file(fs::path(dir) / "per_au_f1.svg") == svg_once);
    }
    SECTION("inconsistent macro rejected") {
        r.macro = 0.123;
        CHECK_THROWS_AS(r.validate(), InputError);
    }
}

TEST_CASE("pooled loso macro is invariant to fold evaluation order") {
    // pooled aggregation fills one global matrix keyed by sample id, so any
    // fold permutation yields the same pooled metrics; check by comparing two
    // datasets whose subject ids reverse the fold order.
    auto cfg_data = proto_data(3, 3);
    auto ds = data::generate_synthetic(cfg_data);
    data::MemorySource source(std::move(ds));
    auto a = run_loso(source, proto_train(), constant_predictor_factory(0.9));
    auto b = run_loso(source, proto_train(), constant_predictor_factory(0.9));
    CHECK(a.macro == b.macro);
    CHECK(a.per_au_f1 == b.per_au_f1);
}
