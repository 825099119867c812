#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "aullmxx/data/manifest.hpp"
#include "aullmxx/data/splits.hpp"
#include "aullmxx/data/synthetic.hpp"

using namespace aullmxx;
using namespace aullmxx::data;
namespace fs = std::filesystem;

namespace {

SyntheticConfig small_config() {
    SyntheticConfig cfg;
    cfg.seed = 7;
    cfg.num_subjects = 6;
    cfg.clips_per_subject = 10;
    cfg.au_names = SyntheticConfig::default_au_names();
    cfg.au_region_centers = SyntheticConfig::grid_centers(8, 32, 32);
    return cfg;
}

}  // namespace

TEST_CASE("generator: counts, shapes, determinism") {
    auto cfg = small_config();
    auto ds = generate_synthetic(cfg);
    CHECK(ds.manifest.sample_count == 60);
    CHECK(ds.manifest.samples.size() == 60);
    for (const auto& s : ds.manifest.samples) {
        CHECK(s.shape == std::array<std::size_t, 4>{16, 1, 32, 32});
    }
    CHECK(ds.manifest.subjects().size() == 6);

    auto ds2 = generate_synthetic(cfg);
    REQUIRE(ds2.tensors.size() == ds.tensors.size());
    for (std::size_t i = 0; i < ds.tensors.size(); ++i) {
        CHECK(ds.tensors[i] == ds2.tensors[i]);  // byte-identical
    }
    CHECK(manifest_to_json(ds.manifest).dump() == manifest_to_json(ds2.manifest).dump());

    SECTION("every voxel within [0, 1]") {
        for (const auto& t : ds.tensors) {
            for (float v : t) {
                REQUIRE(v >= 0.0f);
                REQUIRE(v <= 1.0f);
            }
        }
    }
}

TEST_CASE("generator: configuration errors") {
    auto cfg = small_config();
    cfg.num_subjects = 0;
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);

    auto cfg2 = small_config();
    cfg2.au_region_centers[1] = {cfg2.au_region_centers[0].first + 3.0,
                                 cfg2.au_region_centers[0].second};
    CHECK_THROWS_AS(generate_synthetic(cfg2), ConfigError);

    auto cfg3 = small_config();
    cfg3.au_region_centers[0] = {40.0, 5.0};
    CHECK_THROWS_AS(generate_synthetic(cfg3), ConfigError);

    CHECK_THROWS_AS(SyntheticConfig::grid_centers(5, 16, 16), ConfigError);
    CHECK(SyntheticConfig::grid_centers(4, 16, 16).size() == 4);
}

TEST_CASE("label sampler: co-occurrence rule raises conditional frequency") {
    SyntheticConfig cfg = small_config();
    cfg.co_occurrence_rules = {{"AU1", "AU2", 0.9}};
    const auto coupling = synth_detail::coupling_matrix(cfg);

    std::size_t n11 = 0, n1 = 0, n01 = 0, n0 = 0;
    for (std::size_t i = 0; i < 10000; ++i) {
        Rng rng(fork_seed(3, "labels", i));
        const auto y = synth_detail::sample_labels(cfg, coupling, rng);
        if (y[0]) {
            ++n1;
            n11 += y[1];
        } else {
            ++n0;
            n01 += y[1];
        }
    }
    REQUIRE(n1 > 100);
    REQUIRE(n0 > 100);
    const double p_given_1 = static_cast<double>(n11) / static_cast<double>(n1);
    const double p_given_0 = static_cast<double>(n01) / static_cast<double>(n0);
    INFO("P(AU2|AU1=1)=" << p_given_1 << " P(AU2|AU1=0)=" << p_given_0);
    CHECK(p_given_1 > p_given_0 + 0.1);
}

TEST_CASE("label sampler: marginals match the base rate when rules are off") {
    SyntheticConfig cfg = small_config();
    cfg.co_occurrence_rules.clear();
    cfg.base_rate = 0.35;
    const auto coupling = synth_detail::coupling_matrix(cfg);
    std::vector<std::size_t> counts(cfg.num_aus(), 0);
    const std::size_t draws = 10000;
    for (std::size_t i = 0; i < draws; ++i) {
        Rng rng(fork_seed(11, "labels", i));
        const auto y = synth_detail::sample_labels(cfg, coupling, rng);
        for (std::size_t k = 0; k < y.size(); ++k) counts[k] += y[k];
    }
    for (std::size_t k = 0; k < counts.size(); ++k) {
        const double freq = static_cast<double>(counts[k]) / static_cast<double>(draws);
        INFO("AU index " << k << " frequency " << freq);
        CHECK(std::abs(freq - cfg.base_rate) < 0.03);
    }
}

TEST_CASE("dataset round-trip through disk is bitwise exact") {
    auto cfg = small_config();
    cfg.num_subjects = 3;
    cfg.clips_per_subject = 4;
    auto ds = generate_synthetic(cfg);

    const std::string dir = (fs::temp_directory_path() / "aullmxx_data_rt").string();
    fs::remove_all(dir);
    write_dataset(ds, dir);

    auto src = ManifestSource::open(dir);
    CHECK(src.manifest().sample_count == 12);
    CHECK(manifest_to_json(src.manifest()).dump() == manifest_to_json(ds.manifest).dump());
    for (std::size_t i = 0; i < ds.manifest.samples.size(); ++i) {
        auto [clip, labels] = src.load(ds.manifest.samples[i].clip_id);
        CHECK(clip.frames == ds.tensors[i]);
        CHECK(labels.values == ds.manifest.samples[i].labels);
        labels.validate();
    }

    SECTION("unknown clip id -> lookup error") {
        CHECK_THROWS_AS(src.load("missing"), LookupError);
    }
    SECTION("wrong byte length -> corruption error") {
        const auto path = fs::path(dir) / ds.manifest.samples[0].path;
        std::ofstream trunc(path, std::ios::binary | std::ios::trunc);
        trunc << "short";
        trunc.close();
        auto fresh = ManifestSource::open(dir);
        CHECK_THROWS_AS(fresh.load(ds.manifest.samples[0].clip_id), DataError);
    }
    SECTION("version mismatch -> explicit error") {
        auto j = manifest_to_json(ds.manifest);
        j["version"] = 9;
        CHECK_THROWS_AS(manifest_from_json(j), DataError);
    }
    SECTION("labels.csv header and row count") {
        std::ifstream csv(fs::path(dir) / "labels.csv");
        std::string header;
        std::getline(csv, header);
        CHECK(header.rfind("clip_id,subject_id,domain_id,AU1,", 0) == 0);
        std::size_t rows = 0;
        std::string line;
        while (std::getline(csv, line)) {
            if (!line.empty()) ++rows;
        }
        CHECK(rows == 12);
    }
}

TEST_CASE("loso folds: partition and subject disjointness") {
    // 3 subjects with 2 / 3 / 1 clips
    DatasetManifest m;
    m.au_names = {"AU1"};
    auto add = [&](const std::string& cid, const std::string& sid) {
        SampleRecord r;
        r.clip_id = cid;
        r.subject_id = sid;
        r.domain_id = "base";
        r.labels = {0};
        r.path = cid + ".f32";
        r.shape = {2, 1, 8, 8};
        m.samples.push_back(r);
    };
    add("a0", "s1");
    add("a1", "s1");
    add("b0", "s2");
    add("b1", "s2");
    add("b2", "s2");
    add("c0", "s3");
    m.sample_count = m.samples.size();

    const auto folds = loso_folds(m);
    REQUIRE(folds.size() == 3);
    CHECK(folds[0].test_ids.size() == 2);
    CHECK(folds[0].train_ids.size() == 4);
    CHECK(folds[1].test_ids.size() == 3);
    CHECK(folds[1].train_ids.size() == 3);
    CHECK(folds[2].test_ids.size() == 1);
    CHECK(folds[2].train_ids.size() == 5);

    std::set<std::size_t> all_test;
    for (const auto& f : folds) {
        for (auto id : f.test_ids) {
            CHECK(m.samples[id].subject_id == f.held_out_subject);
            CHECK(all_test.insert(id).second);  // pairwise disjoint
        }
        for (auto id : f.train_ids) {
            CHECK(m.samples[id].subject_id != f.held_out_subject);
        }
    }
    CHECK(all_test.size() == m.samples.size());  // jointly exhaustive

    SECTION("single subject -> error") {
        DatasetManifest solo;
        solo.au_names = {"AU1"};
        add("z", "only");  // adds to m, build solo manually
        solo.samples = {m.samples.back()};
        solo.sample_count = 1;
        CHECK_THROWS_AS(loso_folds(solo), ConfigError);
    }
}

TEST_CASE("synthetic config from key-value text") {
    auto cfg = Config::parse_text(
        "version 1\n"
        "seed 5\n"
        "synth.num_subjects 4\n"
        "synth.clips_per_subject 3\n"
        "synth.au_names AU1 AU2 AU4 AU12\n"
        "synth.t 8\nsynth.h 16\nsynth.w 16\n"
        "synth.rule AU1 AU2 0.9\n"
        "synth.rule AU4 AU12 -0.8\n"
        "synth.domain base 0.0 0.005\n"
        "synth.domain shifted 0.1 0.02\n");
    auto s = SyntheticConfig::from_config(cfg);
    CHECK(s.seed == 5);
    CHECK(s.au_names.size() == 4);
    CHECK(s.co_occurrence_rules.size() == 2);
    CHECK(s.domain_styles.size() == 2);
    CHECK(s.au_region_centers.size() == 4);

    auto ds = generate_synthetic(s);
    CHECK(ds.manifest.sample_count == 12);
    std::set<std::string> domains;
    for (const auto& rec : ds.manifest.samples) domains.insert(rec.domain_id);
    CHECK(domains == std::set<std::string>{"base", "shifted"});
}
