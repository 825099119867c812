#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "aullmxx/core/gradcheck.hpp"
#include "aullmxx/model/r_augnn.hpp"

using namespace aullmxx;
using model::build_prior_graph;
using model::GraphMode;
using model::RAugnn;
using D = double;

namespace {
const std::vector<std::string> kAus{"AU1", "AU2", "AU4", "AU12"};
}

TEST_CASE("prior graph construction") {
    SECTION("single synergy rule placed symmetrically") {
        auto g = build_prior_graph({"AU1", "AU2", "AU4"}, {{"AU1", "AU2", 0.8}});
        CHECK(g.a_prior[0 * 3 + 1] == 0.8);
        CHECK(g.a_prior[1 * 3 + 0] == 0.8);
        double sum = 0;
        for (auto v : g.a_prior.data()) sum += std::abs(v);
        CHECK(sum == Catch::Approx(1.6));
    }
    SECTION("empty rule list degenerates to the zero matrix") {
        auto g = build_prior_graph(kAus, {});
        for (auto v : g.a_prior.data()) CHECK(v == 0.0);
    }
    SECTION("inhibition rule keeps its sign") {
        auto g = build_prior_graph({"AU12", "AU15"}, {{"AU12", "AU15", -0.6}});
        CHECK(g.a_prior[1] == -0.6);
        CHECK(g.a_prior[2] == -0.6);
    }
    SECTION("errors") {
        CHECK_THROWS_AS(build_prior_graph(kAus, {{"AU1", "AU99", 0.5}}), LookupError);
        CHECK_THROWS_AS(build_prior_graph(kAus, {{"AU1", "AU2", 0.5}, {"AU1", "AU2", 0.7}}),
                        ConfigError);
        CHECK_THROWS_AS(build_prior_graph(kAus, {{"AU1", "AU1", 0.5}}), ConfigError);
        CHECK_THROWS_AS(build_prior_graph(kAus, {{"AU1", "AU2", 1.5}}), ConfigError);
        // idempotent duplicate allowed
        CHECK_NOTHROW(build_prior_graph(kAus, {{"AU1", "AU2", 0.5}, {"AU2", "AU1", 0.5}}));
    }
    SECTION("rule text parser") {
        auto rules = model::parse_rules_text("# comment\nAU1 AU2 0.8\n\nAU4 AU12 -0.4 # tail\n");
        REQUIRE(rules.size() == 2);
        CHECK(rules[1].strength == -0.4);
        CHECK_THROWS_AS(model::parse_rules_text("AU1 AU2\n"), ConfigError);
    }
    SECTION("ablation prior matrices") {
        auto g = build_prior_graph(kAus, model::parse_rules_text("AU1 AU2 0.8\n"));
        auto full = model::prior_matrix_for_mode(g, GraphMode::full);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                CHECK(full[i * 4 + j] == (i == j ? 0.0 : 1.0));
        auto self_only = model::prior_matrix_for_mode(g, GraphMode::selfloop);
        for (auto v : self_only.data()) CHECK(v == 0.0);
        CHECK(model::prior_matrix_for_mode(g, GraphMode::facs).data() == g.a_prior.data());
    }
}

TEST_CASE("node state initialization") {
    ParamStore<D> ps;
    Rng rng(3);
    RAugnn<D> net(ps, "r_augnn", 2, 3, 3, 4, 2, 0.7, rng);

    SECTION("zero features and zero biases give zero states") {
        ps.get("r_augnn.init.b")->value.fill(0.0);
        auto z = constant(Tensor<D>({1, 3, 2, 2, 2}));
        auto h0 = net.init_node_states(z);
        for (std::size_t i = 0; i < h0->value.size(); ++i) CHECK(h0->value[i] == 0.0);
    }
    SECTION("identity and doubled projections") {
        auto& p = ps.get("r_augnn.init.p")->value;
        p.fill(0.0);
        for (std::size_t i = 0; i < 3; ++i) {
            p[0 * 9 + i * 3 + i] = 1.0;  // P_0 = I
            p[1 * 9 + i * 3 + i] = 2.0;  // P_1 = 2I
        }
        ps.get("r_augnn.init.b")->value.fill(0.0);
        Tensor<D> f({1, 3, 1, 1, 1});
        f[0] = 0.3;
        f[1] = -0.7;
        f[2] = 1.1;
        auto h0 = net.init_node_states(constant(std::move(f)));
        CHECK(h0->value[0] == Catch::Approx(0.3));
        CHECK(h0->value[1] == Catch::Approx(-0.7));
        CHECK(h0->value[2] == Catch::Approx(1.1));
        CHECK(h0->value[3] == Catch::Approx(0.6));
        CHECK(h0->value[4] == Catch::Approx(-1.4));
        CHECK(h0->value[5] == Catch::Approx(2.2));
    }
    SECTION("shape contract") {
        ParamStore<D> ps8;
        Rng r8(5);
        RAugnn<D> net8(ps8, "r_augnn", 8, 64, 32, 64, 2, 0.7, r8);
        Rng ir(7);
        auto f = constant(Tensor<D>::randn({3, 64, 2, 2, 2}, ir));
        auto h0 = net8.init_node_states(f);
        CHECK(h0->value.shape() == std::vector<std::size_t>{3, 8, 32});
    }
}

TEST_CASE("dynamic attention") {
    ParamStore<D> ps;
    Rng rng(11);
    RAugnn<D> net(ps, "r_augnn", 3, 4, 4, 4, 2, 0.7, rng);

    SECTION("identical node states give uniform rows") {
        Tensor<D> h({2, 3, 4});
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t d = 0; d < 4; ++d) h[(b * 3 + i) * 4 + d] = 0.37 + 0.1 * b;
        auto a = net.dynamic_attention(constant(std::move(h)));
        for (std::size_t i = 0; i < a->value.size(); ++i) {
            CHECK(a->value[i] == Catch::Approx(1.0 / 3.0).margin(1e-12));
        }
    }
    SECTION("rows stochastic and nonnegative for random states") {
        Rng ir(13);
        auto a = net.dynamic_attention(constant(Tensor<D>::randn({4, 3, 4}, ir)));
        for (std::size_t r = 0; r < 12; ++r) {
            double sum = 0;
            for (std::size_t j = 0; j < 3; ++j) {
                CHECK(a->value[r * 3 + j] >= 0.0);
                sum += a->value[r * 3 + j];
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("adjacency fusion") {
    ParamStore<D> ps;
    Rng rng(17);
    RAugnn<D> net(ps, "r_augnn", 2, 4, 4, 4, 2, 0.7, rng);
    Tensor<D> prior({2, 2}, {0.0, 0.2, 0.2, 0.0});
    Tensor<D> dyn_t({1, 2, 2}, {0.6, 0.4, 0.6, 0.4});
    auto dyn = constant(dyn_t);

    SECTION("alpha limits") {
        ps.get("r_augnn.alpha_logit")->value[0] = 40.0;
        auto a_hi = net.fuse_adjacency(prior, dyn);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(a_hi->value[i] == Catch::Approx(prior[i]).margin(1e-6));
        }
        ps.get("r_augnn.alpha_logit")->value[0] = -40.0;
        auto a_lo = net.fuse_adjacency(prior, dyn);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(a_lo->value[i] == Catch::Approx(dyn_t[i]).margin(1e-6));
        }
    }
    SECTION("alpha = 0.5 blend of 0.2 and 0.6 is 0.4") {
        ps.get("r_augnn.alpha_logit")->value[0] = 0.0;
        auto a = net.fuse_adjacency(prior, dyn);
        CHECK(a->value[0] == Catch::Approx(0.3).margin(1e-12));   // 0.5*0 + 0.5*0.6
        CHECK(a->value[2] == Catch::Approx(0.4).margin(1e-12));   // 0.5*0.2 + 0.5*0.6
    }
    SECTION("row-sum identity") {
        ps.get("r_augnn.alpha_logit")->value[0] = 0.8473;
        const double alpha = 1.0 / (1.0 + std::exp(-0.8473));
        auto a = net.fuse_adjacency(prior, dyn);
        for (std::size_t i = 0; i < 2; ++i) {
            double lhs = 0, prior_row = 0, dyn_row = 0;
            for (std::size_t j = 0; j < 2; ++j) {
                lhs += a->value[i * 2 + j];
                prior_row += prior[i * 2 + j];
                dyn_row += dyn_t[i * 2 + j];
            }
            CHECK(std::abs(lhs - (alpha * prior_row + (1 - alpha) * dyn_row)) < 1e-12);
        }
    }
    SECTION("shape mismatch rejected") {
        Tensor<D> bad({3, 3});
        CHECK_THROWS_AS(net.fuse_adjacency(bad, dyn), ShapeError);
    }
}

TEST_CASE("graph propagation") {
    SECTION("zero adjacency with identity weights is the identity") {
        ParamStore<D> ps;
        Rng rng(19);
        RAugnn<D> net(ps, "r_augnn", 2, 4, 3, 4, 1, 0.7, rng);
        ps.get("r_augnn.gcn.w0")->value = Tensor<D>::identity(3);
        Rng ir(23);
        auto h0 = constant(Tensor<D>::randn({2, 2, 3}, ir));
        auto a0 = constant(Tensor<D>({2, 2, 2}));
        auto h1 = net.gcn_forward(h0, a0);
        for (std::size_t i = 0; i < h1->value.size(); ++i) {
            CHECK(h1->value[i] == Catch::Approx(h0->value[i]).margin(1e-12));
        }
    }
    SECTION("two-node hand propagation") {
        ParamStore<D> ps;
        Rng rng(29);
        RAugnn<D> net(ps, "r_augnn", 2, 4, 2, 4, 1, 0.7, rng);
        ps.get("r_augnn.gcn.w0")->value = Tensor<D>::identity(2);
        auto h0 = constant(Tensor<D>({1, 2, 2}, {2, 0, 0, 2}));
        auto a = constant(Tensor<D>({1, 2, 2}, {0, 1, 1, 0}));
        auto h1 = net.gcn_forward(h0, a);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(h1->value[i] == Catch::Approx(1.0).margin(1e-12));
        }
    }
    SECTION("signed inhibition keeps degrees positive and output finite") {
        ParamStore<D> ps;
        Rng rng(31);
        RAugnn<D> net(ps, "r_augnn", 2, 4, 2, 4, 2, 0.7, rng);
        auto h0 = constant(Tensor<D>({1, 2, 2}, {1, -1, 2, 0.5}));
        auto a = constant(Tensor<D>({1, 2, 2}, {0, -0.9, -0.9, 0}));
        auto h1 = net.gcn_forward(h0, a);
        CHECK(h1->value.all_finite());
    }
    SECTION("non-finite adjacency rejected") {
        ParamStore<D> ps;
        Rng rng(37);
        RAugnn<D> net(ps, "r_augnn", 2, 4, 2, 4, 2, 0.7, rng);
        Tensor<D> bad({1, 2, 2});
        bad[1] = std::nan("");
        CHECK_THROWS_AS(net.gcn_forward(constant(Tensor<D>({1, 2, 2})), constant(std::move(bad))),
                        InputError);
    }
}

TEST_CASE("instruction token emission") {
    ParamStore<D> ps;
    Rng rng(41);
    RAugnn<D> net(ps, "r_augnn", 8, 4, 32, 64, 2, 0.7, rng);

    SECTION("zero states with zero biases emit zero tokens") {
        auto tau = net.emit_instruction_tokens(constant(Tensor<D>({1, 8, 32})));
        for (std::size_t i = 0; i < tau->value.size(); ++i) CHECK(tau->value[i] == 0.0);
    }
    SECTION("shape contract 8x64 and shared map property") {
        Rng ir(43);
        Tensor<D> h({1, 8, 32});
        auto row = Tensor<D>::randn({32}, ir);
        for (std::size_t i = 0; i < 8; ++i) {
            std::copy(row.data().begin(), row.data().end(), h.ptr() + i * 32);
        }
        auto tau = net.emit_instruction_tokens(constant(std::move(h)));
        CHECK(tau->value.shape() == std::vector<std::size_t>{1, 8, 64});
        for (std::size_t i = 1; i < 8; ++i) {
            for (std::size_t d = 0; d < 64; ++d) {
                CHECK(tau->value[i * 64 + d] == Catch::Approx(tau->value[d]).margin(1e-12));
            }
        }
    }
}

TEST_CASE("permutation equivariance end to end") {
    const std::size_t N = 4, C2 = 6, d = 5, Dw = 7;
    const std::vector<std::size_t> perm{2, 0, 3, 1};  // new index -> old index

    ParamStore<D> ps;
    Rng rng(47);
    RAugnn<D> net(ps, "r_augnn", N, C2, d, Dw, 2, 0.7, rng);
    auto prior =
        build_prior_graph({"AU1", "AU2", "AU4", "AU12"},
                          {{"AU1", "AU2", 0.8}, {"AU2", "AU4", -0.5}, {"AU1", "AU12", 0.3}});

    ParamStore<D> ps2;
    Rng rng2(47);
    RAugnn<D> net2(ps2, "r_augnn", N, C2, d, Dw, 2, 0.7, rng2);
    // copy shared parameters, permute the per-AU ones
    for (const auto& e : ps.entries()) {
        ps2.get(e.name)->value = e.var->value;
    }
    for (std::size_t i = 0; i < N; ++i) {
        const auto& src_p = ps.get("r_augnn.init.p")->value;
        auto& dst_p = ps2.get("r_augnn.init.p")->value;
        std::copy(src_p.ptr() + perm[i] * d * C2, src_p.ptr() + (perm[i] + 1) * d * C2,
                  dst_p.ptr() + i * d * C2);
        const auto& src_b = ps.get("r_augnn.init.b")->value;
        auto& dst_b = ps2.get("r_augnn.init.b")->value;
        std::copy(src_b.ptr() + perm[i] * d, src_b.ptr() + (perm[i] + 1) * d,
                  dst_b.ptr() + i * d);
    }
    Tensor<D> prior_perm({N, N});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j)
            prior_perm[i * N + j] = prior.a_prior[perm[i] * N + perm[j]];

    Rng ir(53);
    auto f_high = constant(Tensor<D>::randn({2, C2, 1, 2, 2}, ir));
    auto base = net.instruction_tokens(f_high, prior.a_prior.cast<D>());
    auto permuted = net2.instruction_tokens(f_high, prior_perm);

    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t k = 0; k < Dw; ++k) {
                const double got = permuted.tau->value[(b * N + i) * Dw + k];
                const double want = base.tau->value[(b * N + perm[i]) * Dw + k];
                REQUIRE(got == Catch::Approx(want).margin(1e-9));
            }
}

TEST_CASE("r-augnn: full-path gradients match finite differences") {
    ParamStore<D> ps;
    Rng rng(59);
    RAugnn<D> net(ps, "r_augnn", 3, 4, 4, 5, 2, 0.7, rng);
    auto prior = build_prior_graph({"AU1", "AU2", "AU4"}, {{"AU1", "AU2", 0.8}}).a_prior.cast<D>();
    Rng ir(61);
    auto f_high = make_leaf(Tensor<D>::randn({2, 4, 1, 2, 2}, ir, 0.5), true);
    Rng wr(67);
    Tensor<D> w = Tensor<D>::randn({2, 3, 5}, wr);
    auto make_loss = [&]() {
        auto out = net.instruction_tokens(f_high, prior);
        return ops::sum_all(ops::mul(out.tau, constant(Tensor<D>(w))));
    };
    std::vector<Var<D>> params{f_high};
    for (const auto& e : ps.entries()) params.push_back(e.var);
    Rng cr(71);
    auto report = gradcheck<D>(make_loss, params, 10, cr);
    INFO("worst " << report.worst_param << " rel " << report.max_rel_err);
    CHECK(report.max_rel_err < 1e-4);
    // the alpha logit is explicitly part of the checked surface
    bool has_alpha = false;
    for (const auto& p : params) {
        if (p->name == "r_augnn.alpha_logit") has_alpha = p->grad_alloc;
    }
    CHECK(has_alpha);
}
