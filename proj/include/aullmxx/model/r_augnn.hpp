#ifndef AULLMXX_MODEL_R_AUGNN_HPP
#define AULLMXX_MODEL_R_AUGNN_HPP

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aullmxx/core/ops.hpp"
#include "aullmxx/core/ops_nn.hpp"
#include "aullmxx/core/params.hpp"
#include "aullmxx/data/types.hpp"

namespace aullmxx::model {

struct AuRule {
    std::string a;
    std::string b;
    double strength{0.0};
};

// Rule file format: one `AU_i AU_j strength` per line, `#` comments.
inline std::vector<AuRule> parse_rules_text(const std::string& text) {
    std::vector<AuRule> rules;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        AuRule r;
        if (!(ls >> r.a)) continue;  // blank line
        if (!(ls >> r.b >> r.strength)) {
            throw ConfigError("rule file line " + std::to_string(lineno) +
                              ": expected 'AU_i AU_j strength'");
        }
        rules.push_back(std::move(r));
    }
    return rules;
}

inline std::vector<AuRule> load_rules_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open rule file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_rules_text(buf.str());
}

// Editable convention, not ground truth: common FACS co-occurrence lore over
// the default 8-AU set.
inline std::vector<AuRule> default_facs_rules() {
    return {{"AU1", "AU2", 0.8},  {"AU4", "AU7", 0.7},   {"AU6", "AU12", 0.8},
            {"AU1", "AU4", 0.4},  {"AU15", "AU17", 0.5}, {"AU12", "AU15", -0.6},
            {"AU12", "AU4", -0.4}};
}

struct PriorGraph {
    std::vector<std::string> au_names;
    Tensor<double> a_prior;  // N x N, symmetric, zero diagonal
    std::string rule_source;

    void validate() const {
        const std::size_t n = au_names.size();
        if (a_prior.shape() != std::vector<std::size_t>{n, n}) {
            throw ShapeError("prior graph: matrix shape mismatch");
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (a_prior[i * n + i] != 0.0) throw InputError("prior graph: nonzero diagonal");
            for (std::size_t j = 0; j < n; ++j) {
                const double v = a_prior[i * n + j];
                if (std::abs(v) > 1.0) throw InputError("prior graph: entry outside [-1, 1]");
                if (v != a_prior[j * n + i]) throw InputError("prior graph: asymmetric");
            }
        }
    }
};

inline PriorGraph build_prior_graph(const std::vector<std::string>& au_names,
                                    const std::vector<AuRule>& rules,
                                    std::string rule_source = "rules") {
    const std::size_t n = au_names.size();
    PriorGraph g;
    g.au_names = au_names;
    g.a_prior = Tensor<double>({n, n});
    g.rule_source = std::move(rule_source);
    for (const auto& r : rules) {
        const std::size_t i = data::SyntheticConfig::index_of(au_names, r.a);
        const std::size_t j = data::SyntheticConfig::index_of(au_names, r.b);
        if (i == j) throw ConfigError("prior graph: self-rule on " + r.a);
        if (std::abs(r.strength) > 1.0) {
            throw ConfigError("prior graph: rule strength outside [-1, 1]");
        }
        const double existing = g.a_prior[i * n + j];
        if (existing != 0.0 && existing != r.strength) {
            throw ConfigError("prior graph: conflicting duplicate rule " + r.a + "-" + r.b);
        }
        g.a_prior[i * n + j] = g.a_prior[j * n + i] = r.strength;
    }
    g.validate();
    return g;
}

enum class GraphMode { facs, full, selfloop };

inline GraphMode graph_mode_from_string(const std::string& s) {
    if (s == "facs") return GraphMode::facs;
    if (s == "full") return GraphMode::full;
    if (s == "selfloop") return GraphMode::selfloop;
    throw ConfigError("unknown graph mode: " + s);
}

// FACS prior, all-ones off-diagonal, or zeros; the only code-path difference
// between the topology ablations.
inline Tensor<double> prior_matrix_for_mode(const PriorGraph& g, GraphMode mode) {
    const std::size_t n = g.au_names.size();
    switch (mode) {
        case GraphMode::full: {
            Tensor<double> m({n, n});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) m[i * n + j] = i == j ? 0.0 : 1.0;
            return m;
        }
        case GraphMode::selfloop:
            return Tensor<double>({n, n});
        case GraphMode::facs:
        default:
            return g.a_prior;
    }
}

// Prior-guided relation graph: class-specific node init from pooled high
// features, dense pairwise attention, alpha-blend with the prior, symmetric
// degree-normalized propagation, shared MLP token emission.
template <typename Real>
class RAugnn {
public:
    RAugnn(ParamStore<Real>& ps, const std::string& prefix, std::size_t n, std::size_t c2,
           std::size_t d, std::size_t token_width, std::size_t layers, double alpha_init, Rng& rng)
        : n_(n), d_(d), layers_(layers) {
        const Real pi_std = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(c2)));
        init_p_ = ps.add(prefix + ".init.p", Tensor<Real>::randn({n, d, c2}, rng, pi_std));
        init_b_ = ps.add(prefix + ".init.b", Tensor<Real>({n, d}));
        const Real d_std = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d)));
        attn_wq_ = ps.add(prefix + ".attn.wq", Tensor<Real>::randn({d, d}, rng, d_std));
        attn_wk_ = ps.add(prefix + ".attn.wk", Tensor<Real>::randn({d, d}, rng, d_std));
        attn_aq_ = ps.add(prefix + ".attn.a_q", Tensor<Real>::randn({1, d}, rng, d_std));
        attn_ak_ = ps.add(prefix + ".attn.a_k", Tensor<Real>::randn({1, d}, rng, d_std));
        const double logit = std::log(alpha_init / (1.0 - alpha_init));
        alpha_logit_ = ps.add(prefix + ".alpha_logit", Tensor<Real>::scalar(static_cast<Real>(logit)));
        for (std::size_t l = 0; l < layers; ++l) {
            gcn_w_.push_back(ps.add(prefix + ".gcn.w" + std::to_string(l),
                                    Tensor<Real>::randn({d, d}, rng, d_std)));
        }
        const Real m_std = static_cast<Real>(std::sqrt(2.0 / static_cast<double>(d)));
        mlp_w1_ = ps.add(prefix + ".mlp.w1", Tensor<Real>::randn({d, d}, rng, m_std));
        mlp_b1_ = ps.add(prefix + ".mlp.b1", Tensor<Real>({d}));
        mlp_w2_ = ps.add(prefix + ".mlp.w2", Tensor<Real>::randn({token_width, d}, rng, d_std));
        mlp_b2_ = ps.add(prefix + ".mlp.b2", Tensor<Real>({token_width}));
    }

    // h_i^(0) = P_i GlobalAvgPool(f_high) + b_i
    Var<Real> init_node_states(const Var<Real>& f_high) const {
        if (!f_high->value.all_finite()) throw InputError("init_node_states: non-finite input");
        return ops::per_class_projection(ops::global_avg_pool(f_high), init_p_, init_b_);
    }

    // Dense, unmasked attention over all node pairs including self.
    Var<Real> dynamic_attention(const Var<Real>& h0) const {
        const std::size_t B = h0->value.dim(0);
        auto q = ops::linear(h0, attn_wq_);
        auto k = ops::linear(h0, attn_wk_);
        auto sq = ops::reshape(ops::linear(q, attn_aq_), {B, n_});
        auto sk = ops::reshape(ops::linear(k, attn_ak_), {B, n_});
        auto e = ops::leaky_relu(ops::pairwise_sum(sq, sk), Real(0.2));
        return ops::softmax_last(e);
    }

    Var<Real> alpha() const { return ops::sigmoid(alpha_logit_); }
    Var<Real> alpha_logit() const { return alpha_logit_; }

    // A_hat = alpha * A_prior + (1 - alpha) * A_dynamic
    Var<Real> fuse_adjacency(const Tensor<Real>& a_prior, const Var<Real>& a_dynamic) const {
        if (a_prior.size() != n_ * n_ || a_dynamic->value.dim(1) != n_) {
            throw ShapeError("fuse_adjacency: shape mismatch");
        }
        auto a = alpha();
        auto prior_term = ops::scale_by(constant(Tensor<Real>(a_prior)), a);
        auto dyn_term = ops::scale_by(a_dynamic, ops::affine(a, Real(-1), Real(1)));
        return ops::broadcast_add_mat(dyn_term, prior_term);
    }

    // H^(l+1) = sigma(D^(-1/2) (A_hat + I) D^(-1/2) H^(l) W^(l)); degrees from
    // absolute values so inhibitory edges keep the normalization real; the
    // last layer has no nonlinearity.
    Var<Real> gcn_forward(const Var<Real>& h0, const Var<Real>& a_hat) const {
        if (!a_hat->value.all_finite()) throw InputError("gcn_forward: non-finite adjacency");
        auto with_loops = ops::add_identity(a_hat);
        auto degree = ops::rowsum_last(ops::abs_val(with_loops));
        auto scale = ops::pow_scalar(degree, Real(-0.5));
        auto norm = ops::mul(with_loops, ops::outer_rows(scale));
        auto h = h0;
        for (std::size_t l = 0; l < layers_; ++l) {
            h = ops::linear(ops::bmm(norm, h), gcn_w_[l]);
            if (l + 1 < layers_) h = ops::relu(h);
        }
        return h;
    }

    // tau_au = MLP(H^(L)), shared two-layer perceptron applied per node.
    Var<Real> emit_instruction_tokens(const Var<Real>& h_last) const {
        if (!h_last->value.all_finite()) throw InputError("emit_instruction_tokens: non-finite input");
        return ops::linear(ops::relu(ops::linear(h_last, mlp_w1_, mlp_b1_)), mlp_w2_, mlp_b2_);
    }

    struct Outputs {
        Var<Real> h0;
        Var<Real> a_dynamic;
        Var<Real> a_hat;
        Var<Real> h_last;
        Var<Real> tau;
    };

    Outputs instruction_tokens(const Var<Real>& f_high, const Tensor<Real>& a_prior) const {
        Outputs out;
        out.h0 = init_node_states(f_high);
        out.a_dynamic = dynamic_attention(out.h0);
        out.a_hat = fuse_adjacency(a_prior, out.a_dynamic);
        out.h_last = gcn_forward(out.h0, out.a_hat);
        out.tau = emit_instruction_tokens(out.h_last);
        return out;
    }

    std::size_t num_nodes() const { return n_; }

private:
    std::size_t n_, d_, layers_;
    Var<Real> init_p_, init_b_;
    Var<Real> attn_wq_, attn_wk_, attn_aq_, attn_ak_;
    Var<Real> alpha_logit_;
    std::vector<Var<Real>> gcn_w_;
    Var<Real> mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
};

}  // namespace aullmxx::model

#endif  // AULLMXX_MODEL_R_AUGNN_HPP
