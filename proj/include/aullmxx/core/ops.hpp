#ifndef AULLMXX_CORE_OPS_HPP
#define AULLMXX_CORE_OPS_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "aullmxx/core/autograd.hpp"

namespace aullmxx::ops {

template <typename Real>
using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using Map = Eigen::Map<EMat<Real>>;
template <typename Real>
using CMap = Eigen::Map<const EMat<Real>>;

template <typename Real>
Map<Real> map2d(Tensor<Real>& t, std::size_t rows, std::size_t cols) {
    return Map<Real>(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename Real>
CMap<Real> cmap2d(const Tensor<Real>& t, std::size_t rows, std::size_t cols) {
    return CMap<Real>(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename Real>
void require_same_shape(const Var<Real>& a, const Var<Real>& b, const char* what) {
    if (!a->value.same_shape(b->value)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a->value.shape_str() + " vs " +
                         b->value.shape_str());
    }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename Real, typename Fwd, typename Dfn>
Var<Real> unary_op(const Var<Real>& x, Fwd f, Dfn df) {
    Tensor<Real> out(x->value.shape());
    const Real* in = x->value.ptr();
    Real* o = out.ptr();
    const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(static) if (count > 16384)
    for (std::ptrdiff_t i = 0; i < count; ++i) o[i] = f(in[i]);
    return make_node<Real>(std::move(out), {x}, [x, df](Node<Real>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const Real* in = x->value.ptr();
        const Real* g = n.grad.ptr();
        const Real* o = n.value.ptr();
        Real* gx = x->grad.ptr();
        const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(n.grad.size());
#pragma omp parallel for schedule(static) if (count > 16384)
        for (std::ptrdiff_t i = 0; i < count; ++i) gx[i] += g[i] * df(in[i], o[i]);
    });
}

template <typename Real>
Var<Real> relu(const Var<Real>& x) {
    return unary_op(
        x, [](Real v) { return v > Real(0) ? v : Real(0); },
        [](Real v, Real) { return v > Real(0) ? Real(1) : Real(0); });
}

template <typename Real>
Var<Real> leaky_relu(const Var<Real>& x, Real slope) {
    return unary_op(
        x, [slope](Real v) { return v > Real(0) ? v : slope * v; },
        [slope](Real v, Real) { return v > Real(0) ? Real(1) : slope; });
}

template <typename Real>
Var<Real> sigmoid(const Var<Real>& x) {
    return unary_op(
        x, [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
        [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
Var<Real> gelu(const Var<Real>& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary_op(
        x,
        [=](Real v) {
            return static_cast<Real>(0.5 * static_cast<double>(v) *
                                     (1.0 + std::erf(static_cast<double>(v) * inv_sqrt2)));
        },
        [=](Real v, Real) {
            const double d = static_cast<double>(v);
            return static_cast<Real>(0.5 * (1.0 + std::erf(d * inv_sqrt2)) +
                                     d * inv_sqrt2pi * std::exp(-0.5 * d * d));
        });
}

template <typename Real>
Var<Real> abs_val(const Var<Real>& x) {
    return unary_op(
        x, [](Real v) { return v < Real(0) ? -v : v; },
        [](Real v, Real) { return v < Real(0) ? Real(-1) : (v > Real(0) ? Real(1) : Real(0)); });
}

template <typename Real>
Var<Real> log_val(const Var<Real>& x) {
    return unary_op(
        x, [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1) / v; });
}

// out = x^p elementwise; callers keep x > 0 for fractional p.
template <typename Real>
Var<Real> pow_scalar(const Var<Real>& x, Real p) {
    return unary_op(
        x, [p](Real v) { return std::pow(v, p); },
        [p](Real v, Real) { return p * std::pow(v, p - Real(1)); });
}

template <typename Real>
Var<Real> clamp(const Var<Real>& x, Real lo, Real hi) {
    return unary_op(
        x, [lo, hi](Real v) { return v < lo ? lo : (v > hi ? hi : v); },
        [lo, hi](Real v, Real) { return (v > lo && v < hi) ? Real(1) : Real(0); });
}

// out = k*x + c elementwise (k, c compile-time constants of the graph).
template <typename Real>
Var<Real> affine(const Var<Real>& x, Real k, Real c) {
    return unary_op(
        x, [k, c](Real v) { return k * v + c; }, [k](Real, Real) { return k; });
}

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
    require_same_shape(a, b, "add");
    Tensor<Real> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
    return make_node<Real>(std::move(out), {a, b}, [a, b](Node<Real>& n) {
        accumulate(a, n.grad);
        accumulate(b, n.grad);
    });
}

template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
    require_same_shape(a, b, "sub");
    Tensor<Real> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
    return make_node<Real>(std::move(out), {a, b}, [a, b](Node<Real>& n) {
        accumulate(a, n.grad);
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad[i] -= n.grad[i];
        }
    });
}

template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
    require_same_shape(a, b, "mul");
    Tensor<Real> out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
    return make_node<Real>(std::move(out), {a, b}, [a, b](Node<Real>& n) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad[i] += n.grad[i] * a->value[i];
        }
    });
}

// out = x * s where s is a 1-element Var (learnable scalar such as the
// enhancement coefficient).
template <typename Real>
Var<Real> scale_by(const Var<Real>& x, const Var<Real>& s) {
    if (s->value.size() != 1) throw ShapeError("scale_by: scalar expected");
    Tensor<Real> out(x->value.shape());
    const Real sv = s->value[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] * sv;
    return make_node<Real>(std::move(out), {x, s}, [x, s](Node<Real>& n) {
        if (x->requires_grad) {
            x->ensure_grad();
            const Real sv = s->value[0];
            for (std::size_t i = 0; i < n.grad.size(); ++i) x->grad[i] += n.grad[i] * sv;
        }
        if (s->requires_grad) {
            s->ensure_grad();
            Real acc = Real(0);
            for (std::size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i] * x->value[i];
            s->grad[0] += acc;
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename Real>
Var<Real> sum_all(const Var<Real>& x) {
    Real acc = Real(0);
    for (std::size_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
    return make_node<Real>(Tensor<Real>::scalar(acc), {x}, [x](Node<Real>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const Real g = n.grad[0];
        for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
    });
}

template <typename Real>
Var<Real> mean_all(const Var<Real>& x) {
    return affine(sum_all(x), Real(1) / static_cast<Real>(x->value.size()), Real(0));
}

// Sum over the last axis: [..., n] -> [...].
template <typename Real>
Var<Real> rowsum_last(const Var<Real>& x) {
    const auto& sh = x->value.shape();
    if (sh.empty()) throw ShapeError("rowsum_last: rank 0");
    const std::size_t n = sh.back();
    const std::size_t rows = x->value.size() / n;
    std::vector<std::size_t> osh(sh.begin(), sh.end() - 1);
    if (osh.empty()) osh = {1};
    Tensor<Real> out(osh);
    for (std::size_t r = 0; r < rows; ++r) {
        Real acc = Real(0);
        for (std::size_t j = 0; j < n; ++j) acc += x->value[r * n + j];
        out[r] = acc;
    }
    return make_node<Real>(std::move(out), {x}, [x, n, rows](Node<Real>& nd) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const Real g = nd.grad[r];
            for (std::size_t j = 0; j < n; ++j) x->grad[r * n + j] += g;
        }
    });
}

// ---------------------------------------------------------------------------
// Shape / sequence ops
// ---------------------------------------------------------------------------

template <typename Real>
Var<Real> reshape(const Var<Real>& x, std::vector<std::size_t> shape) {
    if (Tensor<Real>::count(shape) != x->value.size()) throw ShapeError("reshape: size mismatch");
    Tensor<Real> out(std::move(shape), std::vector<Real>(x->value.data()));
    return make_node<Real>(std::move(out), {x}, [x](Node<Real>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) x->grad[i] += n.grad[i];
    });
}

template <typename Real>
Var<Real> transpose_last2(const Var<Real>& x) {
    const auto& sh = x->value.shape();
    if (sh.size() < 2) throw ShapeError("transpose_last2: rank < 2");
    const std::size_t n = sh[sh.size() - 2], m = sh.back();
    const std::size_t outer = x->value.size() / (n * m);
    std::vector<std::size_t> osh(sh);
    std::swap(osh[osh.size() - 2], osh[osh.size() - 1]);
    Tensor<Real> out(osh);
    for (std::size_t o = 0; o < outer; ++o) {
        const Real* src = x->value.ptr() + o * n * m;
        Real* dst = out.ptr() + o * n * m;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) dst[j * n + i] = src[i * m + j];
    }
    return make_node<Real>(std::move(out), {x}, [x, n, m, outer](Node<Real>& nd) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
            const Real* g = nd.grad.ptr() + o * n * m;
            Real* gx = x->grad.ptr() + o * n * m;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[j * n + i];
        }
    });
}

// Concatenate [B, L_i, D] parts along the sequence axis.
template <typename Real>
Var<Real> concat_seq(const std::vector<Var<Real>>& parts) {
    if (parts.empty()) throw ShapeError("concat_seq: no parts");
    const std::size_t B = parts[0]->value.dim(0);
    const std::size_t D = parts[0]->value.dim(2);
    std::size_t L = 0;
    for (const auto& p : parts) {
        if (p->value.rank() != 3 || p->value.dim(0) != B || p->value.dim(2) != D) {
            throw ShapeError("concat_seq: incompatible part shape " + p->value.shape_str());
        }
        L += p->value.dim(1);
    }
    Tensor<Real> out({B, L, D});
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t li = p->value.dim(1);
            const Real* src = p->value.ptr() + b * li * D;
            Real* dst = out.ptr() + (b * L + off) * D;
            std::copy(src, src + li * D, dst);
            off += li;
        }
    }
    std::vector<Var<Real>> parents(parts.begin(), parts.end());
    return make_node<Real>(std::move(out), parents, [parts, B, L, D](Node<Real>& n) {
        for (std::size_t b = 0; b < B; ++b) {
            std::size_t off = 0;
            for (const auto& p : parts) {
                const std::size_t li = p->value.dim(1);
                if (p->requires_grad) {
                    p->ensure_grad();
                    const Real* g = n.grad.ptr() + (b * L + off) * D;
                    Real* gp = p->grad.ptr() + b * li * D;
                    for (std::size_t i = 0; i < li * D; ++i) gp[i] += g[i];
                }
                off += li;
            }
        }
    });
}

// Pick one sequence position: [B, L, D] -> [B, D].
template <typename Real>
Var<Real> select_seq(const Var<Real>& x, std::size_t pos) {
    const std::size_t B = x->value.dim(0), L = x->value.dim(1), D = x->value.dim(2);
    if (pos >= L) throw ShapeError("select_seq: position out of range");
    Tensor<Real> out({B, D});
    for (std::size_t b = 0; b < B; ++b) {
        const Real* src = x->value.ptr() + (b * L + pos) * D;
        std::copy(src, src + D, out.ptr() + b * D);
    }
    return make_node<Real>(std::move(out), {x}, [x, pos, B, L, D](Node<Real>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t b = 0; b < B; ++b) {
            const Real* g = n.grad.ptr() + b * D;
            Real* gx = x->grad.ptr() + (b * L + pos) * D;
            for (std::size_t d = 0; d < D; ++d) gx[d] += g[d];
        }
    });
}

// Mean over the row axis: [B, N, D] -> [B, D].
template <typename Real>
Var<Real> mean_rows(const Var<Real>& x) {
    const std::size_t B = x->value.dim(0), N = x->value.dim(1), D = x->value.dim(2);
    Tensor<Real> out({B, D});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t d = 0; d < D; ++d)
                out[b * D + d] += x->value[(b * N + i) * D + d] / static_cast<Real>(N);
    return make_node<Real>(std::move(out), {x}, [x, B, N, D](Node<Real>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const Real inv = Real(1) / static_cast<Real>(N);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t d = 0; d < D; ++d)
                    x->grad[(b * N + i) * D + d] += n.grad[b * D + d] * inv;
    });
}

template <typename Real>
Var<Real> concat_feat(const Var<Real>& a, const Var<Real>& b) {
    const std::size_t B = a->value.dim(0), F1 = a->value.dim(1), F2 = b->value.dim(1);
    if (b->value.dim(0) != B) throw ShapeError("concat_feat: batch mismatch");
    Tensor<Real> out({B, F1 + F2});
    for (std::size_t i = 0; i < B; ++i) {
        std::copy(a->value.ptr() + i * F1, a->value.ptr() + (i + 1) * F1, out.ptr() + i * (F1 + F2));
        std::copy(b->value.ptr() + i * F2, b->value.ptr() + (i + 1) * F2,
                  out.ptr() + i * (F1 + F2) + F1);
    }
    return make_node<Real>(std::move(out), {a, b}, [a, b, B, F1, F2](Node<Real>& n) {
        for (std::size_t i = 0; i < B; ++i) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t j = 0; j < F1; ++j)
                    a->grad[i * F1 + j] += n.grad[i * (F1 + F2) + j];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t j = 0; j < F2; ++j)
                    b->grad[i * F2 + j] += n.grad[i * (F1 + F2) + F1 + j];
            }
        }
    });
}

// Adds a vector to one row of every batch item: used for the counterfactual
// token perturbation tau_k + delta_k.
template <typename Real>
Var<Real> add_to_row(const Var<Real>& x, std::size_t row, const Var<Real>& delta) {
    const std::size_t B = x->value.dim(0), N = x->value.dim(1), D = x->value.dim(2);
    if (row >= N) throw ShapeError("add_to_row: row out of range");
    if (delta->value.size() != D) throw ShapeError("add_to_row: width mismatch");
    Tensor<Real> out(x->value);
    for (std::size_t b = 0; b < B; ++b) {
        Real* dst = out.ptr() + (b * N + row) * D;
        for (std::size_t d = 0; d < D; ++d) dst[d] += delta->value[d];
    }
    return make_node<Real>(std::move(out), {x, delta}, [x, delta, row, B, N, D](Node<Real>& n) {
        accumulate(x, n.grad);
        if (delta->requires_grad) {
            delta->ensure_grad();
            for (std::size_t b = 0; b < B; ++b) {
                const Real* g = n.grad.ptr() + (b * N + row) * D;
                for (std::size_t d = 0; d < D; ++d) delta->grad[d] += g[d];
            }
        }
    });
}

// One row of a [N, D] parameter as a [D] vector (gradient scatters back).
template <typename Real>
Var<Real> select_row2d(const Var<Real>& m, std::size_t row) {
    const std::size_t N = m->value.dim(0), D = m->value.dim(1);
    if (row >= N) throw ShapeError("select_row2d: row out of range");
    Tensor<Real> out({D});
    std::copy(m->value.ptr() + row * D, m->value.ptr() + (row + 1) * D, out.ptr());
    return make_node<Real>(std::move(out), {m}, [m, row, D](Node<Real>& n) {
        if (!m->requires_grad) return;
        m->ensure_grad();
        for (std::size_t d = 0; d < D; ++d) m->grad[row * D + d] += n.grad[d];
    });
}

// [B, L, h*dh] -> [B*h, L, dh] for multi-head attention.
template <typename Real>
Var<Real> heads_split(const Var<Real>& x, std::size_t h) {
    const std::size_t B = x->value.dim(0), L = x->value.dim(1), D = x->value.dim(2);
    if (D % h) throw ShapeError("heads_split: width not divisible by head count");
    const std::size_t dh = D / h;
    Tensor<Real> out({B * h, L, dh});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t l = 0; l < L; ++l) {
                const Real* src = x->value.ptr() + (b * L + l) * D + i * dh;
                Real* dst = out.ptr() + (((b * h + i) * L) + l) * dh;
                std::copy(src, src + dh, dst);
            }
    return make_node<Real>(std::move(out), {x}, [x, B, L, D, h, dh](Node<Real>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t l = 0; l < L; ++l) {
                    const Real* g = n.grad.ptr() + (((b * h + i) * L) + l) * dh;
                    Real* gx = x->grad.ptr() + (b * L + l) * D + i * dh;
                    for (std::size_t d = 0; d < dh; ++d) gx[d] += g[d];
                }
    });
}

// Inverse of heads_split: [B*h, L, dh] -> [B, L, h*dh].
template <typename Real>
Var<Real> heads_merge(const Var<Real>& x, std::size_t h) {
    const std::size_t Bh = x->value.dim(0), L = x->value.dim(1), dh = x->value.dim(2);
    if (Bh % h) throw ShapeError("heads_merge: bad head count");
    const std::size_t B = Bh / h, D = h * dh;
    Tensor<Real> out({B, L, D});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t l = 0; l < L; ++l) {
                const Real* src = x->value.ptr() + (((b * h + i) * L) + l) * dh;
                Real* dst = out.ptr() + (b * L + l) * D + i * dh;
                std::copy(src, src + dh, dst);
            }
    return make_node<Real>(std::move(out), {x}, [x, B, L, D, h, dh](Node<Real>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t l = 0; l < L; ++l) {
                    const Real* g = n.grad.ptr() + (b * L + l) * D + i * dh;
                    Real* gx = x->grad.ptr() + (((b * h + i) * L) + l) * dh;
                    for (std::size_t d = 0; d < dh; ++d) gx[d] += g[d];
                }
    });
}

// x[B, L, D] + c[L, D], c constant (positional encodings).
template <typename Real>
Var<Real> add_seq_const(const Var<Real>& x, const Tensor<Real>& c) {
    const std::size_t B = x->value.dim(0), L = x->value.dim(1), D = x->value.dim(2);
    if (c.size() != L * D) throw ShapeError("add_seq_const: shape mismatch");
    Tensor<Real> out(x->value);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < L * D; ++i) out[b * L * D + i] += c[i];
    return make_node<Real>(std::move(out), {x},
                           [x](Node<Real>& n) { accumulate(x, n.grad); });
}

// Replicates a constant [L, D] block across the batch. No gradient path.
template <typename Real>
Var<Real> tile_batch(const Tensor<Real>& block, std::size_t B) {
    const std::size_t L = block.dim(0), D = block.dim(1);
    Tensor<Real> out({B, L, D});
    for (std::size_t b = 0; b < B; ++b)
        std::copy(block.ptr(), block.ptr() + L * D, out.ptr() + b * L * D);
    return constant(std::move(out));
}

// ---------------------------------------------------------------------------
// Dense linear algebra
// ---------------------------------------------------------------------------

// x[..., Din] @ W[Dout, Din]^T + b. Leading axes are flattened into rows.
template <typename Real>
Var<Real> linear(const Var<Real>& x, const Var<Real>& w, const Var<Real>& b = nullptr) {
    const auto& sh = x->value.shape();
    const std::size_t din = sh.back();
    const std::size_t rows = x->value.size() / din;
    const std::size_t dout = w->value.dim(0);
    if (w->value.dim(1) != din) {
        throw ShapeError("linear: weight shape " + w->value.shape_str() + " vs input width " +
                         std::to_string(din));
    }
    std::vector<std::size_t> osh(sh.begin(), sh.end() - 1);
    osh.push_back(dout);
    Tensor<Real> out(osh);
    map2d(out, rows, dout).noalias() =
        cmap2d(x->value, rows, din) * cmap2d(w->value, dout, din).transpose();
    if (b) {
        if (b->value.size() != dout) throw ShapeError("linear: bias size mismatch");
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < dout; ++j) out[r * dout + j] += b->value[j];
    }
    std::vector<Var<Real>> parents = b ? std::vector<Var<Real>>{x, w, b} : std::vector<Var<Real>>{x, w};
    return make_node<Real>(std::move(out), parents, [x, w, b, rows, din, dout](Node<Real>& n) {
        auto g = cmap2d(n.grad, rows, dout);
        if (x->requires_grad) {
            x->ensure_grad();
            map2d(x->grad, rows, din).noalias() += g * cmap2d(w->value, dout, din);
        }
        if (w->requires_grad) {
            w->ensure_grad();
            map2d(w->grad, dout, din).noalias() += g.transpose() * cmap2d(x->value, rows, din);
        }
        if (b && b->requires_grad) {
            b->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < dout; ++j) b->grad[j] += n.grad[r * dout + j];
        }
    });
}

// Batched matmul: [G, n, m] @ [G, m, p] -> [G, n, p].
template <typename Real>
Var<Real> bmm(const Var<Real>& a, const Var<Real>& b) {
    const std::size_t G = a->value.dim(0), n = a->value.dim(1), m = a->value.dim(2);
    if (b->value.dim(0) != G || b->value.dim(1) != m) throw ShapeError("bmm: shape mismatch");
    const std::size_t p = b->value.dim(2);
    Tensor<Real> out({G, n, p});
    for (std::size_t g = 0; g < G; ++g) {
        CMap<Real> am(a->value.ptr() + g * n * m, n, m);
        CMap<Real> bm(b->value.ptr() + g * m * p, m, p);
        Map<Real> om(out.ptr() + g * n * p, n, p);
        om.noalias() = am * bm;
    }
    return make_node<Real>(std::move(out), {a, b}, [a, b, G, n, m, p](Node<Real>& nd) {
        for (std::size_t g = 0; g < G; ++g) {
            CMap<Real> gm(nd.grad.ptr() + g * n * p, n, p);
            if (a->requires_grad) {
                a->ensure_grad();
                CMap<Real> bm(b->value.ptr() + g * m * p, m, p);
                Map<Real>(a->grad.ptr() + g * n * m, n, m).noalias() += gm * bm.transpose();
            }
            if (b->requires_grad) {
                b->ensure_grad();
                CMap<Real> am(a->value.ptr() + g * n * m, n, m);
                Map<Real>(b->grad.ptr() + g * m * p, m, p).noalias() += am.transpose() * gm;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

// Softmax over the last axis. With `causal` set, entry (i, j > i) of each
// trailing [L, L] block is masked out before normalization.
template <typename Real>
Var<Real> softmax_last(const Var<Real>& x, bool causal = false) {
    const auto& sh = x->value.shape();
    const std::size_t n = sh.back();
    const std::size_t rows = x->value.size() / n;
    std::size_t L = 0;
    if (causal) {
        if (sh.size() < 2 || sh[sh.size() - 2] != n) {
            throw ShapeError("softmax_last: causal mask needs trailing [L, L]");
        }
        L = n;
    }
    Tensor<Real> out(sh);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* in = x->value.ptr() + r * n;
        Real* o = out.ptr() + r * n;
        const std::size_t valid = causal ? (r % L) + 1 : n;
        Real mx = in[0];
        for (std::size_t j = 1; j < valid; ++j) mx = std::max(mx, in[j]);
        Real denom = Real(0);
        for (std::size_t j = 0; j < valid; ++j) {
            o[j] = std::exp(in[j] - mx);
            denom += o[j];
        }
        for (std::size_t j = 0; j < valid; ++j) o[j] /= denom;
        for (std::size_t j = valid; j < n; ++j) o[j] = Real(0);
    }
    return make_node<Real>(std::move(out), {x}, [x, rows, n](Node<Real>& nd) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const Real* y = nd.value.ptr() + r * n;
            const Real* g = nd.grad.ptr() + r * n;
            Real* gx = x->grad.ptr() + r * n;
            Real dot = Real(0);
            for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) gx[j] += y[j] * (g[j] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// Small graph-structure ops
// ---------------------------------------------------------------------------

// out[b, i, j] = p[b, i] + q[b, j]; pre-activation attention scores.
template <typename Real>
Var<Real> pairwise_sum(const Var<Real>& p, const Var<Real>& q) {
    const std::size_t B = p->value.dim(0), N = p->value.dim(1);
    if (q->value.dim(0) != B || q->value.dim(1) != N) throw ShapeError("pairwise_sum: mismatch");
    Tensor<Real> out({B, N, N});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < N; ++j)
                out[(b * N + i) * N + j] = p->value[b * N + i] + q->value[b * N + j];
    return make_node<Real>(std::move(out), {p, q}, [p, q, B, N](Node<Real>& n) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < N; ++j) {
                    const Real g = n.grad[(b * N + i) * N + j];
                    if (p->requires_grad) {
                        p->ensure_grad();
                        p->grad[b * N + i] += g;
                    }
                    if (q->requires_grad) {
                        q->ensure_grad();
                        q->grad[b * N + j] += g;
                    }
                }
    });
}

// out[b, i, j] = s[b, i] * s[b, j]; used for symmetric degree normalization.
template <typename Real>
Var<Real> outer_rows(const Var<Real>& s) {
    const std::size_t B = s->value.dim(0), N = s->value.dim(1);
    Tensor<Real> out({B, N, N});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < N; ++j)
                out[(b * N + i) * N + j] = s->value[b * N + i] * s->value[b * N + j];
    return make_node<Real>(std::move(out), {s}, [s, B, N](Node<Real>& n) {
        if (!s->requires_grad) return;
        s->ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < N; ++j) {
                    const Real g = n.grad[(b * N + i) * N + j];
                    s->grad[b * N + i] += g * s->value[b * N + j];
                    s->grad[b * N + j] += g * s->value[b * N + i];
                }
    });
}

template <typename Real>
Var<Real> add_identity(const Var<Real>& x) {
    const auto& sh = x->value.shape();
    const std::size_t N = sh.back();
    if (sh[sh.size() - 2] != N) throw ShapeError("add_identity: trailing dims not square");
    const std::size_t blocks = x->value.size() / (N * N);
    Tensor<Real> out(x->value);
    for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t i = 0; i < N; ++i) out[(b * N + i) * N + i] += Real(1);
    return make_node<Real>(std::move(out), {x},
                           [x](Node<Real>& n) { accumulate(x, n.grad); });
}

// x[B, N, N] + c[N, N] broadcast over the batch.
template <typename Real>
Var<Real> broadcast_add_mat(const Var<Real>& x, const Var<Real>& c) {
    const std::size_t B = x->value.dim(0), N = x->value.dim(1);
    if (c->value.size() != N * N) throw ShapeError("broadcast_add_mat: shape mismatch");
    Tensor<Real> out(x->value);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < N * N; ++i) out[b * N * N + i] += c->value[i];
    return make_node<Real>(std::move(out), {x, c}, [x, c, B, N](Node<Real>& n) {
        accumulate(x, n.grad);
        if (c->requires_grad) {
            c->ensure_grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < N * N; ++i) c->grad[i] += n.grad[b * N * N + i];
        }
    });
}

// Per-class projections of a pooled feature: out[b, i, :] = P[i] x[b] + bias[i].
// x: [B, C], proj: [N, d, C], bias: [N, d] -> [B, N, d].
template <typename Real>
Var<Real> per_class_projection(const Var<Real>& x, const Var<Real>& proj, const Var<Real>& bias) {
    const std::size_t B = x->value.dim(0), C = x->value.dim(1);
    const std::size_t N = proj->value.dim(0), d = proj->value.dim(1);
    if (proj->value.dim(2) != C || bias->value.dim(0) != N || bias->value.dim(1) != d) {
        throw ShapeError("per_class_projection: parameter shape mismatch");
    }
    Tensor<Real> out({B, N, d});
    for (std::size_t i = 0; i < N; ++i) {
        CMap<Real> pm(proj->value.ptr() + i * d * C, d, C);
        for (std::size_t b = 0; b < B; ++b) {
            CMap<Real> xv(x->value.ptr() + b * C, 1, C);
            Map<Real> ov(out.ptr() + (b * N + i) * d, 1, d);
            ov.noalias() = xv * pm.transpose();
            for (std::size_t k = 0; k < d; ++k) ov(0, k) += bias->value[i * d + k];
        }
    }
    return make_node<Real>(std::move(out), {x, proj, bias},
                           [x, proj, bias, B, C, N, d](Node<Real>& n) {
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t b = 0; b < B; ++b) {
                const Real* g = n.grad.ptr() + (b * N + i) * d;
                if (x->requires_grad) {
                    x->ensure_grad();
                    CMap<Real> pm(proj->value.ptr() + i * d * C, d, C);
                    Map<Real> gx(x->grad.ptr() + b * C, 1, C);
                    gx.noalias() += CMap<Real>(g, 1, d) * pm;
                }
                if (proj->requires_grad) {
                    proj->ensure_grad();
                    Map<Real> gp(proj->grad.ptr() + i * d * C, d, C);
                    gp.noalias() += CMap<Real>(g, 1, d).transpose() * CMap<Real>(x->value.ptr() + b * C, 1, C);
                }
                if (bias->requires_grad) {
                    bias->ensure_grad();
                    for (std::size_t k = 0; k < d; ++k) bias->grad[i * d + k] += g[k];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Loss building blocks (probability-space, with clamping)
// ---------------------------------------------------------------------------

inline constexpr double kProbEps = 1e-7;

template <typename Real>
Real clamp_prob(Real p) {
    const Real lo = static_cast<Real>(kProbEps);
    const Real hi = Real(1) - lo;
    return p < lo ? lo : (p > hi ? hi : p);
}

// Mean binary cross-entropy of probabilities p against binary targets y.
template <typename Real>
Var<Real> bce_mean(const Var<Real>& p, const Tensor<Real>& y) {
    if (p->value.size() != y.size()) throw ShapeError("bce_mean: size mismatch");
    const std::size_t n = y.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double pi = static_cast<double>(clamp_prob(p->value[i]));
        const double yi = static_cast<double>(y[i]);
        acc -= yi * std::log(pi) + (1.0 - yi) * std::log(1.0 - pi);
    }
    Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(acc / static_cast<double>(n)));
    return make_node<Real>(std::move(out), {p}, [p, y, n](Node<Real>& nd) {
        if (!p->requires_grad) return;
        p->ensure_grad();
        const Real g = nd.grad[0] / static_cast<Real>(n);
        const Real lo = static_cast<Real>(kProbEps), hi = Real(1) - lo;
        for (std::size_t i = 0; i < n; ++i) {
            const Real pi = p->value[i];
            if (pi <= lo || pi >= hi) continue;  // clamped region: zero slope
            p->grad[i] += g * (pi - y[i]) / (pi * (Real(1) - pi));
        }
    });
}

// Flip loss for the counterfactual pass: BCE of column k of q against 1 - y_k.
template <typename Real>
Var<Real> bce_flip_column(const Var<Real>& q, const Tensor<Real>& y, std::size_t k) {
    const std::size_t B = q->value.dim(0), N = q->value.dim(1);
    if (y.size() != B * N || k >= N) throw ShapeError("bce_flip_column: bad arguments");
    double acc = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const double qk = static_cast<double>(clamp_prob(q->value[b * N + k]));
        const double target = 1.0 - static_cast<double>(y[b * N + k]);
        acc -= target * std::log(qk) + (1.0 - target) * std::log(1.0 - qk);
    }
    Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(acc / static_cast<double>(B)));
    return make_node<Real>(std::move(out), {q}, [q, y, k, B, N](Node<Real>& nd) {
        if (!q->requires_grad) return;
        q->ensure_grad();
        const Real g = nd.grad[0] / static_cast<Real>(B);
        const Real lo = static_cast<Real>(kProbEps), hi = Real(1) - lo;
        for (std::size_t b = 0; b < B; ++b) {
            const Real qk = q->value[b * N + k];
            if (qk <= lo || qk >= hi) continue;
            const Real target = Real(1) - y[b * N + k];
            q->grad[b * N + k] += g * (qk - target) / (qk * (Real(1) - qk));
        }
    });
}

// Invariance term: sum over j != k of KL(Bernoulli(p_j) || Bernoulli(q_j)),
// averaged over the batch. p is the detached factual prediction.
template <typename Real>
Var<Real> bernoulli_kl_sum_excluding(const Tensor<Real>& p, const Var<Real>& q, std::size_t k) {
    const std::size_t B = q->value.dim(0), N = q->value.dim(1);
    if (p.size() != B * N || k >= N) throw ShapeError("bernoulli_kl_sum_excluding: bad arguments");
    double acc = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < N; ++j) {
            if (j == k) continue;
            const double pj = static_cast<double>(clamp_prob(p[b * N + j]));
            const double qj = static_cast<double>(clamp_prob(q->value[b * N + j]));
            acc += pj * std::log(pj / qj) + (1.0 - pj) * std::log((1.0 - pj) / (1.0 - qj));
        }
    }
    Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(acc / static_cast<double>(B)));
    return make_node<Real>(std::move(out), {q}, [q, p, k, B, N](Node<Real>& nd) {
        if (!q->requires_grad) return;
        q->ensure_grad();
        const Real g = nd.grad[0] / static_cast<Real>(B);
        const Real lo = static_cast<Real>(kProbEps), hi = Real(1) - lo;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t j = 0; j < N; ++j) {
                if (j == k) continue;
                const Real qj = q->value[b * N + j];
                if (qj <= lo || qj >= hi) continue;
                const Real pj = clamp_prob(p[b * N + j]);
                q->grad[b * N + j] += g * ((Real(1) - pj) / (Real(1) - qj) - pj / qj);
            }
        }
    });
}

// Euclidean norm of one row of a matrix parameter (the per-AU perturbation).
template <typename Real>
Var<Real> row_norm2(const Var<Real>& m, std::size_t row) {
    const std::size_t N = m->value.dim(0), D = m->value.dim(1);
    if (row >= N) throw ShapeError("row_norm2: row out of range");
    double acc = 1e-24;  // keeps the gradient defined at exactly zero
    for (std::size_t d = 0; d < D; ++d) {
        const double v = static_cast<double>(m->value[row * D + d]);
        acc += v * v;
    }
    const double norm = std::sqrt(acc);
    Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(norm));
    return make_node<Real>(std::move(out), {m}, [m, row, D, norm](Node<Real>& nd) {
        if (!m->requires_grad) return;
        m->ensure_grad();
        const Real g = nd.grad[0];
        for (std::size_t d = 0; d < D; ++d) {
            m->grad[row * D + d] += g * m->value[row * D + d] / static_cast<Real>(norm);
        }
    });
}

}  // namespace aullmxx::ops

#endif  // AULLMXX_CORE_OPS_HPP
