#ifndef AULLMXX_CORE_OPS_NN_HPP
#define AULLMXX_CORE_OPS_NN_HPP

#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "aullmxx/core/ops.hpp"

namespace aullmxx::ops {

namespace detail {

// Gathers 3x3x3 (or any odd-kernel) windows of one sample into a column
// matrix, zero-padded, column-major: col(K x S) with K = Ci*kt*kh*kw and
// S = T*H*W. Column s holds the receptive field of output voxel s.
template <typename Real, typename ColMat>
void im2col3d(const Real* x, std::size_t Ci, std::size_t T, std::size_t H, std::size_t W,
              std::size_t kt, std::size_t kh, std::size_t kw, ColMat& col) {
    const std::ptrdiff_t ct = static_cast<std::ptrdiff_t>(kt / 2);
    const std::ptrdiff_t ch = static_cast<std::ptrdiff_t>(kh / 2);
    const std::ptrdiff_t cw = static_cast<std::ptrdiff_t>(kw / 2);
    std::size_t s = 0;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t w = 0; w < W; ++w, ++s) {
                Real* dst = col.data() + s * col.rows();
                std::size_t r = 0;
                for (std::size_t ci = 0; ci < Ci; ++ci) {
                    const Real* xc = x + ci * T * H * W;
                    for (std::size_t dt = 0; dt < kt; ++dt) {
                        const std::ptrdiff_t tt = static_cast<std::ptrdiff_t>(t + dt) - ct;
                        for (std::size_t dh = 0; dh < kh; ++dh) {
                            const std::ptrdiff_t hh = static_cast<std::ptrdiff_t>(h + dh) - ch;
                            for (std::size_t dw = 0; dw < kw; ++dw, ++r) {
                                const std::ptrdiff_t ww = static_cast<std::ptrdiff_t>(w + dw) - cw;
                                const bool in = tt >= 0 && tt < static_cast<std::ptrdiff_t>(T) &&
                                                hh >= 0 && hh < static_cast<std::ptrdiff_t>(H) &&
                                                ww >= 0 && ww < static_cast<std::ptrdiff_t>(W);
                                dst[r] = in ? xc[(static_cast<std::size_t>(tt) * H +
                                                  static_cast<std::size_t>(hh)) * W +
                                                 static_cast<std::size_t>(ww)]
                                            : Real(0);
                            }
                        }
                    }
                }
            }
        }
    }
}

// Scatter-adds a column-matrix gradient back onto the input gradient.
template <typename Real>
void col2im3d(const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>& col, std::size_t Ci,
              std::size_t T, std::size_t H, std::size_t W, std::size_t kt, std::size_t kh,
              std::size_t kw, Real* gx) {
    const std::ptrdiff_t ct = static_cast<std::ptrdiff_t>(kt / 2);
    const std::ptrdiff_t ch = static_cast<std::ptrdiff_t>(kh / 2);
    const std::ptrdiff_t cw = static_cast<std::ptrdiff_t>(kw / 2);
    std::size_t s = 0;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t w = 0; w < W; ++w, ++s) {
                const Real* src = col.data() + s * col.rows();
                std::size_t r = 0;
                for (std::size_t ci = 0; ci < Ci; ++ci) {
                    Real* gc = gx + ci * T * H * W;
                    for (std::size_t dt = 0; dt < kt; ++dt) {
                        const std::ptrdiff_t tt = static_cast<std::ptrdiff_t>(t + dt) - ct;
                        for (std::size_t dh = 0; dh < kh; ++dh) {
                            const std::ptrdiff_t hh = static_cast<std::ptrdiff_t>(h + dh) - ch;
                            for (std::size_t dw = 0; dw < kw; ++dw, ++r) {
                                const std::ptrdiff_t ww = static_cast<std::ptrdiff_t>(w + dw) - cw;
                                if (tt >= 0 && tt < static_cast<std::ptrdiff_t>(T) && hh >= 0 &&
                                    hh < static_cast<std::ptrdiff_t>(H) && ww >= 0 &&
                                    ww < static_cast<std::ptrdiff_t>(W)) {
                                    gc[(static_cast<std::size_t>(tt) * H +
                                        static_cast<std::size_t>(hh)) * W +
                                       static_cast<std::size_t>(ww)] += src[r];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

namespace detail {

// Whole-batch column matrix (K x B*S): one wide GEMM beats B skinny ones and
// Eigen threads it internally. Sample blocks are disjoint, so the gather can
// run in parallel deterministically.
template <typename Real>
void im2col_batch(const Tensor<Real>& x, std::size_t B, std::size_t Ci, std::size_t T,
                  std::size_t H, std::size_t W, std::size_t kt, std::size_t kh, std::size_t kw,
                  Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>& col) {
    const std::size_t S = T * H * W;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(B); ++b) {
        Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>> block(
            col.data() + static_cast<std::size_t>(b) * S * col.rows(), col.rows(),
            static_cast<Eigen::Index>(S));
        im2col3d(x.ptr() + static_cast<std::size_t>(b) * Ci * S, Ci, T, H, W, kt, kh, kw, block);
    }
}

}  // namespace detail

// Same-size 3-d convolution, stride 1, zero padding. x: [B, Ci, T, H, W],
// w: [Co, Ci, kt, kh, kw], bias: [Co] (optional).
template <typename Real>
Var<Real> conv3d(const Var<Real>& x, const Var<Real>& w, const Var<Real>& bias = nullptr) {
    const std::size_t B = x->value.dim(0), Ci = x->value.dim(1), T = x->value.dim(2),
                      H = x->value.dim(3), W = x->value.dim(4);
    const std::size_t Co = w->value.dim(0), kt = w->value.dim(2), kh = w->value.dim(3),
                      kw = w->value.dim(4);
    if (w->value.dim(1) != Ci) throw ShapeError("conv3d: channel mismatch");
    const std::size_t K = Ci * kt * kh * kw;
    const std::size_t S = T * H * W;

    Tensor<Real> out({B, Co, T, H, W});
    {
        Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> col(K, B * S);
        detail::im2col_batch(x->value, B, Ci, T, H, W, kt, kh, kw, col);
        // out viewed per sample; one GEMM into a (Co x B*S) scratch then
        // scatter would cost an extra pass, so multiply per sample against
        // the shared col (still a wide GEMM per block).
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(B); ++b) {
            Map<Real> om(out.ptr() + static_cast<std::size_t>(b) * Co * S, Co, S);
            om.noalias() =
                cmap2d(w->value, Co, K) *
                col.middleCols(static_cast<Eigen::Index>(static_cast<std::size_t>(b) * S),
                               static_cast<Eigen::Index>(S));
            if (bias) {
                for (std::size_t co = 0; co < Co; ++co)
                    om.row(static_cast<Eigen::Index>(co)).array() += bias->value[co];
            }
        }
    }

    std::vector<Var<Real>> parents =
        bias ? std::vector<Var<Real>>{x, w, bias} : std::vector<Var<Real>>{x, w};
    return make_node<Real>(std::move(out), parents,
                           [x, w, bias, B, Ci, Co, T, H, W, kt, kh, kw, K, S](Node<Real>& n) {
        const int nthreads = [] {
#ifdef _OPENMP
            return omp_get_max_threads();
#else
            return 1;
#endif
        }();
        if (w->requires_grad) w->ensure_grad();
        if (x->requires_grad) x->ensure_grad();
        if (bias && bias->requires_grad) bias->ensure_grad();

        Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> col;
        if (w->requires_grad) {
            col.resize(K, B * S);
            detail::im2col_batch(x->value, B, Ci, T, H, W, kt, kh, kw, col);
        }
        std::vector<Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>> dw_part(
            static_cast<std::size_t>(nthreads));
        std::vector<std::vector<Real>> db_part(static_cast<std::size_t>(nthreads));

#pragma omp parallel
        {
            const int tid = [] {
#ifdef _OPENMP
                return omp_get_thread_num();
#else
                return 0;
#endif
            }();
            Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> gcol;
            if (x->requires_grad) gcol.resize(K, S);
            if (w->requires_grad) {
                dw_part[tid].setZero(static_cast<Eigen::Index>(Co), static_cast<Eigen::Index>(K));
            }
            if (bias && bias->requires_grad) db_part[tid].assign(Co, Real(0));

#pragma omp for schedule(static)
            for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(B); ++bi) {
                const std::size_t b = static_cast<std::size_t>(bi);
                CMap<Real> gm(n.grad.ptr() + b * Co * S, Co, S);
                if (w->requires_grad) {
                    dw_part[tid].noalias() +=
                        gm * col.middleCols(static_cast<Eigen::Index>(b * S),
                                            static_cast<Eigen::Index>(S))
                                 .transpose();
                }
                if (x->requires_grad) {
                    gcol.noalias() = cmap2d(w->value, Co, K).transpose() * gm;
                    detail::col2im3d(gcol, Ci, T, H, W, kt, kh, kw, x->grad.ptr() + b * Ci * S);
                }
                if (bias && bias->requires_grad) {
                    for (std::size_t co = 0; co < Co; ++co)
                        db_part[tid][co] += gm.row(static_cast<Eigen::Index>(co)).sum();
                }
            }
        }
        // deterministic ordered reduction over thread partials
        if (w->requires_grad) {
            auto wg = map2d(w->grad, Co, K);
            for (int t = 0; t < nthreads; ++t) {
                if (dw_part[static_cast<std::size_t>(t)].size() > 0) {
                    wg.noalias() += dw_part[static_cast<std::size_t>(t)];
                }
            }
        }
        if (bias && bias->requires_grad) {
            for (int t = 0; t < nthreads; ++t) {
                if (!db_part[static_cast<std::size_t>(t)].empty()) {
                    for (std::size_t co = 0; co < Co; ++co)
                        bias->grad[co] += db_part[static_cast<std::size_t>(t)][co];
                }
            }
        }
    });
}

// Pointwise (1x1x1) channel projection: x [B, Ci, ...] -> [B, Co, ...].
template <typename Real>
Var<Real> conv1x1(const Var<Real>& x, const Var<Real>& w, const Var<Real>& bias = nullptr) {
    const auto& sh = x->value.shape();
    const std::size_t B = sh[0], Ci = sh[1];
    std::size_t S = 1;
    for (std::size_t i = 2; i < sh.size(); ++i) S *= sh[i];
    const std::size_t Co = w->value.dim(0);
    if (w->value.dim(1) != Ci) throw ShapeError("conv1x1: channel mismatch");
    std::vector<std::size_t> osh(sh);
    osh[1] = Co;
    Tensor<Real> out(osh);
    for (std::size_t b = 0; b < B; ++b) {
        Map<Real> om(out.ptr() + b * Co * S, Co, S);
        om.noalias() = cmap2d(w->value, Co, Ci) * CMap<Real>(x->value.ptr() + b * Ci * S, Ci, S);
        if (bias) {
            for (std::size_t co = 0; co < Co; ++co)
                om.row(static_cast<Eigen::Index>(co)).array() += bias->value[co];
        }
    }
    std::vector<Var<Real>> parents =
        bias ? std::vector<Var<Real>>{x, w, bias} : std::vector<Var<Real>>{x, w};
    return make_node<Real>(std::move(out), parents, [x, w, bias, B, Ci, Co, S](Node<Real>& n) {
        for (std::size_t b = 0; b < B; ++b) {
            CMap<Real> gm(n.grad.ptr() + b * Co * S, Co, S);
            if (x->requires_grad) {
                x->ensure_grad();
                Map<Real>(x->grad.ptr() + b * Ci * S, Ci, S).noalias() +=
                    cmap2d(w->value, Co, Ci).transpose() * gm;
            }
            if (w->requires_grad) {
                w->ensure_grad();
                map2d(w->grad, Co, Ci).noalias() +=
                    gm * CMap<Real>(x->value.ptr() + b * Ci * S, Ci, S).transpose();
            }
            if (bias && bias->requires_grad) {
                bias->ensure_grad();
                for (std::size_t co = 0; co < Co; ++co)
                    bias->grad[co] += gm.row(static_cast<Eigen::Index>(co)).sum();
            }
        }
    });
}

// x[B, C, ...] + b[C] broadcast over batch and spatial axes.
template <typename Real>
Var<Real> add_channel_bias(const Var<Real>& x, const Var<Real>& b) {
    const auto& sh = x->value.shape();
    const std::size_t B = sh[0], C = sh[1];
    if (b->value.size() != C) throw ShapeError("add_channel_bias: channel mismatch");
    std::size_t S = 1;
    for (std::size_t i = 2; i < sh.size(); ++i) S *= sh[i];
    Tensor<Real> out(x->value);
    for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t c = 0; c < C; ++c) {
            Real* dst = out.ptr() + (bb * C + c) * S;
            const Real bv = b->value[c];
            for (std::size_t s = 0; s < S; ++s) dst[s] += bv;
        }
    return make_node<Real>(std::move(out), {x, b}, [x, b, B, C, S](Node<Real>& n) {
        accumulate(x, n.grad);
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t bb = 0; bb < B; ++bb)
                for (std::size_t c = 0; c < C; ++c) {
                    const Real* g = n.grad.ptr() + (bb * C + c) * S;
                    Real acc = Real(0);
                    for (std::size_t s = 0; s < S; ++s) acc += g[s];
                    b->grad[c] += acc;
                }
        }
    });
}

// Non-overlapping average pooling; factors must divide the dims exactly
// (callers pad first).
template <typename Real>
Var<Real> avg_pool3d(const Var<Real>& x, std::size_t ft, std::size_t fh, std::size_t fw) {
    const std::size_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2),
                      H = x->value.dim(3), W = x->value.dim(4);
    if (T % ft || H % fh || W % fw) throw ShapeError("avg_pool3d: non-divisible dims");
    const std::size_t To = T / ft, Ho = H / fh, Wo = W / fw;
    const Real inv = Real(1) / static_cast<Real>(ft * fh * fw);
    Tensor<Real> out({B, C, To, Ho, Wo});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t bci = 0; bci < static_cast<std::ptrdiff_t>(B * C); ++bci) {
        const std::size_t bc = static_cast<std::size_t>(bci);
        const Real* src = x->value.ptr() + bc * T * H * W;
        Real* dst = out.ptr() + bc * To * Ho * Wo;
        for (std::size_t to = 0; to < To; ++to)
            for (std::size_t ho = 0; ho < Ho; ++ho)
                for (std::size_t wo = 0; wo < Wo; ++wo) {
                    Real acc = Real(0);
                    for (std::size_t dt = 0; dt < ft; ++dt)
                        for (std::size_t dh = 0; dh < fh; ++dh)
                            for (std::size_t dw = 0; dw < fw; ++dw)
                                acc += src[((to * ft + dt) * H + ho * fh + dh) * W + wo * fw + dw];
                    dst[(to * Ho + ho) * Wo + wo] = acc * inv;
                }
    }
    return make_node<Real>(std::move(out), {x},
                           [x, B, C, T, H, W, ft, fh, fw, To, Ho, Wo, inv](Node<Real>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t bci = 0; bci < static_cast<std::ptrdiff_t>(B * C); ++bci) {
            const std::size_t bc = static_cast<std::size_t>(bci);
            const Real* g = n.grad.ptr() + bc * To * Ho * Wo;
            Real* gx = x->grad.ptr() + bc * T * H * W;
            for (std::size_t to = 0; to < To; ++to)
                for (std::size_t ho = 0; ho < Ho; ++ho)
                    for (std::size_t wo = 0; wo < Wo; ++wo) {
                        const Real gv = g[(to * Ho + ho) * Wo + wo] * inv;
                        for (std::size_t dt = 0; dt < ft; ++dt)
                            for (std::size_t dh = 0; dh < fh; ++dh)
                                for (std::size_t dw = 0; dw < fw; ++dw)
                                    gx[((to * ft + dt) * H + ho * fh + dh) * W + wo * fw + dw] += gv;
                    }
        }
    });
}

// Global average over everything after the channel axis: [B, C, ...] -> [B, C].
template <typename Real>
Var<Real> global_avg_pool(const Var<Real>& x) {
    const auto& sh = x->value.shape();
    const std::size_t B = sh[0], C = sh[1];
    std::size_t S = 1;
    for (std::size_t i = 2; i < sh.size(); ++i) S *= sh[i];
    const Real inv = Real(1) / static_cast<Real>(S);
    Tensor<Real> out({B, C});
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const Real* src = x->value.ptr() + bc * S;
        Real acc = Real(0);
        for (std::size_t s = 0; s < S; ++s) acc += src[s];
        out[bc] = acc * inv;
    }
    return make_node<Real>(std::move(out), {x}, [x, B, C, S, inv](Node<Real>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t bc = 0; bc < B * C; ++bc) {
            const Real gv = n.grad[bc] * inv;
            Real* gx = x->grad.ptr() + bc * S;
            for (std::size_t s = 0; s < S; ++s) gx[s] += gv;
        }
    });
}

// Tail replicate padding so pooling factors divide evenly.
template <typename Real>
Var<Real> replicate_pad3d(const Var<Real>& x, std::size_t pt, std::size_t ph, std::size_t pw) {
    if (pt == 0 && ph == 0 && pw == 0) return x;
    const std::size_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2),
                      H = x->value.dim(3), W = x->value.dim(4);
    const std::size_t To = T + pt, Ho = H + ph, Wo = W + pw;
    Tensor<Real> out({B, C, To, Ho, Wo});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t bci = 0; bci < static_cast<std::ptrdiff_t>(B * C); ++bci) {
        const std::size_t bc = static_cast<std::size_t>(bci);
        const Real* src = x->value.ptr() + bc * T * H * W;
        Real* dst = out.ptr() + bc * To * Ho * Wo;
        for (std::size_t t = 0; t < To; ++t) {
            const std::size_t ts = std::min(t, T - 1);
            for (std::size_t h = 0; h < Ho; ++h) {
                const std::size_t hs = std::min(h, H - 1);
                for (std::size_t w = 0; w < Wo; ++w) {
                    dst[(t * Ho + h) * Wo + w] = src[(ts * H + hs) * W + std::min(w, W - 1)];
                }
            }
        }
    }
    return make_node<Real>(std::move(out), {x}, [x, B, C, T, H, W, To, Ho, Wo](Node<Real>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t bci = 0; bci < static_cast<std::ptrdiff_t>(B * C); ++bci) {
            const std::size_t bc = static_cast<std::size_t>(bci);
            const Real* g = n.grad.ptr() + bc * To * Ho * Wo;
            Real* gx = x->grad.ptr() + bc * T * H * W;
            for (std::size_t t = 0; t < To; ++t) {
                const std::size_t ts = std::min(t, T - 1);
                for (std::size_t h = 0; h < Ho; ++h) {
                    const std::size_t hs = std::min(h, H - 1);
                    for (std::size_t w = 0; w < Wo; ++w) {
                        gx[(ts * H + hs) * W + std::min(w, W - 1)] += g[(t * Ho + h) * Wo + w];
                    }
                }
            }
        }
    });
}

// Discrete 5-point spatial Laplacian, replicate boundary, applied per frame
// and channel. Shape-preserving.
template <typename Real>
Var<Real> laplacian5(const Var<Real>& x) {
    const std::size_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2),
                      H = x->value.dim(3), W = x->value.dim(4);
    Tensor<Real> out({B, C, T, H, W});
    const auto cl = [](std::ptrdiff_t v, std::size_t n) {
        return static_cast<std::size_t>(v < 0 ? 0 : (v >= static_cast<std::ptrdiff_t>(n)
                                                         ? static_cast<std::ptrdiff_t>(n) - 1
                                                         : v));
    };
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t bcti = 0; bcti < static_cast<std::ptrdiff_t>(B * C * T); ++bcti) {
        const std::size_t bct = static_cast<std::size_t>(bcti);
        const Real* src = x->value.ptr() + bct * H * W;
        Real* dst = out.ptr() + bct * H * W;
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t w = 0; w < W; ++w) {
                const Real up = src[cl(static_cast<std::ptrdiff_t>(h) - 1, H) * W + w];
                const Real dn = src[cl(static_cast<std::ptrdiff_t>(h) + 1, H) * W + w];
                const Real lf = src[h * W + cl(static_cast<std::ptrdiff_t>(w) - 1, W)];
                const Real rt = src[h * W + cl(static_cast<std::ptrdiff_t>(w) + 1, W)];
                dst[h * W + w] = up + dn + lf + rt - Real(4) * src[h * W + w];
            }
        }
    }
    return make_node<Real>(std::move(out), {x}, [x, B, C, T, H, W, cl](Node<Real>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t bcti = 0; bcti < static_cast<std::ptrdiff_t>(B * C * T); ++bcti) {
            const std::size_t bct = static_cast<std::size_t>(bcti);
            const Real* g = n.grad.ptr() + bct * H * W;
            Real* gx = x->grad.ptr() + bct * H * W;
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t w = 0; w < W; ++w) {
                    const Real gv = g[h * W + w];
                    gx[cl(static_cast<std::ptrdiff_t>(h) - 1, H) * W + w] += gv;
                    gx[cl(static_cast<std::ptrdiff_t>(h) + 1, H) * W + w] += gv;
                    gx[h * W + cl(static_cast<std::ptrdiff_t>(w) - 1, W)] += gv;
                    gx[h * W + cl(static_cast<std::ptrdiff_t>(w) + 1, W)] += gv;
                    gx[h * W + w] -= Real(4) * gv;
                }
            }
        }
    });
}

// Per-channel running-statistic normalization with train/eval modes.
// x: [B, C, ...]; gamma, beta: [C]; running stats are module-owned buffers
// mutated only in training mode.
template <typename Real>
Var<Real> batch_norm_channels(const Var<Real>& x, const Var<Real>& gamma, const Var<Real>& beta,
                              Tensor<Real>& running_mean, Tensor<Real>& running_var, bool training,
                              Real momentum = Real(0.1), Real eps = Real(1e-5)) {
    const auto& sh = x->value.shape();
    const std::size_t B = sh[0], C = sh[1];
    std::size_t S = 1;
    for (std::size_t i = 2; i < sh.size(); ++i) S *= sh[i];
    const std::size_t m = B * S;

    std::vector<Real> mean(C), inv_std(C);
    if (training) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(C); ++ci) {
            const std::size_t c = static_cast<std::size_t>(ci);
            double acc = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const Real* src = x->value.ptr() + (b * C + c) * S;
                for (std::size_t s = 0; s < S; ++s) acc += static_cast<double>(src[s]);
            }
            const double mu = acc / static_cast<double>(m);
            double vacc = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const Real* src = x->value.ptr() + (b * C + c) * S;
                for (std::size_t s = 0; s < S; ++s) {
                    const double d = static_cast<double>(src[s]) - mu;
                    vacc += d * d;
                }
            }
            const double var = vacc / static_cast<double>(m);
            mean[c] = static_cast<Real>(mu);
            inv_std[c] = static_cast<Real>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            running_mean[c] = (Real(1) - momentum) * running_mean[c] + momentum * static_cast<Real>(mu);
            running_var[c] = (Real(1) - momentum) * running_var[c] + momentum * static_cast<Real>(var);
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = running_mean[c];
            inv_std[c] = Real(1) / std::sqrt(running_var[c] + eps);
        }
    }

    Tensor<Real> out(sh);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t bci = 0; bci < static_cast<std::ptrdiff_t>(B * C); ++bci) {
        const std::size_t b = static_cast<std::size_t>(bci) / C;
        const std::size_t c = static_cast<std::size_t>(bci) % C;
        const Real* src = x->value.ptr() + (b * C + c) * S;
        Real* dst = out.ptr() + (b * C + c) * S;
        const Real mu = mean[c], is = inv_std[c], ga = gamma->value[c], be = beta->value[c];
        for (std::size_t s = 0; s < S; ++s) dst[s] = ga * (src[s] - mu) * is + be;
    }

    return make_node<Real>(std::move(out), {x, gamma, beta},
                           [x, gamma, beta, B, C, S, m, mean, inv_std, training](Node<Real>& n) {
        if (gamma->requires_grad) gamma->ensure_grad();
        if (beta->requires_grad) beta->ensure_grad();
        if (x->requires_grad) x->ensure_grad();
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t cc = 0; cc < static_cast<std::ptrdiff_t>(C); ++cc) {
            const std::size_t c = static_cast<std::size_t>(cc);
            const Real mu = mean[c], is = inv_std[c], ga = gamma->value[c];
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const Real* g = n.grad.ptr() + (b * C + c) * S;
                const Real* xv = x->value.ptr() + (b * C + c) * S;
                for (std::size_t s = 0; s < S; ++s) {
                    sum_g += static_cast<double>(g[s]);
                    sum_gx += static_cast<double>(g[s]) * static_cast<double>((xv[s] - mu) * is);
                }
            }
            if (gamma->requires_grad) {
                gamma->grad[c] += static_cast<Real>(sum_gx);
            }
            if (beta->requires_grad) {
                beta->grad[c] += static_cast<Real>(sum_g);
            }
            if (x->requires_grad) {
                if (training) {
                    const Real mg = static_cast<Real>(sum_g / static_cast<double>(m));
                    const Real mgx = static_cast<Real>(sum_gx / static_cast<double>(m));
                    for (std::size_t b = 0; b < B; ++b) {
                        const Real* g = n.grad.ptr() + (b * C + c) * S;
                        const Real* xv = x->value.ptr() + (b * C + c) * S;
                        Real* gx = x->grad.ptr() + (b * C + c) * S;
                        for (std::size_t s = 0; s < S; ++s) {
                            const Real xh = (xv[s] - mu) * is;
                            gx[s] += ga * is * (g[s] - mg - xh * mgx);
                        }
                    }
                } else {
                    for (std::size_t b = 0; b < B; ++b) {
                        const Real* g = n.grad.ptr() + (b * C + c) * S;
                        Real* gx = x->grad.ptr() + (b * C + c) * S;
                        for (std::size_t s = 0; s < S; ++s) gx[s] += ga * is * g[s];
                    }
                }
            }
        }
    });
}

// Layer normalization over the last axis with learnable gain and shift.
template <typename Real>
Var<Real> layer_norm(const Var<Real>& x, const Var<Real>& gain, const Var<Real>& shift,
                     Real eps = Real(1e-5)) {
    const std::size_t D = x->value.shape().back();
    const std::size_t rows = x->value.size() / D;
    if (gain->value.size() != D || shift->value.size() != D) throw ShapeError("layer_norm: bad params");
    Tensor<Real> out(x->value.shape());
    std::vector<Real> mean(rows), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* src = x->value.ptr() + r * D;
        double acc = 0.0;
        for (std::size_t d = 0; d < D; ++d) acc += static_cast<double>(src[d]);
        const double mu = acc / static_cast<double>(D);
        double vacc = 0.0;
        for (std::size_t d = 0; d < D; ++d) {
            const double dv = static_cast<double>(src[d]) - mu;
            vacc += dv * dv;
        }
        mean[r] = static_cast<Real>(mu);
        inv_std[r] = static_cast<Real>(1.0 / std::sqrt(vacc / static_cast<double>(D) +
                                                       static_cast<double>(eps)));
        Real* dst = out.ptr() + r * D;
        for (std::size_t d = 0; d < D; ++d)
            dst[d] = gain->value[d] * (src[d] - mean[r]) * inv_std[r] + shift->value[d];
    }
    return make_node<Real>(std::move(out), {x, gain, shift},
                           [x, gain, shift, rows, D, mean, inv_std](Node<Real>& n) {
        for (std::size_t r = 0; r < rows; ++r) {
            const Real* g = n.grad.ptr() + r * D;
            const Real* xv = x->value.ptr() + r * D;
            const Real mu = mean[r], is = inv_std[r];
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t d = 0; d < D; ++d) {
                const double gg = static_cast<double>(g[d]) * static_cast<double>(gain->value[d]);
                sum_g += gg;
                sum_gx += gg * static_cast<double>((xv[d] - mu) * is);
            }
            if (gain->requires_grad) {
                gain->ensure_grad();
                for (std::size_t d = 0; d < D; ++d) gain->grad[d] += g[d] * (xv[d] - mu) * is;
            }
            if (shift->requires_grad) {
                shift->ensure_grad();
                for (std::size_t d = 0; d < D; ++d) shift->grad[d] += g[d];
            }
            if (x->requires_grad) {
                x->ensure_grad();
                Real* gx = x->grad.ptr() + r * D;
                const Real mg = static_cast<Real>(sum_g / static_cast<double>(D));
                const Real mgx = static_cast<Real>(sum_gx / static_cast<double>(D));
                for (std::size_t d = 0; d < D; ++d) {
                    const Real xh = (xv[d] - mu) * is;
                    gx[d] += is * (gain->value[d] * g[d] - mg - xh * mgx);
                }
            }
        }
    });
}

}  // namespace aullmxx::ops

#endif  // AULLMXX_CORE_OPS_NN_HPP
