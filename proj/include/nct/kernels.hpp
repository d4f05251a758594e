#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "nct/tensor.hpp"
#include "nct/threadpool.hpp"

// Raw tensor math. Everything here is plain data-in/data-out; the tape in
// ops.hpp wires these into the differentiation graph. Parallel loops always
// partition output elements into fixed chunks, so results do not depend on
// thread count.
namespace nct::kern {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

// ---- elementwise ----

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    require_same_shape(a, b, "add");
    TensorT<S> out(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    require_same_shape(a, b, "sub");
    TensorT<S> out(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    require_same_shape(a, b, "mul");
    TensorT<S> out(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    return out;
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S c) {
    TensorT<S> out(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * c;
    return out;
}

template <typename S>
TensorT<S> add_scalar(const TensorT<S>& a, S c) {
    TensorT<S> out(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + c;
    return out;
}

// y += a (in place accumulate; the one sanctioned mutation, used for grads)
template <typename S>
void accum(TensorT<S>& y, const TensorT<S>& a) {
    require_same_shape(y, a, "accum");
    for (int64_t i = 0; i < y.numel(); ++i) y[i] += a[i];
}

// ---- matmul ----

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    check_shape(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
                "matmul: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<S> out({m, n});
    EMap<S>(out.data(), m, n).noalias() =
        ECMap<S>(a.data(), m, k) * ECMap<S>(b.data(), k, n);
    return out;
}

// a^T * b, a:(K,M) b:(K,N) -> (M,N)
template <typename S>
TensorT<S> matmul_tn(const TensorT<S>& a, const TensorT<S>& b) {
    check_shape(a.ndim() == 2 && b.ndim() == 2 && a.dim(0) == b.dim(0),
                "matmul_tn: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
    int k = a.dim(0), m = a.dim(1), n = b.dim(1);
    TensorT<S> out({m, n});
    EMap<S>(out.data(), m, n).noalias() =
        ECMap<S>(a.data(), k, m).transpose() * ECMap<S>(b.data(), k, n);
    return out;
}

// a * b^T, a:(M,K) b:(N,K) -> (M,N)
template <typename S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b) {
    check_shape(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(1),
                "matmul_nt: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
    int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    TensorT<S> out({m, n});
    EMap<S>(out.data(), m, n).noalias() =
        ECMap<S>(a.data(), m, k) * ECMap<S>(b.data(), n, k).transpose();
    return out;
}

// Batched a:(B,M,K) b:(B,K,N) -> (B,M,N); transpose_b treats b as (B,N,K).
template <typename S>
TensorT<S> bmm(const TensorT<S>& a, const TensorT<S>& b, bool transpose_b) {
    check_shape(a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0),
                "bmm: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
    int bs = a.dim(0), m = a.dim(1), k = a.dim(2);
    int n = transpose_b ? b.dim(1) : b.dim(2);
    check_shape(transpose_b ? b.dim(2) == k : b.dim(1) == k,
                "bmm: inner dim mismatch " + shape_str(a.shape) + " x " + shape_str(b.shape));
    TensorT<S> out({bs, m, n});
    for (int i = 0; i < bs; ++i) {
        ECMap<S> am(a.data() + static_cast<int64_t>(i) * m * k, m, k);
        EMap<S> om(out.data() + static_cast<int64_t>(i) * m * n, m, n);
        if (transpose_b) {
            ECMap<S> bm(b.data() + static_cast<int64_t>(i) * n * k, n, k);
            om.noalias() = am * bm.transpose();
        } else {
            ECMap<S> bm(b.data() + static_cast<int64_t>(i) * k * n, k, n);
            om.noalias() = am * bm;
        }
    }
    return out;
}

// Batched x^T y: x:(B,K,M) y:(B,K,N) -> (B,M,N)
template <typename S>
TensorT<S> bmm_tn(const TensorT<S>& x, const TensorT<S>& y) {
    check_shape(x.ndim() == 3 && y.ndim() == 3 && x.dim(0) == y.dim(0) && x.dim(1) == y.dim(1),
                "bmm_tn: incompatible shapes " + shape_str(x.shape) + " x " + shape_str(y.shape));
    int bs = x.dim(0), k = x.dim(1), m = x.dim(2), n = y.dim(2);
    TensorT<S> out({bs, m, n});
    for (int i = 0; i < bs; ++i) {
        ECMap<S> xm(x.data() + static_cast<int64_t>(i) * k * m, k, m);
        ECMap<S> ym(y.data() + static_cast<int64_t>(i) * k * n, k, n);
        EMap<S>(out.data() + static_cast<int64_t>(i) * m * n, m, n).noalias() =
            xm.transpose() * ym;
    }
    return out;
}

// ---- conv2d, 3x3, same padding, stride 1 or 2 ----

inline int conv_out_extent(int in, int stride) { return (in + 2 - 3) / stride + 1; }

// Gathers 3x3 patches of x[b]: col is (C*9, Ho*Wo) row-major.
template <typename S>
void im2col3x3(const S* x, int c, int h, int w, int stride, S* col) {
    int ho = conv_out_extent(h, stride), wo = conv_out_extent(w, stride);
    int n = ho * wo;
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                S* row = col + (static_cast<int64_t>(ci) * 9 + ky * 3 + kx) * n;
                const S* xc = x + static_cast<int64_t>(ci) * h * w;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride - 1 + ky;
                    S* dst = row + static_cast<int64_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, S(0));
                        continue;
                    }
                    const S* src = xc + static_cast<int64_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride - 1 + kx;
                        dst[ox] = (ix < 0 || ix >= w) ? S(0) : src[ix];
                    }
                }
            }
        }
    }
}

// Scatter-add of col gradients back into the input image.
template <typename S>
void col2im3x3(const S* col, int c, int h, int w, int stride, S* x) {
    int ho = conv_out_extent(h, stride), wo = conv_out_extent(w, stride);
    int n = ho * wo;
    for (int ci = 0; ci < c; ++ci) {
        S* xc = x + static_cast<int64_t>(ci) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const S* row = col + (static_cast<int64_t>(ci) * 9 + ky * 3 + kx) * n;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride - 1 + ky;
                    if (iy < 0 || iy >= h) continue;
                    const S* src = row + static_cast<int64_t>(oy) * wo;
                    S* dst = xc + static_cast<int64_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride - 1 + kx;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// x:(B,C,H,W) wgt:(O,C,3,3) bias:(O) -> (B,O,Ho,Wo)
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& wgt, const TensorT<S>& bias, int stride) {
    check_shape(x.ndim() == 4 && wgt.ndim() == 4 && wgt.dim(2) == 3 && wgt.dim(3) == 3,
                "conv2d: expected x (B,C,H,W) and 3x3 kernel, got " + shape_str(x.shape) +
                    " and " + shape_str(wgt.shape));
    check_shape(x.dim(1) == wgt.dim(1), "conv2d: channel mismatch " + shape_str(x.shape) +
                                            " vs kernel " + shape_str(wgt.shape));
    check_shape(bias.numel() == wgt.dim(0), "conv2d: bias size " + shape_str(bias.shape) +
                                                " vs kernel " + shape_str(wgt.shape));
    check(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
    int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), o = wgt.dim(0);
    int ho = conv_out_extent(h, stride), wo = conv_out_extent(w, stride);
    int k = c * 9, n = ho * wo;
    TensorT<S> out({b, o, ho, wo});
    parallel_for(b, 1, [&](int64_t b0, int64_t b1) {
        std::vector<S> col(static_cast<size_t>(k) * n);
        for (int64_t bi = b0; bi < b1; ++bi) {
            im2col3x3(x.data() + bi * c * h * w, c, h, w, stride, col.data());
            EMap<S> om(out.data() + bi * o * n, o, n);
            om.noalias() = ECMap<S>(wgt.data(), o, k) * ECMap<S>(col.data(), k, n);
            for (int oi = 0; oi < o; ++oi) om.row(oi).array() += bias[oi];
        }
    });
    return out;
}

template <typename S>
struct Conv2dGrads {
    TensorT<S> dx, dw, db;
};

template <typename S>
Conv2dGrads<S> conv2d_backward(const TensorT<S>& x, const TensorT<S>& wgt, int stride,
                               const TensorT<S>& gout, bool need_dx, bool need_dw) {
    int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), o = wgt.dim(0);
    int ho = conv_out_extent(h, stride), wo = conv_out_extent(w, stride);
    int k = c * 9, n = ho * wo;
    Conv2dGrads<S> g;
    if (need_dw) {
        g.dw = TensorT<S>(wgt.shape);
        g.db = TensorT<S>({o});
        // Per-batch partials land in separate buffers; the reduction below
        // runs in fixed batch order.
        std::vector<TensorT<S>> partial(static_cast<size_t>(b));
        parallel_for(b, 1, [&](int64_t b0, int64_t b1) {
            std::vector<S> col(static_cast<size_t>(k) * n);
            for (int64_t bi = b0; bi < b1; ++bi) {
                im2col3x3(x.data() + bi * c * h * w, c, h, w, stride, col.data());
                partial[static_cast<size_t>(bi)] = TensorT<S>({o, k});
                EMap<S>(partial[static_cast<size_t>(bi)].data(), o, k).noalias() =
                    ECMap<S>(gout.data() + bi * o * n, o, n) * ECMap<S>(col.data(), k, n).transpose();
            }
        });
        for (int bi = 0; bi < b; ++bi) accum(g.dw, partial[static_cast<size_t>(bi)].reshaped(wgt.shape));
        for (int bi = 0; bi < b; ++bi) {
            const S* gp = gout.data() + static_cast<int64_t>(bi) * o * n;
            for (int oi = 0; oi < o; ++oi) {
                S s = 0;
                const S* row = gp + static_cast<int64_t>(oi) * n;
                for (int j = 0; j < n; ++j) s += row[j];
                g.db[oi] += s;
            }
        }
    }
    if (need_dx) {
        g.dx = TensorT<S>(x.shape);
        parallel_for(b, 1, [&](int64_t b0, int64_t b1) {
            std::vector<S> dcol(static_cast<size_t>(k) * n);
            for (int64_t bi = b0; bi < b1; ++bi) {
                EMap<S>(dcol.data(), k, n).noalias() =
                    ECMap<S>(wgt.data(), o, k).transpose() * ECMap<S>(gout.data() + bi * o * n, o, n);
                col2im3x3(dcol.data(), c, h, w, stride, g.dx.data() + bi * c * h * w);
            }
        });
    }
    return g;
}

// ---- 1x1 conv: channel mixing ----

// x:(B,C,H,W) w:(O,C) b:(O) -> (B,O,H,W)
template <typename S>
TensorT<S> conv1x1(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
    check_shape(x.ndim() == 4 && w.ndim() == 2 && x.dim(1) == w.dim(1),
                "conv1x1: " + shape_str(x.shape) + " with " + shape_str(w.shape));
    check_shape(b.numel() == w.dim(0), "conv1x1: bias size mismatch");
    int bs = x.dim(0), c = x.dim(1), o = w.dim(0);
    int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    TensorT<S> out({bs, o, x.dim(2), x.dim(3)});
    for (int bi = 0; bi < bs; ++bi) {
        EMap<S> om(out.data() + bi * o * hw, o, hw);
        om.noalias() = ECMap<S>(w.data(), o, c) * ECMap<S>(x.data() + bi * c * hw, c, hw);
        for (int oi = 0; oi < o; ++oi) om.row(oi).array() += b[oi];
    }
    return out;
}

template <typename S>
struct Conv1x1Grads {
    TensorT<S> dx, dw, db;
};

template <typename S>
Conv1x1Grads<S> conv1x1_backward(const TensorT<S>& x, const TensorT<S>& w,
                                 const TensorT<S>& gout, bool need_dx, bool need_dw) {
    int bs = x.dim(0), c = x.dim(1), o = w.dim(0);
    int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    Conv1x1Grads<S> g;
    if (need_dw) {
        g.dw = TensorT<S>({o, c});
        g.db = TensorT<S>({o});
        EMap<S> dwm(g.dw.data(), o, c);
        for (int bi = 0; bi < bs; ++bi)
            dwm.noalias() += ECMap<S>(gout.data() + bi * o * hw, o, hw) *
                             ECMap<S>(x.data() + bi * c * hw, c, hw).transpose();
        for (int bi = 0; bi < bs; ++bi)
            for (int oi = 0; oi < o; ++oi) {
                const S* row = gout.data() + (static_cast<int64_t>(bi) * o + oi) * hw;
                S s = 0;
                for (int64_t i = 0; i < hw; ++i) s += row[i];
                g.db[oi] += s;
            }
    }
    if (need_dx) {
        g.dx = TensorT<S>(x.shape);
        for (int bi = 0; bi < bs; ++bi)
            EMap<S>(g.dx.data() + bi * c * hw, c, hw).noalias() =
                ECMap<S>(w.data(), o, c).transpose() * ECMap<S>(gout.data() + bi * o * hw, o, hw);
    }
    return g;
}

// (B,M,N) -> (B,N,M)
template <typename S>
TensorT<S> transpose12(const TensorT<S>& x) {
    check_shape(x.ndim() == 3, "transpose12: expected 3-D, got " + shape_str(x.shape));
    int b = x.dim(0), m = x.dim(1), n = x.dim(2);
    TensorT<S> out({b, n, m});
    for (int bi = 0; bi < b; ++bi) {
        const S* src = x.data() + static_cast<int64_t>(bi) * m * n;
        S* dst = out.data() + static_cast<int64_t>(bi) * m * n;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) dst[static_cast<int64_t>(j) * m + i] = src[static_cast<int64_t>(i) * n + j];
    }
    return out;
}

// ---- nearest-neighbour 2x upsample ----

template <typename S>
TensorT<S> upsample2x(const TensorT<S>& x) {
    check_shape(x.ndim() == 4, "upsample2x: expected (B,C,H,W), got " + shape_str(x.shape));
    int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    TensorT<S> out({b, c, 2 * h, 2 * w});
    int64_t planes = static_cast<int64_t>(b) * c;
    parallel_for(planes, 8, [&](int64_t p0, int64_t p1) {
        for (int64_t p = p0; p < p1; ++p) {
            const S* src = x.data() + p * h * w;
            S* dst = out.data() + p * 4 * h * w;
            for (int y = 0; y < h; ++y) {
                for (int xx = 0; xx < w; ++xx) {
                    S v = src[y * w + xx];
                    S* d = dst + (2 * y) * (2 * w) + 2 * xx;
                    d[0] = v;
                    d[1] = v;
                    d[2 * w] = v;
                    d[2 * w + 1] = v;
                }
            }
        }
    });
    return out;
}

template <typename S>
TensorT<S> upsample2x_backward(const TensorT<S>& gout, int h, int w) {
    int b = gout.dim(0), c = gout.dim(1);
    TensorT<S> dx({b, c, h, w});
    int64_t planes = static_cast<int64_t>(b) * c;
    for (int64_t p = 0; p < planes; ++p) {
        const S* g = gout.data() + p * 4 * h * w;
        S* d = dx.data() + p * h * w;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                const S* s = g + (2 * y) * (2 * w) + 2 * xx;
                d[y * w + xx] = s[0] + s[1] + s[2 * w] + s[2 * w + 1];
            }
    }
    return dx;
}

// ---- group norm ----

template <typename S>
struct GroupNormOut {
    TensorT<S> y;
    TensorT<S> mean, rstd;  // (B,G) saved for backward
};

template <typename S>
GroupNormOut<S> group_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                           int groups, S eps = static_cast<S>(1e-5)) {
    check_shape(x.ndim() == 4, "group_norm: expected (B,C,H,W), got " + shape_str(x.shape));
    int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    check_shape(c % groups == 0, "group_norm: channels " + std::to_string(c) +
                                     " not divisible by groups " + std::to_string(groups));
    check_shape(gamma.numel() == c && beta.numel() == c, "group_norm: affine size mismatch");
    int cg = c / groups;
    int64_t gsz = static_cast<int64_t>(cg) * h * w;
    GroupNormOut<S> out;
    out.y = TensorT<S>(x.shape);
    out.mean = TensorT<S>({b, groups});
    out.rstd = TensorT<S>({b, groups});
    parallel_for(static_cast<int64_t>(b) * groups, 1, [&](int64_t g0, int64_t g1) {
        for (int64_t gi = g0; gi < g1; ++gi) {
            int bi = static_cast<int>(gi / groups), gr = static_cast<int>(gi % groups);
            const S* src = x.data() + (static_cast<int64_t>(bi) * c + gr * cg) * h * w;
            S* dst = out.y.data() + (static_cast<int64_t>(bi) * c + gr * cg) * h * w;
            double m = 0;
            for (int64_t i = 0; i < gsz; ++i) m += src[i];
            m /= static_cast<double>(gsz);
            double v = 0;
            for (int64_t i = 0; i < gsz; ++i) {
                double d = src[i] - m;
                v += d * d;
            }
            v /= static_cast<double>(gsz);
            S rs = static_cast<S>(1.0 / std::sqrt(v + static_cast<double>(eps)));
            out.mean[gi] = static_cast<S>(m);
            out.rstd[gi] = rs;
            for (int ci = 0; ci < cg; ++ci) {
                S ga = gamma[gr * cg + ci], be = beta[gr * cg + ci];
                const S* s = src + static_cast<int64_t>(ci) * h * w;
                S* d = dst + static_cast<int64_t>(ci) * h * w;
                for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
                    d[i] = (s[i] - static_cast<S>(m)) * rs * ga + be;
            }
        }
    });
    return out;
}

template <typename S>
struct GroupNormGrads {
    TensorT<S> dx, dgamma, dbeta;
};

template <typename S>
GroupNormGrads<S> group_norm_backward(const TensorT<S>& x, const TensorT<S>& gamma, int groups,
                                      const GroupNormOut<S>& saved, const TensorT<S>& gout) {
    int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int cg = c / groups;
    int64_t hw = static_cast<int64_t>(h) * w;
    int64_t gsz = cg * hw;
    GroupNormGrads<S> out;
    out.dx = TensorT<S>(x.shape);
    out.dgamma = TensorT<S>({c});
    out.dbeta = TensorT<S>({c});
    for (int bi = 0; bi < b; ++bi) {
        for (int gr = 0; gr < groups; ++gr) {
            int64_t base = (static_cast<int64_t>(bi) * c + gr * cg) * hw;
            S m = saved.mean[bi * groups + gr];
            S rs = saved.rstd[bi * groups + gr];
            // dL/dxhat = gout * gamma; reduce for mean/var terms.
            double sum_dxhat = 0, sum_dxhat_xhat = 0;
            for (int ci = 0; ci < cg; ++ci) {
                S ga = gamma[gr * cg + ci];
                const S* xs = x.data() + base + ci * hw;
                const S* gs = gout.data() + base + ci * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    double xhat = (xs[i] - m) * rs;
                    double dxh = static_cast<double>(gs[i]) * ga;
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xhat;
                }
            }
            for (int ci = 0; ci < cg; ++ci) {
                S ga = gamma[gr * cg + ci];
                const S* xs = x.data() + base + ci * hw;
                const S* gs = gout.data() + base + ci * hw;
                S* ds = out.dx.data() + base + ci * hw;
                double dg = 0, db = 0;
                for (int64_t i = 0; i < hw; ++i) {
                    double xhat = (xs[i] - m) * rs;
                    double dxh = static_cast<double>(gs[i]) * ga;
                    ds[i] = static_cast<S>(
                        rs * (dxh - sum_dxhat / static_cast<double>(gsz) -
                              xhat * sum_dxhat_xhat / static_cast<double>(gsz)));
                    dg += static_cast<double>(gs[i]) * xhat;
                    db += gs[i];
                }
                out.dgamma[gr * cg + ci] += static_cast<S>(dg);
                out.dbeta[gr * cg + ci] += static_cast<S>(db);
            }
        }
    }
    return out;
}

// ---- activations ----

template <typename S>
TensorT<S> silu(const TensorT<S>& x) {
    TensorT<S> out(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) {
        S sg = static_cast<S>(1) / (static_cast<S>(1) + std::exp(-x[i]));
        out[i] = x[i] * sg;
    }
    return out;
}

template <typename S>
TensorT<S> silu_backward(const TensorT<S>& x, const TensorT<S>& gout) {
    TensorT<S> dx(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) {
        S sg = static_cast<S>(1) / (static_cast<S>(1) + std::exp(-x[i]));
        dx[i] = gout[i] * sg * (static_cast<S>(1) + x[i] * (static_cast<S>(1) - sg));
    }
    return dx;
}

// Softmax over the last dim of (B,N,L) with a (B,L) 0/1 mask shared by all N
// rows. A mask row with no active entries falls back to all-active (the
// null-condition convention: every key row is then the same learned null).
template <typename S>
TensorT<S> softmax_masked(const TensorT<S>& x, const TensorT<S>& mask) {
    check_shape(x.ndim() == 3, "softmax_masked: expected (B,N,L), got " + shape_str(x.shape));
    int b = x.dim(0), n = x.dim(1), l = x.dim(2);
    check_shape(mask.ndim() == 2 && mask.dim(0) == b && mask.dim(1) == l,
                "softmax_masked: mask shape " + shape_str(mask.shape));
    TensorT<S> out(x.shape);
    for (int bi = 0; bi < b; ++bi) {
        const S* mrow = mask.data() + static_cast<int64_t>(bi) * l;
        bool any = false;
        for (int j = 0; j < l; ++j) any = any || mrow[j] > S(0.5);
        for (int ni = 0; ni < n; ++ni) {
            const S* xr = x.data() + (static_cast<int64_t>(bi) * n + ni) * l;
            S* orow = out.data() + (static_cast<int64_t>(bi) * n + ni) * l;
            S mx = -std::numeric_limits<S>::infinity();
            for (int j = 0; j < l; ++j)
                if (!any || mrow[j] > S(0.5)) mx = std::max(mx, xr[j]);
            S denom = 0;
            for (int j = 0; j < l; ++j) {
                if (!any || mrow[j] > S(0.5)) {
                    orow[j] = std::exp(xr[j] - mx);
                    denom += orow[j];
                } else {
                    orow[j] = 0;
                }
            }
            for (int j = 0; j < l; ++j) orow[j] /= denom;
        }
    }
    return out;
}

template <typename S>
TensorT<S> softmax_backward(const TensorT<S>& y, const TensorT<S>& gout) {
    // dx_j = y_j * (g_j - sum_k g_k y_k); masked lanes have y == 0.
    int b = y.dim(0), n = y.dim(1), l = y.dim(2);
    TensorT<S> dx(y.shape);
    for (int64_t row = 0; row < static_cast<int64_t>(b) * n; ++row) {
        const S* yr = y.data() + row * l;
        const S* gr = gout.data() + row * l;
        S* dr = dx.data() + row * l;
        S dot = 0;
        for (int j = 0; j < l; ++j) dot += gr[j] * yr[j];
        for (int j = 0; j < l; ++j) dr[j] = yr[j] * (gr[j] - dot);
    }
    return dx;
}

// ---- reductions ----

template <typename S>
S sum_all(const TensorT<S>& x) {
    double s = 0;
    for (int64_t i = 0; i < x.numel(); ++i) s += x[i];
    return static_cast<S>(s);
}

template <typename S>
TensorT<S> mean_all(const TensorT<S>& x) {
    return TensorT<S>::scalar(static_cast<S>(static_cast<double>(sum_all(x)) /
                                             static_cast<double>(x.numel())));
}

template <typename S>
TensorT<S> mse(const TensorT<S>& a, const TensorT<S>& b) {
    require_same_shape(a, b, "mse");
    double s = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return TensorT<S>::scalar(static_cast<S>(s / static_cast<double>(a.numel())));
}

// ---- broadcast helpers ----

// x:(M,N) + v:(N) per row
template <typename S>
TensorT<S> add_rowvec(const TensorT<S>& x, const TensorT<S>& v) {
    check_shape(x.ndim() == 2 && v.numel() == x.dim(1),
                "add_rowvec: " + shape_str(x.shape) + " + " + shape_str(v.shape));
    TensorT<S> out(x.shape);
    int m = x.dim(0), n = x.dim(1);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<int64_t>(i) * n + j] = x[static_cast<int64_t>(i) * n + j] + v[j];
    return out;
}

// FiLM: y = x * (1 + s) + t with s,t:(B,C) broadcast over (H,W)
template <typename S>
TensorT<S> film(const TensorT<S>& x, const TensorT<S>& s, const TensorT<S>& t) {
    check_shape(x.ndim() == 4, "film: expected (B,C,H,W)");
    int b = x.dim(0), c = x.dim(1);
    int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    check_shape(s.ndim() == 2 && s.dim(0) == b && s.dim(1) == c && t.same_shape(s),
                "film: modulation shape " + shape_str(s.shape) + " vs x " + shape_str(x.shape));
    TensorT<S> out(x.shape);
    for (int64_t p = 0; p < static_cast<int64_t>(b) * c; ++p) {
        S sc = static_cast<S>(1) + s[p], sh = t[p];
        const S* xs = x.data() + p * hw;
        S* d = out.data() + p * hw;
        for (int64_t i = 0; i < hw; ++i) d[i] = xs[i] * sc + sh;
    }
    return out;
}

// ---- concat / slice along an axis ----

template <typename S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, int axis) {
    check(!parts.empty(), "concat: empty input list");
    std::vector<int> sh = parts[0].shape;
    check_shape(axis >= 0 && axis < static_cast<int>(sh.size()), "concat: bad axis");
    int total = 0;
    for (const auto& p : parts) {
        check_shape(p.ndim() == static_cast<int>(sh.size()), "concat: rank mismatch");
        for (int d = 0; d < p.ndim(); ++d)
            check_shape(d == axis || p.dim(d) == sh[static_cast<size_t>(d)],
                        "concat: shape mismatch " + shape_str(p.shape) + " vs " + shape_str(sh));
        total += p.dim(axis);
    }
    sh[static_cast<size_t>(axis)] = total;
    TensorT<S> out(sh);
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= sh[static_cast<size_t>(d)];
    for (int d = axis + 1; d < static_cast<int>(sh.size()); ++d) inner *= sh[static_cast<size_t>(d)];
    int64_t out_stride = static_cast<int64_t>(total) * inner;
    int64_t off = 0;
    for (const auto& p : parts) {
        int64_t pa = static_cast<int64_t>(p.dim(axis)) * inner;
        for (int64_t oi = 0; oi < outer; ++oi)
            std::memcpy(out.data() + oi * out_stride + off, p.data() + oi * pa, sizeof(S) * pa);
        off += pa;
    }
    return out;
}

template <typename S>
TensorT<S> slice(const TensorT<S>& x, int axis, int start, int len) {
    check_shape(axis >= 0 && axis < x.ndim(), "slice: bad axis");
    check_shape(start >= 0 && len > 0 && start + len <= x.dim(axis),
                "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                    ") out of " + shape_str(x.shape));
    std::vector<int> sh = x.shape;
    sh[static_cast<size_t>(axis)] = len;
    TensorT<S> out(sh);
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= x.dim(d);
    for (int d = axis + 1; d < x.ndim(); ++d) inner *= x.dim(d);
    int64_t in_stride = static_cast<int64_t>(x.dim(axis)) * inner;
    int64_t out_stride = static_cast<int64_t>(len) * inner;
    for (int64_t oi = 0; oi < outer; ++oi)
        std::memcpy(out.data() + oi * out_stride, x.data() + oi * in_stride + start * inner,
                    sizeof(S) * out_stride);
    return out;
}

// Inverse of slice for gradients: writes src into a zero tensor of shape sh.
template <typename S>
TensorT<S> pad_slice(const TensorT<S>& src, const std::vector<int>& sh, int axis, int start) {
    TensorT<S> out(sh);
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= sh[static_cast<size_t>(d)];
    for (int d = axis + 1; d < static_cast<int>(sh.size()); ++d) inner *= sh[static_cast<size_t>(d)];
    int64_t out_stride = static_cast<int64_t>(sh[static_cast<size_t>(axis)]) * inner;
    int64_t src_stride = static_cast<int64_t>(src.dim(axis)) * inner;
    for (int64_t oi = 0; oi < outer; ++oi)
        std::memcpy(out.data() + oi * out_stride + start * inner, src.data() + oi * src_stride,
                    sizeof(S) * src_stride);
    return out;
}

// ---- embedding rows ----

// table:(V,D) ids flat -> (ids.size(), D); caller reshapes.
template <typename S>
TensorT<S> gather_rows(const TensorT<S>& table, const std::vector<int>& ids) {
    check_shape(table.ndim() == 2, "gather_rows: table must be (V,D)");
    int v = table.dim(0), d = table.dim(1);
    TensorT<S> out({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        check(ids[i] >= 0 && ids[i] < v, "gather_rows: id out of range");
        std::memcpy(out.data() + static_cast<int64_t>(i) * d,
                    table.data() + static_cast<int64_t>(ids[i]) * d, sizeof(S) * d);
    }
    return out;
}

}  // namespace nct::kern
