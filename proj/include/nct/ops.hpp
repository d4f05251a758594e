#pragma once

#include <vector>

#include "nct/kernels.hpp"
#include "nct/tape.hpp"

// Differentiable op layer. Each op runs the forward kernel, then registers a
// backward closure that routes cotangents to whichever parents need them.
namespace nct::ops {

template <typename S>
VarT<S> add(VarT<S> a, VarT<S> b) {
    TapeT<S>& t = *a.tape;
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    int ia = a.id, ib = b.id;
    return t.push(kern::add(a.val(), b.val()), ng, [ia, ib](TapeT<S>& tp, const TensorT<S>& g) {
        tp.accum_grad(ia, g);
        tp.accum_grad(ib, g);
    });
}

template <typename S>
VarT<S> sub(VarT<S> a, VarT<S> b) {
    TapeT<S>& t = *a.tape;
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    int ia = a.id, ib = b.id;
    return t.push(kern::sub(a.val(), b.val()), ng, [ia, ib](TapeT<S>& tp, const TensorT<S>& g) {
        tp.accum_grad(ia, g);
        if (tp.needs_grad(ib)) tp.accum_grad(ib, kern::scale(g, S(-1)));
    });
}

template <typename S>
VarT<S> mul(VarT<S> a, VarT<S> b) {
    TapeT<S>& t = *a.tape;
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    int ia = a.id, ib = b.id;
    TensorT<S> av = a.val(), bv = b.val();
    return t.push(kern::mul(av, bv), ng, [ia, ib, av, bv](TapeT<S>& tp, const TensorT<S>& g) {
        if (tp.needs_grad(ia)) tp.accum_grad(ia, kern::mul(g, bv));
        if (tp.needs_grad(ib)) tp.accum_grad(ib, kern::mul(g, av));
    });
}

template <typename S>
VarT<S> scale(VarT<S> a, S c) {
    TapeT<S>& t = *a.tape;
    int ia = a.id;
    return t.push(kern::scale(a.val(), c), t.needs_grad(a),
                  [ia, c](TapeT<S>& tp, const TensorT<S>& g) {
                      tp.accum_grad(ia, kern::scale(g, c));
                  });
}

template <typename S>
VarT<S> reshape(VarT<S> a, std::vector<int> sh) {
    TapeT<S>& t = *a.tape;
    int ia = a.id;
    std::vector<int> orig = a.val().shape;
    return t.push(a.val().reshaped(std::move(sh)), t.needs_grad(a),
                  [ia, orig](TapeT<S>& tp, const TensorT<S>& g) {
                      tp.accum_grad(ia, g.reshaped(orig));
                  });
}

template <typename S>
VarT<S> matmul(VarT<S> a, VarT<S> b) {
    TapeT<S>& t = *a.tape;
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    int ia = a.id, ib = b.id;
    TensorT<S> av = a.val(), bv = b.val();
    return t.push(kern::matmul(av, bv), ng, [ia, ib, av, bv](TapeT<S>& tp, const TensorT<S>& g) {
        if (tp.needs_grad(ia)) tp.accum_grad(ia, kern::matmul_nt(g, bv));
        if (tp.needs_grad(ib)) tp.accum_grad(ib, kern::matmul_tn(av, g));
    });
}

template <typename S>
VarT<S> bmm(VarT<S> a, VarT<S> b, bool transpose_b = false) {
    TapeT<S>& t = *a.tape;
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    int ia = a.id, ib = b.id;
    TensorT<S> av = a.val(), bv = b.val();
    return t.push(kern::bmm(av, bv, transpose_b), ng,
                  [ia, ib, av, bv, transpose_b](TapeT<S>& tp, const TensorT<S>& g) {
                      if (transpose_b) {
                          if (tp.needs_grad(ia)) tp.accum_grad(ia, kern::bmm(g, bv, false));
                          if (tp.needs_grad(ib)) tp.accum_grad(ib, kern::bmm_tn(g, av));
                      } else {
                          if (tp.needs_grad(ia)) tp.accum_grad(ia, kern::bmm(g, bv, true));
                          if (tp.needs_grad(ib)) tp.accum_grad(ib, kern::bmm_tn(av, g));
                      }
                  });
}

template <typename S>
VarT<S> conv2d(VarT<S> x, VarT<S> w, VarT<S> b, int stride) {
    TapeT<S>& t = *x.tape;
    bool ng = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
    int ix = x.id, iw = w.id, ib = b.id;
    TensorT<S> xv = x.val(), wv = w.val();
    return t.push(kern::conv2d(xv, wv, b.val(), stride), ng,
                  [ix, iw, ib, xv, wv, stride](TapeT<S>& tp, const TensorT<S>& g) {
                      bool dx = tp.needs_grad(ix), dw = tp.needs_grad(iw) || tp.needs_grad(ib);
                      auto grads = kern::conv2d_backward(xv, wv, stride, g, dx, dw);
                      if (dx) tp.accum_grad(ix, grads.dx);
                      if (tp.needs_grad(iw)) tp.accum_grad(iw, grads.dw);
                      if (tp.needs_grad(ib)) tp.accum_grad(ib, grads.db);
                  });
}

template <typename S>
VarT<S> conv1x1(VarT<S> x, VarT<S> w, VarT<S> b) {
    TapeT<S>& t = *x.tape;
    bool ng = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
    int ix = x.id, iw = w.id, ib = b.id;
    TensorT<S> xv = x.val(), wv = w.val();
    return t.push(kern::conv1x1(xv, wv, b.val()), ng,
                  [ix, iw, ib, xv, wv](TapeT<S>& tp, const TensorT<S>& g) {
                      bool dx = tp.needs_grad(ix), dw = tp.needs_grad(iw) || tp.needs_grad(ib);
                      auto grads = kern::conv1x1_backward(xv, wv, g, dx, dw);
                      if (dx) tp.accum_grad(ix, grads.dx);
                      if (tp.needs_grad(iw)) tp.accum_grad(iw, grads.dw);
                      if (tp.needs_grad(ib)) tp.accum_grad(ib, grads.db);
                  });
}

template <typename S>
VarT<S> transpose12(VarT<S> x) {
    TapeT<S>& t = *x.tape;
    int ix = x.id;
    return t.push(kern::transpose12(x.val()), t.needs_grad(x),
                  [ix](TapeT<S>& tp, const TensorT<S>& g) {
                      tp.accum_grad(ix, kern::transpose12(g));
                  });
}

template <typename S>
VarT<S> upsample2x(VarT<S> x) {
    TapeT<S>& t = *x.tape;
    int ix = x.id;
    int h = x.val().dim(2), w = x.val().dim(3);
    return t.push(kern::upsample2x(x.val()), t.needs_grad(x),
                  [ix, h, w](TapeT<S>& tp, const TensorT<S>& g) {
                      tp.accum_grad(ix, kern::upsample2x_backward(g, h, w));
                  });
}

template <typename S>
VarT<S> group_norm(VarT<S> x, VarT<S> gamma, VarT<S> beta, int groups) {
    TapeT<S>& t = *x.tape;
    bool ng = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
    int ix = x.id, ig = gamma.id, ib = beta.id;
    TensorT<S> xv = x.val(), gv = gamma.val();
    auto out = kern::group_norm(xv, gv, beta.val(), groups);
    TensorT<S> mean = out.mean, rstd = out.rstd;
    return t.push(std::move(out.y), ng,
                  [ix, ig, ib, xv, gv, groups, mean, rstd](TapeT<S>& tp, const TensorT<S>& g) {
                      kern::GroupNormOut<S> saved;
                      saved.mean = mean;
                      saved.rstd = rstd;
                      auto grads = kern::group_norm_backward(xv, gv, groups, saved, g);
                      if (tp.needs_grad(ix)) tp.accum_grad(ix, grads.dx);
                      if (tp.needs_grad(ig)) tp.accum_grad(ig, grads.dgamma);
                      if (tp.needs_grad(ib)) tp.accum_grad(ib, grads.dbeta);
                  });
}

template <typename S>
VarT<S> silu(VarT<S> x) {
    TapeT<S>& t = *x.tape;
    int ix = x.id;
    TensorT<S> xv = x.val();
    return t.push(kern::silu(xv), t.needs_grad(x), [ix, xv](TapeT<S>& tp, const TensorT<S>& g) {
        tp.accum_grad(ix, kern::silu_backward(xv, g));
    });
}

// Softmax over last dim with a constant (B,L) mask; see kernels.hpp for the
// empty-mask convention.
template <typename S>
VarT<S> softmax_masked(VarT<S> x, const TensorT<S>& mask) {
    TapeT<S>& t = *x.tape;
    int ix = x.id;
    TensorT<S> y = kern::softmax_masked(x.val(), mask);
    return t.push(y, t.needs_grad(x), [ix, y](TapeT<S>& tp, const TensorT<S>& g) {
        tp.accum_grad(ix, kern::softmax_backward(y, g));
    });
}

template <typename S>
VarT<S> mean_all(VarT<S> x) {
    TapeT<S>& t = *x.tape;
    int ix = x.id;
    std::vector<int> sh = x.val().shape;
    int64_t n = x.val().numel();
    return t.push(kern::mean_all(x.val()), t.needs_grad(x),
                  [ix, sh, n](TapeT<S>& tp, const TensorT<S>& g) {
                      tp.accum_grad(ix, TensorT<S>::full(sh, g[0] / static_cast<S>(n)));
                  });
}

template <typename S>
VarT<S> mse(VarT<S> a, VarT<S> b) {
    TapeT<S>& t = *a.tape;
    bool ng = t.needs_grad(a) || t.needs_grad(b);
    int ia = a.id, ib = b.id;
    TensorT<S> av = a.val(), bv = b.val();
    return t.push(kern::mse(av, bv), ng, [ia, ib, av, bv](TapeT<S>& tp, const TensorT<S>& g) {
        S c = g[0] * S(2) / static_cast<S>(av.numel());
        TensorT<S> d = kern::sub(av, bv);
        if (tp.needs_grad(ia)) tp.accum_grad(ia, kern::scale(d, c));
        if (tp.needs_grad(ib)) tp.accum_grad(ib, kern::scale(d, -c));
    });
}

template <typename S>
VarT<S> add_rowvec(VarT<S> x, VarT<S> v) {
    TapeT<S>& t = *x.tape;
    bool ng = t.needs_grad(x) || t.needs_grad(v);
    int ix = x.id, iv = v.id;
    int n = x.val().dim(1);
    return t.push(kern::add_rowvec(x.val(), v.val()), ng,
                  [ix, iv, n](TapeT<S>& tp, const TensorT<S>& g) {
                      tp.accum_grad(ix, g);
                      if (tp.needs_grad(iv)) {
                          TensorT<S> dv({n});
                          int m = g.dim(0);
                          for (int i = 0; i < m; ++i)
                              for (int j = 0; j < n; ++j) dv[j] += g[static_cast<int64_t>(i) * n + j];
                          tp.accum_grad(iv, dv);
                      }
                  });
}

// y = x * (1 + s) + t; s,t:(B,C)
template <typename S>
VarT<S> film(VarT<S> x, VarT<S> s, VarT<S> tsh) {
    TapeT<S>& t = *x.tape;
    bool ng = t.needs_grad(x) || t.needs_grad(s) || t.needs_grad(tsh);
    int ix = x.id, is = s.id, it = tsh.id;
    TensorT<S> xv = x.val(), sv = s.val();
    return t.push(kern::film(xv, sv, tsh.val()), ng,
                  [ix, is, it, xv, sv](TapeT<S>& tp, const TensorT<S>& g) {
                      int b = xv.dim(0), c = xv.dim(1);
                      int64_t hw = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
                      if (tp.needs_grad(ix)) {
                          TensorT<S> dx(xv.shape);
                          for (int64_t p = 0; p < static_cast<int64_t>(b) * c; ++p) {
                              S sc = S(1) + sv[p];
                              const S* gs = g.data() + p * hw;
                              S* d = dx.data() + p * hw;
                              for (int64_t i = 0; i < hw; ++i) d[i] = gs[i] * sc;
                          }
                          tp.accum_grad(ix, dx);
                      }
                      if (tp.needs_grad(is) || tp.needs_grad(it)) {
                          TensorT<S> ds({b, c}), dt({b, c});
                          for (int64_t p = 0; p < static_cast<int64_t>(b) * c; ++p) {
                              const S* gs = g.data() + p * hw;
                              const S* xs = xv.data() + p * hw;
                              double as = 0, at = 0;
                              for (int64_t i = 0; i < hw; ++i) {
                                  as += static_cast<double>(gs[i]) * xs[i];
                                  at += gs[i];
                              }
                              ds[p] = static_cast<S>(as);
                              dt[p] = static_cast<S>(at);
                          }
                          if (tp.needs_grad(is)) tp.accum_grad(is, ds);
                          if (tp.needs_grad(it)) tp.accum_grad(it, dt);
                      }
                  });
}

template <typename S>
VarT<S> concat(const std::vector<VarT<S>>& parts, int axis) {
    TapeT<S>& t = *parts.front().tape;
    bool ng = false;
    std::vector<int> ids;
    std::vector<TensorT<S>> vals;
    for (const auto& p : parts) {
        ng = ng || t.needs_grad(p);
        ids.push_back(p.id);
        vals.push_back(p.val());
    }
    return t.push(kern::concat(vals, axis), ng,
                  [ids, vals, axis](TapeT<S>& tp, const TensorT<S>& g) {
                      int off = 0;
                      for (size_t i = 0; i < ids.size(); ++i) {
                          int len = vals[i].dim(axis);
                          if (tp.needs_grad(ids[i]))
                              tp.accum_grad(ids[i], kern::slice(g, axis, off, len));
                          off += len;
                      }
                  });
}

template <typename S>
VarT<S> slice(VarT<S> x, int axis, int start, int len) {
    TapeT<S>& t = *x.tape;
    int ix = x.id;
    std::vector<int> sh = x.val().shape;
    return t.push(kern::slice(x.val(), axis, start, len), t.needs_grad(x),
                  [ix, sh, axis, start](TapeT<S>& tp, const TensorT<S>& g) {
                      tp.accum_grad(ix, kern::pad_slice(g, sh, axis, start));
                  });
}

// Gather rows of a (V,D) table; gradients scatter-add back into the table.
template <typename S>
VarT<S> gather_rows(VarT<S> table, std::vector<int> ids) {
    TapeT<S>& t = *table.tape;
    int it = table.id;
    std::vector<int> tsh = table.val().shape;
    return t.push(kern::gather_rows(table.val(), ids), t.needs_grad(table),
                  [it, ids, tsh](TapeT<S>& tp, const TensorT<S>& g) {
                      TensorT<S> dt(tsh);
                      int d = tsh[1];
                      for (size_t i = 0; i < ids.size(); ++i)
                          for (int j = 0; j < d; ++j)
                              dt[static_cast<int64_t>(ids[i]) * d + j] += g[static_cast<int64_t>(i) * d + j];
                      tp.accum_grad(it, dt);
                  });
}

// x:(M,K) w:(K,N) b:(N)
template <typename S>
VarT<S> linear(VarT<S> x, VarT<S> w, VarT<S> b) {
    return add_rowvec(matmul(x, w), b);
}

}  // namespace nct::ops
