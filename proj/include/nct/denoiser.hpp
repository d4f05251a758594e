#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nct/ops.hpp"
#include "nct/param_store.hpp"
#include "nct/rng.hpp"
#include "nct/semantic.hpp"

namespace nct {

// Tiny conditional UNet: stem, two down stages of FiLM res-blocks, a
// bottleneck res-block with masked single-head cross-attention over the
// condition rows, symmetric decoder with skip concatenation, zero-init
// output conv. Five named injection sites take additive control residuals.
struct DenoiserConfig {
    int base_channels = 32;      // stage multipliers are fixed at {1, 2}
    int blocks_per_stage = 2;
    int time_dim = 64;
    int cond_dim = kCondDim;
    int cond_len = kCondLen;
    int groups = 8;
    int attn_dim = 64;
    int image_size = 32;
};

inline const std::vector<std::string>& injection_site_names() {
    static const std::vector<std::string> names = {"down1", "down2", "mid", "skip1", "skip2"};
    return names;
}

// site name -> per-item activation shape (C,H,W)
struct InjectionSiteMap {
    std::map<std::string, std::vector<int>> shapes;
};

inline InjectionSiteMap injection_sites(const DenoiserConfig& cfg) {
    int c = cfg.base_channels, s = cfg.image_size;
    InjectionSiteMap m;
    m.shapes["down1"] = {c, s, s};
    m.shapes["skip1"] = {c, s, s};
    m.shapes["down2"] = {2 * c, s / 2, s / 2};
    m.shapes["skip2"] = {2 * c, s / 2, s / 2};
    m.shapes["mid"] = {2 * c, s / 4, s / 4};
    return m;
}

// Sinusoidal embedding of integer timesteps; distinct t map to distinct rows.
template <typename S>
TensorT<S> time_embedding(const std::vector<int>& t, int dim) {
    int half = dim / 2;
    TensorT<S> out({static_cast<int>(t.size()), dim});
    for (size_t i = 0; i < t.size(); ++i)
        for (int k = 0; k < half; ++k) {
            double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / half);
            double a = static_cast<double>(t[i]) * freq;
            out[static_cast<int64_t>(i) * dim + 2 * k] = static_cast<S>(std::sin(a));
            out[static_cast<int64_t>(i) * dim + 2 * k + 1] = static_cast<S>(std::cos(a));
        }
    return out;
}

// ---- parameter construction ----

namespace detail {

inline void add_conv(ParamStore& store, const std::string& name, int out_c, int in_c,
                     RngStream& rng, bool zero = false) {
    float std = std::sqrt(2.f / (static_cast<float>(in_c) * 9.f));
    store.add(name + ".w", zero ? Tensor({out_c, in_c, 3, 3})
                                : kern::scale(rng.normal<float>({out_c, in_c, 3, 3}), std));
    store.add(name + ".b", Tensor({out_c}));
}

inline void add_conv1x1(ParamStore& store, const std::string& name, int out_c, int in_c,
                        RngStream& rng, bool zero = false) {
    float std = std::sqrt(2.f / static_cast<float>(in_c));
    store.add(name + ".w",
              zero ? Tensor({out_c, in_c}) : kern::scale(rng.normal<float>({out_c, in_c}), std));
    store.add(name + ".b", Tensor({out_c}));
}

inline void add_linear(ParamStore& store, const std::string& name, int in_d, int out_d,
                       RngStream& rng, bool zero = false) {
    float std = std::sqrt(2.f / static_cast<float>(in_d));
    store.add(name + ".w",
              zero ? Tensor({in_d, out_d}) : kern::scale(rng.normal<float>({in_d, out_d}), std));
    store.add(name + ".b", Tensor({out_d}));
}

inline void add_gn(ParamStore& store, const std::string& name, int c) {
    store.add(name + ".g", Tensor::full({c}, 1.f));
    store.add(name + ".b", Tensor({c}));
}

// FiLM linears start at zero so fresh blocks are time-neutral.
inline void add_resblock(ParamStore& store, const std::string& name, int in_c, int out_c,
                         int time_dim, RngStream& rng) {
    add_gn(store, name + ".gn1", in_c);
    add_conv(store, name + ".conv1", out_c, in_c, rng);
    add_linear(store, name + ".film", time_dim, 2 * out_c, rng, /*zero=*/true);
    add_gn(store, name + ".gn2", out_c);
    add_conv(store, name + ".conv2", out_c, out_c, rng);
    if (in_c != out_c) add_conv1x1(store, name + ".skip", out_c, in_c, rng);
}

// Encoder-side params shared between the denoiser and control-branch copies.
inline void add_encoder(ParamStore& store, const std::string& p, const DenoiserConfig& cfg,
                        RngStream& rng) {
    int c = cfg.base_channels;
    add_conv(store, p + "stem", c, 3, rng);
    add_linear(store, p + "time.fc1", cfg.time_dim, cfg.time_dim, rng);
    add_linear(store, p + "time.fc2", cfg.time_dim, cfg.time_dim, rng);
    for (int b = 0; b < cfg.blocks_per_stage; ++b)
        add_resblock(store, p + "enc0.b" + std::to_string(b), c, c, cfg.time_dim, rng);
    add_conv(store, p + "down0", 2 * c, c, rng);
    for (int b = 0; b < cfg.blocks_per_stage; ++b)
        add_resblock(store, p + "enc1.b" + std::to_string(b), 2 * c, 2 * c, cfg.time_dim, rng);
    add_conv(store, p + "down1", 2 * c, 2 * c, rng);
    add_resblock(store, p + "mid.block", 2 * c, 2 * c, cfg.time_dim, rng);
    add_conv1x1(store, p + "attn.q", cfg.attn_dim, 2 * c, rng);
    add_linear(store, p + "attn.k", cfg.cond_dim, cfg.attn_dim, rng);
    add_linear(store, p + "attn.v", cfg.cond_dim, cfg.attn_dim, rng);
    add_conv1x1(store, p + "attn.o", 2 * c, cfg.attn_dim, rng);
}

}  // namespace detail

inline void build_denoiser(ParamStore& store, const std::string& prefix,
                           const DenoiserConfig& cfg, RngStream& rng) {
    int c = cfg.base_channels;
    detail::add_encoder(store, prefix, cfg, rng);
    detail::add_conv(store, prefix + "up1", 2 * c, 2 * c, rng);
    detail::add_resblock(store, prefix + "dec1.b0", 4 * c, 2 * c, cfg.time_dim, rng);
    detail::add_resblock(store, prefix + "dec1.b1", 2 * c, 2 * c, cfg.time_dim, rng);
    detail::add_conv(store, prefix + "up0", c, 2 * c, rng);
    detail::add_resblock(store, prefix + "dec0.b0", 2 * c, c, cfg.time_dim, rng);
    detail::add_resblock(store, prefix + "dec0.b1", c, c, cfg.time_dim, rng);
    detail::add_gn(store, prefix + "out.gn", c);
    detail::add_conv(store, prefix + "out.conv", 3, c, rng, /*zero=*/true);
}

// ---- forward ----

// Instrumentation hook: value of each site's activation before and after the
// residual addition, for the additive-contract unit test.
template <typename S>
struct SiteTaps {
    std::map<std::string, std::pair<TensorT<S>, TensorT<S>>> pre_post;
};

namespace detail {

template <typename S>
struct UNetCtx {
    TapeT<S>& tape;
    TapeParams<S>& P;
    std::string pfx;
    const DenoiserConfig& cfg;
    VarT<S> temb;  // (B, time_dim) after the shared MLP

    VarT<S> resblock(VarT<S> x, const std::string& name) {
        using namespace ops;
        VarT<S> h = group_norm(x, P(pfx + name + ".gn1.g"), P(pfx + name + ".gn1.b"), cfg.groups);
        h = silu(h);
        h = conv2d(h, P(pfx + name + ".conv1.w"), P(pfx + name + ".conv1.b"), 1);
        int out_c = h.val().dim(1);
        VarT<S> mod = linear(temb, P(pfx + name + ".film.w"), P(pfx + name + ".film.b"));
        VarT<S> sc = slice(mod, 1, 0, out_c);
        VarT<S> sh = slice(mod, 1, out_c, out_c);
        h = film(h, sc, sh);
        h = group_norm(h, P(pfx + name + ".gn2.g"), P(pfx + name + ".gn2.b"), cfg.groups);
        h = silu(h);
        h = conv2d(h, P(pfx + name + ".conv2.w"), P(pfx + name + ".conv2.b"), 1);
        VarT<S> res = x;
        if (P.store().has(pfx + name + ".skip.w"))
            res = conv1x1(x, P(pfx + name + ".skip.w"), P(pfx + name + ".skip.b"));
        return add(h, res);
    }

    VarT<S> cross_attn(VarT<S> x, const CondBatchVar<S>& cond) {
        using namespace ops;
        int b = x.val().dim(0), c = x.val().dim(1);
        int hw = x.val().dim(2) * x.val().dim(3);
        int a = cfg.attn_dim, d = cfg.cond_dim, l = cfg.cond_len;
        VarT<S> q = conv1x1(x, P(pfx + "attn.q.w"), P(pfx + "attn.q.b"));      // (B,A,H,W)
        q = transpose12(reshape(q, {b, a, hw}));                               // (B,HW,A)
        VarT<S> kf = reshape(cond.rows, {b * l, d});
        VarT<S> k = reshape(linear(kf, P(pfx + "attn.k.w"), P(pfx + "attn.k.b")), {b, l, a});
        VarT<S> v = reshape(linear(kf, P(pfx + "attn.v.w"), P(pfx + "attn.v.b")), {b, l, a});
        VarT<S> scores = scale(bmm(q, k, /*transpose_b=*/true),
                               static_cast<S>(1.0 / std::sqrt(static_cast<double>(a))));
        VarT<S> probs = softmax_masked(scores, cond.mask);
        VarT<S> att = bmm(probs, v);                                           // (B,HW,A)
        att = reshape(transpose12(att), {b, a, x.val().dim(2), x.val().dim(3)});
        VarT<S> out = conv1x1(att, P(pfx + "attn.o.w"), P(pfx + "attn.o.b"));
        return add(x, out);
    }

    VarT<S> time_mlp(const std::vector<int>& timesteps) {
        using namespace ops;
        VarT<S> e = tape.constant(time_embedding<S>(timesteps, cfg.time_dim));
        e = linear(e, P(pfx + "time.fc1.w"), P(pfx + "time.fc1.b"));
        e = silu(e);
        return linear(e, P(pfx + "time.fc2.w"), P(pfx + "time.fc2.b"));
    }
};

template <typename S>
VarT<S> apply_site(TapeT<S>& tape, VarT<S> h, const std::string& site,
                   const std::map<std::string, VarT<S>>* residuals, SiteTaps<S>* taps) {
    if (!residuals) return h;
    auto it = residuals->find(site);
    check(it != residuals->end(), "denoise_forward: missing residual for site '" + site + "'");
    const auto& hs = h.val().shape;
    const auto& rs = it->second.val().shape;
    check_shape(hs == rs, "denoise_forward: site '" + site + "' residual shape " + shape_str(rs) +
                              " does not match activation " + shape_str(hs));
    VarT<S> out = ops::add(h, it->second);
    if (taps) taps->pre_post[site] = {h.val().clone(), out.val().clone()};
    return out;
}

}  // namespace detail

// Noise prediction for a batch of noisy images. Residuals, when given, must
// cover every injection site; they are added to the matching activations
// before those feed the decoder skips and bottleneck.
template <typename S>
VarT<S> denoise_forward(TapeT<S>& tape, TapeParams<S>& params, const std::string& prefix,
                        VarT<S> z, const std::vector<int>& timesteps,
                        const CondBatchVar<S>& cond,
                        const std::map<std::string, VarT<S>>* residuals,
                        const DenoiserConfig& cfg, SiteTaps<S>* taps = nullptr) {
    using namespace ops;
    if (residuals)
        for (const auto& [name, r] : *residuals)
            check(injection_sites(cfg).shapes.count(name),
                  "denoise_forward: unknown residual site '" + name + "'");
    detail::UNetCtx<S> ctx{tape, params, prefix, cfg, {}};
    ctx.temb = ctx.time_mlp(timesteps);

    VarT<S> h = conv2d(z, params(prefix + "stem.w"), params(prefix + "stem.b"), 1);
    for (int b = 0; b < cfg.blocks_per_stage; ++b)
        h = ctx.resblock(h, "enc0.b" + std::to_string(b));
    h = detail::apply_site(tape, h, "down1", residuals, taps);
    VarT<S> skip1 = detail::apply_site(tape, h, "skip1", residuals, taps);
    h = conv2d(h, params(prefix + "down0.w"), params(prefix + "down0.b"), 2);
    for (int b = 0; b < cfg.blocks_per_stage; ++b)
        h = ctx.resblock(h, "enc1.b" + std::to_string(b));
    h = detail::apply_site(tape, h, "down2", residuals, taps);
    VarT<S> skip2 = detail::apply_site(tape, h, "skip2", residuals, taps);
    h = conv2d(h, params(prefix + "down1.w"), params(prefix + "down1.b"), 2);
    h = ctx.resblock(h, "mid.block");
    h = ctx.cross_attn(h, cond);
    h = detail::apply_site(tape, h, "mid", residuals, taps);

    h = conv2d(upsample2x(h), params(prefix + "up1.w"), params(prefix + "up1.b"), 1);
    h = concat<S>({h, skip2}, 1);
    h = ctx.resblock(h, "dec1.b0");
    h = ctx.resblock(h, "dec1.b1");
    h = conv2d(upsample2x(h), params(prefix + "up0.w"), params(prefix + "up0.b"), 1);
    h = concat<S>({h, skip1}, 1);
    h = ctx.resblock(h, "dec0.b0");
    h = ctx.resblock(h, "dec0.b1");
    h = group_norm(h, params(prefix + "out.gn.g"), params(prefix + "out.gn.b"), cfg.groups);
    h = silu(h);
    return conv2d(h, params(prefix + "out.conv.w"), params(prefix + "out.conv.b"), 1);
}

}  // namespace nct
