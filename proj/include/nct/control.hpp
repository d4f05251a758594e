#pragma once

#include <map>
#include <string>

#include "nct/denoiser.hpp"

namespace nct {

// Control branch: a copy of the denoiser encoder (stem, down stages,
// bottleneck with cross-attention) plus a 1x1 adapter from the control image
// and one zero-init 1x1 conv per injection site. Garment and pose branches
// differ only in which control image they are fed.
struct ControlResidualSet {
    std::map<std::string, Tensor> residuals;  // complete over all sites
};

// Copies the encoder weights from src_prefix (the base denoiser) into
// dst_prefix and adds the adapter and site convs. Site convs start at zero,
// so a fresh branch contributes exactly nothing.
inline void build_control_branch(ParamStore& store, const std::string& dst_prefix,
                                 const std::string& src_prefix, const DenoiserConfig& cfg,
                                 RngStream& rng) {
    std::vector<std::pair<std::string, ParamStore::Entry>> copies;
    for (const auto& [name, entry] : store.entries()) {
        if (name.rfind(src_prefix, 0) != 0) continue;
        std::string tail = name.substr(src_prefix.size());
        bool encoder_part = tail.rfind("stem", 0) == 0 || tail.rfind("time.", 0) == 0 ||
                            tail.rfind("enc", 0) == 0 || tail.rfind("down", 0) == 0 ||
                            tail.rfind("mid.", 0) == 0 || tail.rfind("attn.", 0) == 0;
        if (encoder_part) copies.push_back({dst_prefix + tail, {entry.value.clone(), true}});
    }
    check(!copies.empty(), "build_control_branch: no encoder params under '" + src_prefix + "'");
    for (auto& [name, entry] : copies) store.add(name, std::move(entry.value), entry.trainable);
    int c = cfg.base_channels;
    detail::add_conv1x1(store, dst_prefix + "adapter", c, 3, rng);
    detail::add_conv1x1(store, dst_prefix + "site.down1", c, c, rng, /*zero=*/true);
    detail::add_conv1x1(store, dst_prefix + "site.skip1", c, c, rng, /*zero=*/true);
    detail::add_conv1x1(store, dst_prefix + "site.down2", 2 * c, 2 * c, rng, /*zero=*/true);
    detail::add_conv1x1(store, dst_prefix + "site.skip2", 2 * c, 2 * c, rng, /*zero=*/true);
    detail::add_conv1x1(store, dst_prefix + "site.mid", 2 * c, 2 * c, rng, /*zero=*/true);
}

// Runs the copied encoder on z_t with the control image injected after the
// stem; emits one residual per site through the zero-init 1x1 convs.
template <typename S>
std::map<std::string, VarT<S>> branch_forward(TapeT<S>& tape, TapeParams<S>& params,
                                              const std::string& prefix, VarT<S> control_img,
                                              VarT<S> z, const std::vector<int>& timesteps,
                                              const CondBatchVar<S>& cond,
                                              const DenoiserConfig& cfg) {
    using namespace ops;
    const auto& zs = z.val().shape;
    const auto& cs = control_img.val().shape;
    check_shape(zs == cs, "branch_forward: control image shape " + shape_str(cs) +
                              " must match the noisy input " + shape_str(zs));
    detail::UNetCtx<S> ctx{tape, params, prefix, cfg, {}};
    ctx.temb = ctx.time_mlp(timesteps);

    VarT<S> h = conv2d(z, params(prefix + "stem.w"), params(prefix + "stem.b"), 1);
    VarT<S> a = conv1x1(control_img, params(prefix + "adapter.w"), params(prefix + "adapter.b"));
    h = add(h, a);
    for (int b = 0; b < cfg.blocks_per_stage; ++b)
        h = ctx.resblock(h, "enc0.b" + std::to_string(b));
    std::map<std::string, VarT<S>> out;
    out["down1"] = conv1x1(h, params(prefix + "site.down1.w"), params(prefix + "site.down1.b"));
    out["skip1"] = conv1x1(h, params(prefix + "site.skip1.w"), params(prefix + "site.skip1.b"));
    h = conv2d(h, params(prefix + "down0.w"), params(prefix + "down0.b"), 2);
    for (int b = 0; b < cfg.blocks_per_stage; ++b)
        h = ctx.resblock(h, "enc1.b" + std::to_string(b));
    out["down2"] = conv1x1(h, params(prefix + "site.down2.w"), params(prefix + "site.down2.b"));
    out["skip2"] = conv1x1(h, params(prefix + "site.skip2.w"), params(prefix + "site.skip2.b"));
    h = conv2d(h, params(prefix + "down1.w"), params(prefix + "down1.b"), 2);
    h = ctx.resblock(h, "mid.block");
    h = ctx.cross_attn(h, cond);
    out["mid"] = conv1x1(h, params(prefix + "site.mid.w"), params(prefix + "site.mid.b"));
    return out;
}

// y* = y_garment + y_pose, elementwise per site.
template <typename S>
std::map<std::string, VarT<S>> fuse_residuals_var(const std::map<std::string, VarT<S>>& a,
                                                  const std::map<std::string, VarT<S>>& b) {
    std::map<std::string, VarT<S>> out;
    for (const auto& [name, va] : a) {
        auto it = b.find(name);
        check(it != b.end(), "fuse_residuals: site '" + name + "' missing from second set");
        out[name] = ops::add(va, it->second);
    }
    for (const auto& [name, vb] : b)
        check(a.count(name), "fuse_residuals: site '" + name + "' missing from first set");
    return out;
}

inline ControlResidualSet fuse_residuals(const ControlResidualSet& a, const ControlResidualSet& b) {
    ControlResidualSet out;
    for (const auto& [name, ta] : a.residuals) {
        auto it = b.residuals.find(name);
        check(it != b.residuals.end(), "fuse_residuals: site '" + name + "' missing from second set");
        out.residuals[name] = kern::add(ta, it->second);
    }
    for (const auto& [name, tb] : b.residuals)
        check(a.residuals.count(name), "fuse_residuals: site '" + name + "' missing from first set");
    return out;
}

// Non-tape convenience wrapper returning plain tensors (inference path).
inline ControlResidualSet branch_residuals(ParamStore& store, const std::string& prefix,
                                           const Tensor& control_img, const Tensor& z,
                                           const std::vector<int>& timesteps,
                                           const Tensor& cond_rows, const Tensor& cond_mask,
                                           const DenoiserConfig& cfg) {
    TapeT<float> tape;
    TapeParams<float> params(tape, store);
    CondBatchVar<float> cond{tape.constant(cond_rows), cond_mask};
    auto vars = branch_forward<float>(tape, params, prefix, tape.constant(control_img),
                                      tape.constant(z), timesteps, cond, cfg);
    ControlResidualSet out;
    for (const auto& [name, v] : vars) out.residuals[name] = v.val().clone();
    return out;
}

}  // namespace nct
