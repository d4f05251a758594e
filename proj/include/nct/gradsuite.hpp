#pragma once

#include <string>
#include <vector>

#include "nct/control.hpp"
#include "nct/denoiser.hpp"
#include "nct/gradcheck.hpp"
#include "nct/ops.hpp"

namespace nct {

// 64-bit finite-difference verification of every differentiable op plus the
// full denoiser-and-branches pass on an 8x8 input. Ops must land under 1e-4,
// networks under 1e-3.
struct GradSuiteEntry {
    std::string name;
    double max_rel_err = 0;
    double threshold = 0;
    bool pass() const { return max_rel_err < threshold; }
};

namespace gradsuite_detail {

using D = double;
using VarD = VarT<D>;
using TapeD = TapeT<D>;
using StoreD = ParamStoreT<D>;

template <typename Build>
GradSuiteEntry check_op(const std::string& name, StoreD store, Build build, double threshold,
                        int64_t max_elems = -1) {
    auto rep = check_gradients<D>(store, build, 1e-4, max_elems);
    return {name, rep.max_rel_err, threshold};
}

inline TensorT<D> rnd(RngStream& rng, std::vector<int> shape, double s = 1.0) {
    return kern::scale(rng.normal<D>(std::move(shape)), s);
}

}  // namespace gradsuite_detail

inline std::vector<GradSuiteEntry> run_gradient_suite() {
    using namespace gradsuite_detail;
    namespace o = ops;
    std::vector<GradSuiteEntry> out;
    RngStream rng(2024, "gradsuite");
    const double kOp = 1e-4, kNet = 1e-3;

    auto target = [&](std::vector<int> shape) { return rnd(rng, std::move(shape)); };

    {
        StoreD s;
        s.add("a", rnd(rng, {3, 4}));
        s.add("b", rnd(rng, {3, 4}));
        TensorT<D> tgt = target({3, 4});
        out.push_back(check_op("add", s, [tgt](TapeD& t, TapeParams<D>& p) {
            return o::mse(o::add(p("a"), p("b")), t.constant(tgt));
        }, kOp));
        out.push_back(check_op("mul", s, [tgt](TapeD& t, TapeParams<D>& p) {
            return o::mse(o::mul(p("a"), p("b")), t.constant(tgt));
        }, kOp));
        out.push_back(check_op("mean", s, [](TapeD& t, TapeParams<D>& p) {
            return o::mean_all(o::mul(p("a"), p("a")));
        }, kOp));
        out.push_back(check_op("mse", s, [](TapeD& t, TapeParams<D>& p) {
            return o::mse(p("a"), p("b"));
        }, kOp));
    }
    {
        StoreD s;
        s.add("a", rnd(rng, {4, 5}));
        s.add("b", rnd(rng, {5, 3}));
        s.add("bias", rnd(rng, {3}));
        TensorT<D> tgt = target({4, 3});
        out.push_back(check_op("matmul", s, [tgt](TapeD& t, TapeParams<D>& p) {
            return o::mse(o::matmul(p("a"), p("b")), t.constant(tgt));
        }, kOp));
        out.push_back(check_op("linear", s, [tgt](TapeD& t, TapeParams<D>& p) {
            return o::mse(o::linear(p("a"), p("b"), p("bias")), t.constant(tgt));
        }, kOp));
    }
    {
        StoreD s;
        s.add("a", rnd(rng, {2, 3, 4}));
        s.add("b", rnd(rng, {2, 4, 5}));
        s.add("bt", rnd(rng, {2, 5, 4}));
        TensorT<D> tgt = target({2, 3, 5});
        out.push_back(check_op("bmm", s, [tgt](TapeD& t, TapeParams<D>& p) {
            return o::mse(o::bmm(p("a"), p("b")), t.constant(tgt));
        }, kOp));
        out.push_back(check_op("bmm_transposed", s, [tgt](TapeD& t, TapeParams<D>& p) {
            return o::mse(o::bmm(p("a"), p("bt"), true), t.constant(tgt));
        }, kOp));
        out.push_back(check_op("transpose12", s, [](TapeD& t, TapeParams<D>& p) {
            return o::mean_all(o::mul(o::transpose12(p("a")), o::transpose12(p("a"))));
        }, kOp));
    }
    for (int stride : {1, 2}) {
        StoreD s;
        s.add("x", rnd(rng, {2, 3, 5, 5}));
        s.add("w", rnd(rng, {4, 3, 3, 3}, 0.5));
        s.add("b", rnd(rng, {4}));
        int oe = kern::conv_out_extent(5, stride);
        TensorT<D> tgt = target({2, 4, oe, oe});
        out.push_back(check_op("conv2d_stride" + std::to_string(stride), s,
                               [tgt, stride](TapeD& t, TapeParams<D>& p) {
                                   return o::mse(o::conv2d(p("x"), p("w"), p("b"), stride),
                                                 t.constant(tgt));
                               },
                               kOp));
    }
    {
        StoreD s;
        s.add("x", rnd(rng, {2, 4, 3, 3}));
        s.add("w", rnd(rng, {5, 4}));
        s.add("b", rnd(rng, {5}));
        TensorT<D> tgt = target({2, 5, 3, 3});
        out.push_back(check_op("conv1x1", s, [tgt](TapeD& t, TapeParams<D>& p) {
            return o::mse(o::conv1x1(p("x"), p("w"), p("b")), t.constant(tgt));
        }, kOp));
    }
    {
        StoreD s;
        s.add("x", rnd(rng, {1, 2, 3, 3}));
        TensorT<D> tgt = target({1, 2, 6, 6});
        out.push_back(check_op("upsample_nearest2x", s, [tgt](TapeD& t, TapeParams<D>& p) {
            return o::mse(o::upsample2x(p("x")), t.constant(tgt));
        }, kOp));
    }
    {
        StoreD s;
        s.add("x", rnd(rng, {2, 8, 4, 4}));
        s.add("g", rnd(rng, {8}, 0.3));
        s.add("b", rnd(rng, {8}, 0.3));
        TensorT<D> tgt = target({2, 8, 4, 4});
        out.push_back(check_op("group_norm", s, [tgt](TapeD& t, TapeParams<D>& p) {
            return o::mse(o::group_norm(p("x"), p("g"), p("b"), 4), t.constant(tgt));
        }, kOp));
    }
    {
        StoreD s;
        s.add("x", rnd(rng, {3, 7}));
        out.push_back(check_op("silu", s, [](TapeD& t, TapeParams<D>& p) {
            return o::mean_all(o::mul(o::silu(p("x")), o::silu(p("x"))));
        }, kOp));
    }
    {
        StoreD s;
        s.add("x", rnd(rng, {2, 3, 5}));
        TensorT<D> mask({2, 5});
        for (int i = 0; i < 5; ++i) mask[i] = i < 3 ? 1.0 : 0.0;   // row 0: partial
        for (int i = 5; i < 10; ++i) mask[i] = 1.0;                 // row 1: full
        TensorT<D> tgt = target({2, 3, 5});
        out.push_back(check_op("softmax_masked", s, [tgt, mask](TapeD& t, TapeParams<D>& p) {
            return o::mse(o::softmax_masked(p("x"), mask), t.constant(tgt));
        }, kOp));
    }
    {
        StoreD s;
        s.add("a", rnd(rng, {2, 3, 4}));
        s.add("b", rnd(rng, {2, 2, 4}));
        TensorT<D> tgt = target({2, 5, 4});
        out.push_back(check_op("concat", s, [tgt](TapeD& t, TapeParams<D>& p) {
            return o::mse(o::concat<D>({p("a"), p("b")}, 1), t.constant(tgt));
        }, kOp));
        out.push_back(check_op("slice", s, [](TapeD& t, TapeParams<D>& p) {
            auto sl = o::slice(p("a"), 2, 1, 2);
            return o::mean_all(o::mul(sl, sl));
        }, kOp));
    }
    {
        StoreD s;
        s.add("x", rnd(rng, {2, 3, 2, 2}));
        s.add("sc", rnd(rng, {2, 3}, 0.5));
        s.add("sh", rnd(rng, {2, 3}, 0.5));
        TensorT<D> tgt = target({2, 3, 2, 2});
        out.push_back(check_op("film", s, [tgt](TapeD& t, TapeParams<D>& p) {
            return o::mse(o::film(p("x"), p("sc"), p("sh")), t.constant(tgt));
        }, kOp));
    }
    {
        StoreD s;
        s.add("table", rnd(rng, {6, 4}));
        TensorT<D> tgt = target({3, 4});
        out.push_back(check_op("embedding_rows", s, [tgt](TapeD& t, TapeParams<D>& p) {
            return o::mse(o::gather_rows(p("table"), {1, 4, 1}), t.constant(tgt));
        }, kOp));
    }
    {
        // two-layer MLP, every parameter (the classic end-to-end op check)
        StoreD s;
        s.add("w1", rnd(rng, {6, 8}, 0.5));
        s.add("b1", rnd(rng, {8}, 0.1));
        s.add("w2", rnd(rng, {8, 3}, 0.5));
        s.add("b2", rnd(rng, {3}, 0.1));
        TensorT<D> x = rnd(rng, {4, 6});
        TensorT<D> tgt = target({4, 3});
        out.push_back(check_op("mlp2", s, [x, tgt](TapeD& t, TapeParams<D>& p) {
            auto h = o::silu(o::linear(t.constant(x), p("w1"), p("b1")));
            return o::mse(o::linear(h, p("w2"), p("b2")), t.constant(tgt));
        }, kOp));
    }

    // ---- full networks on 8x8 input, 64-bit, sampled elements ----
    {
        DenoiserConfig cfg;
        cfg.image_size = 8;
        RngStream brng(77, "gradsuite-net");
        ParamStore fstore;
        build_cond_params(fstore, brng);
        build_denoiser(fstore, "base/", cfg, brng);
        build_control_branch(fstore, "pose/", "base/", cfg, brng);
        build_control_branch(fstore, "garment/", "base/", cfg, brng);
        // zero-init site and output convs give vanishing gradients upstream;
        // randomize them so the check exercises real signal paths
        for (auto& [name, e] : fstore.entries()) {
            bool zeroed = name.find("site.") != std::string::npos ||
                          name.find("out.conv") != std::string::npos ||
                          name.find(".film.") != std::string::npos;
            if (zeroed) e.value = kern::scale(brng.normal<float>(e.value.shape), 0.05f);
        }
        StoreD s = fstore.cast<double>();

        RngStream drng(78, "gradsuite-data");
        TensorT<D> z = rnd(drng, {1, 3, 8, 8});
        TensorT<D> eps = rnd(drng, {1, 3, 8, 8});
        TensorT<D> card = rnd(drng, {1, 3, 8, 8}, 0.5);
        TensorT<D> pmap = rnd(drng, {1, 3, 8, 8}, 0.5);
        TensorT<D> feats = rnd(drng, {1, kGarmentFeatDim}, 0.2);
        PromptTokens prompt = parse_prompt("clothes smiling adult bg_red standing");
        std::vector<int> ts = {500};
        DenoiserConfig cfg_copy = cfg;

        auto net_loss = [=](TapeD& t, TapeParams<D>& p) {
            auto cond = encode_cond_batch<D>(t, p, {prompt}, feats, {0});
            VarD zv = t.constant(z);
            auto pose_r = branch_forward<D>(t, p, "pose/", t.constant(pmap), zv, ts, cond, cfg_copy);
            auto garm_r =
                branch_forward<D>(t, p, "garment/", t.constant(card), zv, ts, cond, cfg_copy);
            auto fused = fuse_residuals_var(garm_r, pose_r);
            VarD eps_hat = denoise_forward<D>(t, p, "base/", zv, ts, cond, &fused, cfg_copy);
            return o::mse(eps_hat, t.constant(eps));
        };
        out.push_back(check_op("denoiser_with_branches_8x8", s, net_loss, kNet, 2));

        StoreD s2 = fstore.cast<double>();
        s2.freeze_all();
        s2.set_trainable("pose/", true);
        auto branch_loss = [=](TapeD& t, TapeParams<D>& p) {
            auto cond = encode_cond_batch<D>(t, p, {prompt}, feats, {0});
            VarD zv = t.constant(z);
            auto r = branch_forward<D>(t, p, "pose/", t.constant(pmap), zv, ts, cond, cfg_copy);
            VarD acc = o::mean_all(o::mul(r["mid"], r["mid"]));
            acc = o::add(acc, o::mean_all(o::mul(r["down1"], r["down1"])));
            acc = o::add(acc, o::mean_all(o::mul(r["skip2"], r["skip2"])));
            return acc;
        };
        out.push_back(check_op("control_branch_8x8", s2, branch_loss, kNet, 2));
    }
    return out;
}

}  // namespace nct
