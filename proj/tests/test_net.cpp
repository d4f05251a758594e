#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "nct/control.hpp"
#include "nct/denoiser.hpp"
#include "nct/diffusion.hpp"

using namespace nct;

namespace {

struct NetFixture {
    DenoiserConfig cfg;
    ParamStore store;
    TensorT<float> feats;
    PromptTokens prompt;

    explicit NetFixture(int image_size = 32, bool branches = false) {
        cfg.image_size = image_size;
        RngStream rng(99, "netfix");
        build_cond_params(store, rng);
        build_denoiser(store, "base/", cfg, rng);
        if (branches) {
            build_control_branch(store, "pose/", "base/", cfg, rng);
            build_control_branch(store, "garment/", "base/", cfg, rng);
        }
        RngStream frng(100, "feats");
        feats = frng.normal<float>({1, kGarmentFeatDim});
        prompt = parse_prompt("clothes neutral adult bg_blue standing");
    }

    CondBatchVar<float> cond(Tape& tape, TapeParams<float>& params, int b = 1) {
        std::vector<PromptTokens> prompts(static_cast<size_t>(b), prompt);
        std::vector<uint8_t> drop(static_cast<size_t>(b), 0);
        Tensor f({b, kGarmentFeatDim});
        for (int i = 0; i < b; ++i)
            std::memcpy(f.data() + static_cast<int64_t>(i) * kGarmentFeatDim, feats.data(),
                        sizeof(float) * kGarmentFeatDim);
        return encode_cond_batch<float>(tape, params, prompts, f, drop);
    }
};

}  // namespace

TEST_CASE("parameter count lands in the contract window") {
    NetFixture fix;
    int64_t n = fix.store.numel("base/") + fix.store.numel("cond/");
    INFO("param count ", n);
    CHECK(n >= 500000);
    CHECK(n <= 2000000);
}

TEST_CASE("zero-init output conv: untrained denoiser returns exactly zero") {
    NetFixture fix;
    RngStream rng(1, "z");
    Tape tape;
    TapeParams<float> params(tape, fix.store);
    auto cond = fix.cond(tape, params);
    Var z = tape.constant(rng.normal<float>({1, 3, 32, 32}));
    Var eps = denoise_forward<float>(tape, params, "base/", z, {500}, cond, nullptr, fix.cfg);
    for (int64_t i = 0; i < eps.val().numel(); ++i) CHECK(eps.val()[i] == 0.f);
}

TEST_CASE("forward shape contract (B,3,32,32) -> (B,3,32,32)") {
    NetFixture fix;
    RngStream rng(2, "shape");
    Tape tape;
    TapeParams<float> params(tape, fix.store);
    auto cond = fix.cond(tape, params, 2);
    Var z = tape.constant(rng.normal<float>({2, 3, 32, 32}));
    Var eps = denoise_forward<float>(tape, params, "base/", z, {10, 900}, cond, nullptr, fix.cfg);
    CHECK(eps.val().shape == std::vector<int>{2, 3, 32, 32});
}

TEST_CASE("time embedding: distinct timesteps map to distinct rows") {
    std::vector<int> all(1000);
    for (int t = 0; t < 1000; ++t) all[static_cast<size_t>(t)] = t;
    Tensor emb = time_embedding<float>(all, 64);
    // sorted by first coordinate pairs would still be O(n^2); 1000^2/2 L-inf
    // comparisons over 64 dims is fine here
    float min_gap = 1e9f;
    for (int a = 0; a < 1000; ++a)
        for (int b = a + 1; b < 1000; ++b) {
            float gap = 0;
            for (int d = 0; d < 64; ++d)
                gap = std::max(gap, std::abs(emb[static_cast<int64_t>(a) * 64 + d] -
                                             emb[static_cast<int64_t>(b) * 64 + d]));
            min_gap = std::min(min_gap, gap);
        }
    CHECK(min_gap > 1e-6f);
}

TEST_CASE("all-zero residuals reproduce the no-residual output bit-exactly") {
    NetFixture fix;
    RngStream rng(3, "resid");
    Tensor zt = rng.normal<float>({1, 3, 32, 32});

    auto run = [&](bool with_zero_residuals) {
        Tape tape;
        TapeParams<float> params(tape, fix.store);
        auto cond = fix.cond(tape, params);
        Var z = tape.constant(zt);
        std::map<std::string, Var> resid;
        if (with_zero_residuals) {
            for (const auto& [name, shape] : injection_sites(fix.cfg).shapes) {
                std::vector<int> full = {1, shape[0], shape[1], shape[2]};
                resid[name] = tape.constant(Tensor(full));
            }
        }
        Var eps = denoise_forward<float>(tape, params, "base/", z, {250}, cond,
                                         with_zero_residuals ? &resid : nullptr, fix.cfg);
        return eps.val().clone();
    };
    Tensor without = run(false);
    Tensor with = run(true);
    CHECK(std::memcmp(without.data(), with.data(),
                      sizeof(float) * static_cast<size_t>(with.numel())) == 0);
}

TEST_CASE("missing or misshapen residual raises naming the site") {
    NetFixture fix;
    RngStream rng(4, "siteerr");
    Tape tape;
    TapeParams<float> params(tape, fix.store);
    auto cond = fix.cond(tape, params);
    Var z = tape.constant(rng.normal<float>({1, 3, 32, 32}));
    std::map<std::string, Var> resid;
    for (const auto& [name, shape] : injection_sites(fix.cfg).shapes)
        resid[name] = tape.constant(Tensor({1, shape[0], shape[1], shape[2]}));
    resid.erase("skip2");
    try {
        denoise_forward<float>(tape, params, "base/", z, {250}, cond, &resid, fix.cfg);
        CHECK(false);
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("skip2") != std::string::npos);
    }
    resid["skip2"] = tape.constant(Tensor({1, 1, 1, 1}));
    CHECK_THROWS_AS(
        denoise_forward<float>(tape, params, "base/", z, {250}, cond, &resid, fix.cfg),
        ShapeError);
}

TEST_CASE("masked condition rows never influence the output") {
    NetFixture fix;
    RngStream rng(5, "mask");
    Tensor zt = rng.normal<float>({1, 3, 32, 32});

    auto run = [&](bool perturb_padding) {
        Tape tape;
        TapeParams<float> params(tape, fix.store);
        auto cond = fix.cond(tape, params);
        Tensor rows = cond.rows.val().clone();
        if (perturb_padding) {
            // rows beyond the real ones are masked; scramble them
            for (int r = 0; r < kCondLen; ++r) {
                if (cond.mask[r] > 0.5f) continue;
                for (int d = 0; d < kCondDim; ++d)
                    rows[static_cast<int64_t>(r) * kCondDim + d] += 17.f + r + d;
            }
        }
        CondBatchVar<float> patched{tape.constant(rows.reshaped({1, kCondLen, kCondDim})),
                                    cond.mask};
        Var eps = denoise_forward<float>(tape, params, "base/", tape.constant(zt), {123}, patched,
                                         nullptr, fix.cfg);
        return eps.val().clone();
    };
    Tensor clean = run(false);
    Tensor scrambled = run(true);
    CHECK(std::memcmp(clean.data(), scrambled.data(),
                      sizeof(float) * static_cast<size_t>(clean.numel())) == 0);
}

TEST_CASE("instrumented site taps confirm the additive contract") {
    NetFixture fix(32, true);
    // randomize the garment site convs so residuals are nonzero
    RngStream rng(6, "taps");
    for (auto& [name, e] : fix.store.entries())
        if (name.rfind("garment/site.", 0) == 0)
            e.value = kern::scale(rng.normal<float>(e.value.shape), 0.1f);

    Tape tape;
    TapeParams<float> params(tape, fix.store);
    auto cond = fix.cond(tape, params);
    Tensor zt = rng.normal<float>({1, 3, 32, 32});
    Tensor card = rng.normal<float>({1, 3, 32, 32});
    Var z = tape.constant(zt);
    auto resid = branch_forward<float>(tape, params, "garment/", tape.constant(card), z, {700},
                                       cond, fix.cfg);
    SiteTaps<float> taps;
    denoise_forward<float>(tape, params, "base/", z, {700}, cond, &resid, fix.cfg, &taps);
    CHECK(taps.pre_post.size() == injection_site_names().size());
    for (const auto& [site, pp] : taps.pre_post) {
        const Tensor& r = resid.at(site).val();
        bool nonzero = false;
        for (int64_t i = 0; i < r.numel(); ++i) {
            CHECK(pp.second[i] == pp.first[i] + r[i]);
            nonzero = nonzero || r[i] != 0.f;
        }
        INFO("site ", site);
        CHECK(nonzero);
    }
}

TEST_CASE("freshly built branch emits exactly zero residuals") {
    NetFixture fix(32, true);
    RngStream rng(7, "zresid");
    Tape tape;
    TapeParams<float> params(tape, fix.store);
    auto cond = fix.cond(tape, params);
    Var z = tape.constant(rng.normal<float>({1, 3, 32, 32}));
    Var card = tape.constant(rng.normal<float>({1, 3, 32, 32}));
    auto resid = branch_forward<float>(tape, params, "pose/", card, z, {50}, cond, fix.cfg);
    CHECK(resid.size() == injection_site_names().size());
    for (const auto& [name, r] : resid) {
        const auto& site_shapes = injection_sites(fix.cfg).shapes;
        auto expect = site_shapes.at(name);
        CHECK(r.val().shape == std::vector<int>({1, expect[0], expect[1], expect[2]}));
        for (int64_t i = 0; i < r.val().numel(); ++i) CHECK(r.val()[i] == 0.f);
    }
}

TEST_CASE("frozen pose branch residuals are bit-identical across a garment step") {
    NetFixture fix(32, true);
    RngStream rng(8, "fr");
    Tensor zt = rng.normal<float>({1, 3, 32, 32});
    Tensor pmap = rng.normal<float>({1, 3, 32, 32});
    // make pose residuals nonzero so the comparison is meaningful
    for (auto& [name, e] : fix.store.entries())
        if (name.rfind("pose/site.", 0) == 0)
            e.value = kern::scale(rng.normal<float>(e.value.shape), 0.1f);

    auto pose_resid = [&]() {
        Tape tape;
        TapeParams<float> params(tape, fix.store);
        auto cond = fix.cond(tape, params);
        auto r = branch_forward<float>(tape, params, "pose/", tape.constant(pmap),
                                       tape.constant(zt), {400}, cond, fix.cfg);
        std::map<std::string, Tensor> snap;
        for (auto& [n, v] : r) snap[n] = v.val().clone();
        return snap;
    };
    auto before = pose_resid();

    // one garment-stage optimizer step
    fix.store.freeze_all();
    fix.store.set_trainable("garment/", true);
    Tape tape;
    TapeParams<float> params(tape, fix.store);
    auto cond = fix.cond(tape, params);
    Var z = tape.constant(zt);
    auto garm = branch_forward<float>(tape, params, "garment/", tape.constant(pmap), z, {400},
                                      cond, fix.cfg);
    auto pose = branch_forward<float>(tape, params, "pose/", tape.constant(pmap), z, {400}, cond,
                                      fix.cfg);
    auto fused = fuse_residuals_var(garm, pose);
    Var eps = denoise_forward<float>(tape, params, "base/", z, {400}, cond, &fused, fix.cfg);
    Var loss = ops::mse(eps, tape.constant(rng.normal<float>({1, 3, 32, 32})));
    tape.backward(loss);
    AdamState opt;
    adam_step(fix.store, params.grads(), opt, AdamConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});

    auto after = pose_resid();
    for (const auto& [name, t] : before)
        CHECK(std::memcmp(t.data(), after.at(name).data(),
                          sizeof(float) * static_cast<size_t>(t.numel())) == 0);
}

TEST_CASE("fuse_residuals: identity, commutativity, independent-sum oracle") {
    RngStream rng(9, "fuse");
    ControlResidualSet a, b, zero;
    for (const char* site : {"down1", "down2", "mid", "skip1", "skip2"}) {
        a.residuals[site] = rng.normal<float>({1, 4, 2, 2});
        b.residuals[site] = rng.normal<float>({1, 4, 2, 2});
        zero.residuals[site] = Tensor({1, 4, 2, 2});
    }
    ControlResidualSet a_plus_zero = fuse_residuals(a, zero);
    for (const auto& [site, t] : a.residuals)
        CHECK(std::memcmp(t.data(), a_plus_zero.residuals.at(site).data(),
                          sizeof(float) * static_cast<size_t>(t.numel())) == 0);
    ControlResidualSet ab = fuse_residuals(a, b);
    ControlResidualSet ba = fuse_residuals(b, a);
    for (const auto& [site, t] : ab.residuals) {
        for (int64_t i = 0; i < t.numel(); ++i) {
            CHECK(t[i] == a.residuals.at(site)[i] + b.residuals.at(site)[i]);
            CHECK(t[i] == ba.residuals.at(site)[i]);
        }
    }
    ControlResidualSet missing = a;
    missing.residuals.erase("mid");
    CHECK_THROWS_AS(fuse_residuals(missing, b), ContractError);
    CHECK_THROWS_AS(fuse_residuals(a, missing), ContractError);
}

TEST_CASE("branch rejects a control image whose size differs from z_t") {
    NetFixture fix(32, true);
    RngStream rng(10, "mismatch");
    Tape tape;
    TapeParams<float> params(tape, fix.store);
    auto cond = fix.cond(tape, params);
    Var z = tape.constant(rng.normal<float>({1, 3, 32, 32}));
    Var small = tape.constant(rng.normal<float>({1, 3, 16, 16}));
    CHECK_THROWS_AS(
        branch_forward<float>(tape, params, "pose/", small, z, {100}, cond, fix.cfg),
        ShapeError);
}
