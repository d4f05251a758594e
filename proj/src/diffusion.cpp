#include "nct/diffusion.hpp"

#include <cmath>
#include <cstring>
#include <iostream>

#include <nlohmann/json.hpp>

#include "nct/common.hpp"

namespace nct {

using json = nlohmann::json;

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
    check(T >= 2, "schedule: T must be >= 2");
    NoiseSchedule s;
    s.steps = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        double b = beta_start + (beta_end - beta_start) * static_cast<double>(t) / (T - 1);
        s.beta[static_cast<size_t>(t)] = b;
        s.alpha[static_cast<size_t>(t)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<size_t>(t)] = prod;
    }
    // construction-time invariants
    for (int t = 0; t < T; ++t) {
        check(s.beta[static_cast<size_t>(t)] > 0.0 && s.beta[static_cast<size_t>(t)] < 1.0,
              "schedule: beta out of (0,1)");
        if (t > 0) {
            check(s.beta[static_cast<size_t>(t)] > s.beta[static_cast<size_t>(t - 1)],
                  "schedule: beta must be strictly increasing");
            check(s.alpha_bar[static_cast<size_t>(t)] < s.alpha_bar[static_cast<size_t>(t - 1)],
                  "schedule: alpha_bar must be strictly decreasing");
        }
    }
    check(std::abs(s.alpha_bar[0] - (1.0 - beta_start)) < 1e-12, "schedule: alpha_bar[0] mismatch");
    return s;
}

SamplerConfig sampler_preset(const std::string& name) {
    SamplerConfig s;
    if (name == "paper") {
        s.guidance = 7.5;
    } else if (name == "desk") {
        s.guidance = 3.0;
    } else {
        throw ContractError("unknown sampler preset '" + name + "'");
    }
    s.ddim_steps = 50;
    s.eta = 0.0;
    return s;
}

TrainConfig train_preset(const std::string& name, const std::string& stage) {
    check(stage == "base" || stage == "pose" || stage == "garment",
          "unknown training stage '" + stage + "'");
    TrainConfig c;
    c.stage = stage;
    c.preset = name;
    if (name == "paper") {
        c.lr = 1e-5;
        c.weight_decay = 1e-8;
        c.batch = 2;
        c.steps = 60000;
    } else if (name == "desk") {
        c.lr = 2e-3;
        c.weight_decay = 1e-8;
        c.batch = 8;
        c.steps = 2000;
    } else {
        throw ContractError("unknown training preset '" + name + "'");
    }
    c.image_size = 32;
    return c;
}

std::vector<int> ddim_timesteps(int T, int ddim_steps) {
    check(ddim_steps >= 1 && ddim_steps <= T, "ddim_steps must be in [1, T]");
    int stride = T / ddim_steps;
    std::vector<int> ts;
    for (int i = 0; i < ddim_steps; ++i) ts.push_back(T - 1 - i * stride);
    return ts;
}

ModelSet model_from_checkpoint(const Checkpoint& ckpt) {
    ModelSet m;
    m.store = ckpt.params;
    json j = json::parse(ckpt.config_json);
    const auto& d = j.at("denoiser");
    m.cfg.base_channels = d.at("base_channels").get<int>();
    m.cfg.blocks_per_stage = d.at("blocks_per_stage").get<int>();
    m.cfg.time_dim = d.at("time_dim").get<int>();
    m.cfg.cond_dim = d.at("cond_dim").get<int>();
    m.cfg.cond_len = d.at("cond_len").get<int>();
    m.cfg.groups = d.at("groups").get<int>();
    m.cfg.attn_dim = d.at("attn_dim").get<int>();
    m.cfg.image_size = d.at("image_size").get<int>();
    return m;
}

std::string model_config_json(const ModelSet& models, const TrainConfig& train,
                              const std::string& stage_lineage) {
    json j;
    j["denoiser"] = {{"base_channels", models.cfg.base_channels},
                     {"blocks_per_stage", models.cfg.blocks_per_stage},
                     {"time_dim", models.cfg.time_dim},
                     {"cond_dim", models.cfg.cond_dim},
                     {"cond_len", models.cfg.cond_len},
                     {"groups", models.cfg.groups},
                     {"attn_dim", models.cfg.attn_dim},
                     {"image_size", models.cfg.image_size}};
    j["train"] = {{"stage", train.stage},   {"preset", train.preset},
                  {"lr", train.lr},         {"weight_decay", train.weight_decay},
                  {"batch", train.batch},   {"steps", train.steps},
                  {"cond_drop", train.cond_drop}, {"seed", train.seed}};
    j["stages_trained"] = stage_lineage;
    j["schedule"] = {{"T", 1000}, {"beta_start", 1e-4}, {"beta_end", 0.02}};
    return j.dump();
}

// ---- sampling ----

namespace {

struct CondTensors {
    Tensor rows;  // (B,L,D)
    Tensor mask;  // (B,L)
};

CondTensors build_cond(ModelSet& models, const std::vector<SampleRequest>& reqs) {
    int b = static_cast<int>(reqs.size());
    Tensor feats({b, kGarmentFeatDim});
    std::vector<PromptTokens> prompts;
    for (int i = 0; i < b; ++i) {
        ImageGrid card = render_garment_card(reqs[static_cast<size_t>(i)].garment,
                                             models.cfg.image_size);
        GarmentFeature f =
            featurize_garment(card, reqs[static_cast<size_t>(i)].feat_variant);
        for (int k = 0; k < kGarmentFeatDim; ++k)
            feats[static_cast<int64_t>(i) * kGarmentFeatDim + k] = f.v[k];
        prompts.push_back(reqs[static_cast<size_t>(i)].prompt);
    }
    Tape tape;
    TapeParams<float> params(tape, models.store);
    std::vector<uint8_t> drop(static_cast<size_t>(b), 0);
    auto cond = encode_cond_batch<float>(tape, params, prompts, feats, drop);
    CondTensors out;
    out.rows = cond.rows.val().clone();
    out.mask = cond.mask;
    for (int i = 0; i < b; ++i)
        if (reqs[static_cast<size_t>(i)].zero_garment_row)
            for (int d = 0; d < kCondDim; ++d)
                out.rows[(static_cast<int64_t>(i) * kCondLen) * kCondDim + d] = 0.f;
    return out;
}

CondTensors build_null_cond(ModelSet& models, int b) {
    ConditionEmbedding null_one = null_condition(models.store);
    CondTensors out;
    out.rows = Tensor({b, kCondLen, kCondDim});
    out.mask = Tensor({b, kCondLen});
    for (int i = 0; i < b; ++i)
        for (int64_t k = 0; k < null_one.rows.numel(); ++k)
            out.rows[i * null_one.rows.numel() + k] = null_one.rows[k];
    return out;
}

// One full forward with the stage-appropriate residuals, no gradients.
Tensor guided_eps(ModelSet& models, const Tensor& z, const std::vector<int>& ts,
                  const CondTensors& cond, const Tensor& cards, const Tensor& poses,
                  bool use_branches) {
    Tape tape;
    TapeParams<float> params(tape, models.store);
    CondBatchVar<float> cv{tape.constant(cond.rows), cond.mask};
    Var zv = tape.constant(z);
    std::map<std::string, Var> fused;
    bool any = false;
    if (use_branches && models.has_pose()) {
        fused = branch_forward<float>(tape, params, "pose/", tape.constant(poses), zv, ts, cv,
                                      models.cfg);
        any = true;
    }
    if (use_branches && models.has_garment()) {
        auto g = branch_forward<float>(tape, params, "garment/", tape.constant(cards), zv, ts, cv,
                                       models.cfg);
        fused = any ? fuse_residuals_var(g, fused) : std::move(g);
        any = true;
    }
    Var eps = denoise_forward<float>(tape, params, "base/", zv, ts, cv, any ? &fused : nullptr,
                                     models.cfg);
    return eps.val().clone();
}

}  // namespace

std::vector<ImageGrid> ddim_sample(ModelSet& models, const std::vector<SampleRequest>& requests,
                                   const SamplerConfig& sampler, const NoiseSchedule& sched) {
    check(!requests.empty(), "ddim_sample: no requests");
    check(sampler.eta == 0.0, "ddim_sample: only eta=0 is supported");
    check(sampler.guidance >= 0.0, "ddim_sample: guidance must be >= 0");
    int b = static_cast<int>(requests.size());
    int s = models.cfg.image_size;

    CondTensors cond = build_cond(models, requests);
    CondTensors null_cond = build_null_cond(models, b);
    Tensor cards({b, 3, s, s}), poses({b, 3, s, s});
    bool branches = false;
    for (int i = 0; i < b; ++i) {
        branches = branches || requests[static_cast<size_t>(i)].use_branches;
        Tensor card = render_garment_card(requests[static_cast<size_t>(i)].garment, s).to_chw();
        Tensor pm = render_pose_map(requests[static_cast<size_t>(i)].pose, s).to_chw();
        std::memcpy(cards.data() + static_cast<int64_t>(i) * card.numel(), card.data(),
                    sizeof(float) * static_cast<size_t>(card.numel()));
        std::memcpy(poses.data() + static_cast<int64_t>(i) * pm.numel(), pm.data(),
                    sizeof(float) * static_cast<size_t>(pm.numel()));
    }
    for (int i = 0; i < b; ++i)
        check(requests[static_cast<size_t>(i)].use_branches == branches,
              "ddim_sample: mixed use_branches within one batch");

    RngStream rng(sampler.seed, "ddim-init");
    Tensor z = rng.normal<float>({b, 3, s, s});
    std::vector<int> ladder = ddim_timesteps(sched.steps, sampler.ddim_steps);
    int stride = sched.steps / sampler.ddim_steps;
    for (int t : ladder) {
        std::vector<int> ts(static_cast<size_t>(b), t);
        // guidance 1 is conditional-only and 0 unconditional-only; skipping
        // the unused forward keeps those cases exact (and cheaper)
        Tensor eps_hat;
        if (sampler.guidance == 1.0) {
            eps_hat = guided_eps(models, z, ts, cond, cards, poses, branches);
        } else if (sampler.guidance == 0.0) {
            eps_hat = guided_eps(models, z, ts, null_cond, cards, poses, branches);
        } else {
            Tensor eps_c = guided_eps(models, z, ts, cond, cards, poses, branches);
            Tensor eps_u = guided_eps(models, z, ts, null_cond, cards, poses, branches);
            eps_hat = cfg_combine<float>(eps_c, eps_u, sampler.guidance);
        }
        z = ddim_step<float>(z, eps_hat, t, t - stride, sched);
    }
    std::vector<ImageGrid> out;
    int64_t per = static_cast<int64_t>(3) * s * s;
    for (int i = 0; i < b; ++i) {
        Tensor item({3, s, s});
        std::memcpy(item.data(), z.data() + i * per, sizeof(float) * static_cast<size_t>(per));
        out.push_back(ImageGrid::from_chw(item));
    }
    return out;
}

// ---- training ----

TrainBatch make_batch(const DatasetManifest& data, const std::vector<int>& record_ids,
                      const NoiseSchedule& sched, const TrainConfig& cfg, RngStream& t_rng,
                      RngStream& noise_rng, RngStream& drop_rng) {
    int b = static_cast<int>(record_ids.size());
    int s = cfg.image_size;
    TrainBatch batch;
    batch.z0 = Tensor({b, 3, s, s});
    batch.garment_cards = Tensor({b, 3, s, s});
    batch.pose_maps = Tensor({b, 3, s, s});
    batch.garment_feats = Tensor({b, kGarmentFeatDim});
    int64_t per = static_cast<int64_t>(3) * s * s;
    for (int i = 0; i < b; ++i) {
        const ManifestRecord& rec = data.records[static_cast<size_t>(record_ids[static_cast<size_t>(i)])];
        const PersonSpec& person = data.persons[static_cast<size_t>(rec.person)];
        const GarmentSpec& garment = data.garments[static_cast<size_t>(rec.garment)];
        Tensor z0 = render_person(person, garment, s).to_chw();
        ImageGrid card = render_garment_card(garment, s);
        Tensor cardt = card.to_chw();
        Tensor pm = render_pose_map(person.pose, s).to_chw();
        std::memcpy(batch.z0.data() + i * per, z0.data(), sizeof(float) * static_cast<size_t>(per));
        std::memcpy(batch.garment_cards.data() + i * per, cardt.data(),
                    sizeof(float) * static_cast<size_t>(per));
        std::memcpy(batch.pose_maps.data() + i * per, pm.data(),
                    sizeof(float) * static_cast<size_t>(per));
        GarmentFeature f = featurize_garment(card, FeaturizerVariant::SE);
        for (int k = 0; k < kGarmentFeatDim; ++k)
            batch.garment_feats[static_cast<int64_t>(i) * kGarmentFeatDim + k] = f.v[k];
        batch.prompts.push_back(prompt_for_person(person));
        batch.drop_cond.push_back(drop_rng.next_uniform() < cfg.cond_drop ? 1 : 0);
        batch.t.push_back(static_cast<int>(t_rng.next_below(static_cast<uint64_t>(sched.steps))));
    }
    batch.eps = noise_rng.normal<float>({b, 3, s, s});
    return batch;
}

Var training_loss(Tape& tape, TapeParams<float>& params, const std::string& stage,
                  const TrainBatch& batch, const NoiseSchedule& sched, const DenoiserConfig& cfg) {
    Tensor z_t = q_sample<float>(batch.z0, batch.t, batch.eps, sched);
    Var zv = tape.constant(z_t);
    auto cond = encode_cond_batch<float>(tape, params, batch.prompts, batch.garment_feats,
                                         batch.drop_cond);
    std::map<std::string, Var> resid;
    const std::map<std::string, Var>* resid_ptr = nullptr;
    if (stage == "pose") {
        resid = branch_forward<float>(tape, params, "pose/", tape.constant(batch.pose_maps), zv,
                                      batch.t, cond, cfg);
        resid_ptr = &resid;
    } else if (stage == "garment") {
        auto pose_r = branch_forward<float>(tape, params, "pose/", tape.constant(batch.pose_maps),
                                            zv, batch.t, cond, cfg);
        auto garm_r = branch_forward<float>(tape, params, "garment/",
                                            tape.constant(batch.garment_cards), zv, batch.t, cond,
                                            cfg);
        resid = fuse_residuals_var(garm_r, pose_r);
        resid_ptr = &resid;
    } else {
        check(stage == "base", "training_loss: unknown stage '" + stage + "'");
    }
    Var eps_hat = denoise_forward<float>(tape, params, "base/", zv, batch.t, cond, resid_ptr, cfg);
    return ops::mse(eps_hat, tape.constant(batch.eps));
}

StageResult run_stage(const TrainConfig& cfg, const DatasetManifest& data,
                      const std::string& init_ckpt, const std::string& out_ckpt,
                      const std::function<void(const std::string&)>& log) {
    validate_manifest(data);
    check(cfg.stage == "base" || cfg.stage == "pose" || cfg.stage == "garment",
          "run_stage: unknown stage '" + cfg.stage + "'");
    if (cfg.stage == "garment" && data.mode == "paired_one_to_one" && !cfg.allow_bias)
        throw ContractError(
            "garment stage on a paired_one_to_one manifest reproduces the one-to-one pairing "
            "bias; pass --allow-bias to train anyway or use a cross_paired dataset");

    RngStream init_rng(cfg.seed, "init-" + cfg.stage);
    ModelSet models;
    std::string lineage;
    AdamState opt;
    if (cfg.stage == "base") {
        models.cfg.image_size = cfg.image_size;
        build_cond_params(models.store, init_rng);
        build_denoiser(models.store, "base/", models.cfg, init_rng);
        lineage = "base";
    } else {
        check(!init_ckpt.empty(), "run_stage: stage '" + cfg.stage +
                                      "' requires the previous stage's checkpoint (--init)");
        Checkpoint prev = load_checkpoint(init_ckpt);
        models = model_from_checkpoint(prev);
        json pj = json::parse(prev.config_json);
        std::string prev_lineage = pj.value("stages_trained", std::string("base"));
        if (cfg.stage == "pose") {
            check(models.store.has("base/stem.w"), "run_stage: base params missing from init");
            check(!models.has_pose(), "run_stage: init checkpoint already has a pose branch");
            build_control_branch(models.store, "pose/", "base/", models.cfg, init_rng);
            lineage = prev_lineage + "+pose";
        } else {
            check(models.has_pose(),
                  "run_stage: garment stage requires a pose-stage checkpoint (--init)");
            check(!models.has_garment(), "run_stage: init checkpoint already has a garment branch");
            build_control_branch(models.store, "garment/", "base/", models.cfg, init_rng);
            lineage = prev_lineage + "+garment";
        }
    }

    // freeze discipline: only the stage's own store trains
    models.store.freeze_all();
    if (cfg.stage == "base") {
        models.store.set_trainable("base/", true);
        models.store.set_trainable("cond/", true);
    } else if (cfg.stage == "pose") {
        models.store.set_trainable("pose/", true);
    } else {
        models.store.set_trainable("garment/", true);
    }

    std::vector<int> train_ids;
    for (size_t i = 0; i < data.records.size(); ++i)
        if (data.records[i].split == "train") train_ids.push_back(static_cast<int>(i));
    check(!train_ids.empty(), "run_stage: no train-split records");

    NoiseSchedule sched = NoiseSchedule::linear();
    AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
    RngStream batch_rng(cfg.seed, "batch-" + cfg.stage);
    RngStream t_rng(cfg.seed, "timestep-" + cfg.stage);
    RngStream noise_rng(cfg.seed, "noise-" + cfg.stage);
    RngStream drop_rng(cfg.seed, "drop-" + cfg.stage);

    StageResult result;
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<int> ids;
        for (int i = 0; i < cfg.batch; ++i)
            ids.push_back(train_ids[batch_rng.next_below(train_ids.size())]);
        TrainBatch batch = make_batch(data, ids, sched, cfg, t_rng, noise_rng, drop_rng);
        Tape tape;
        TapeParams<float> params(tape, models.store);
        Var loss = training_loss(tape, params, cfg.stage, batch, sched, models.cfg);
        float lv = loss.val()[0];
        if (!std::isfinite(lv))
            throw ContractError("run_stage: non-finite loss at stage '" + cfg.stage + "' step " +
                                std::to_string(step));
        tape.backward(loss);
        adam_step(models.store, params.grads(), opt, adam);
        if (step % cfg.log_every == 0 || step == cfg.steps - 1) {
            result.loss_log.push_back({step, lv});
            if (log) {
                char line[128];
                std::snprintf(line, sizeof(line), "stage=%s step=%d loss=%.5f",
                              cfg.stage.c_str(), step, lv);
                log(line);
            }
        }
    }

    Checkpoint ckpt;
    ckpt.rng_algo = kRngAlgoId;
    ckpt.config_json = model_config_json(models, cfg, lineage);
    ckpt.params = models.store;
    ckpt.opt = opt;
    save_checkpoint(out_ckpt, ckpt);
    result.checkpoint_path = out_ckpt;
    return result;
}

}  // namespace nct
