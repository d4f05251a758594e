#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nct/adam.hpp"
#include "nct/checkpoint.hpp"
#include "nct/control.hpp"
#include "nct/denoiser.hpp"
#include "nct/synthworld.hpp"

namespace nct {

// ---- schedule ----

struct NoiseSchedule {
    int steps = 1000;                          // T
    std::vector<double> beta, alpha, alpha_bar;

    static NoiseSchedule linear(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02);
};

// ---- configs ----

struct SamplerConfig {
    int ddim_steps = 50;
    double eta = 0.0;        // deterministic DDIM only
    double guidance = 3.0;   // desk default; the paper preset uses 7.5
    uint64_t seed = 0;
};

SamplerConfig sampler_preset(const std::string& name);  // desk | paper

struct TrainConfig {
    std::string stage = "base";  // base | pose | garment
    std::string preset = "desk";
    double lr = 2e-3;
    double weight_decay = 1e-8;
    int batch = 8;
    int steps = 2000;
    double cond_drop = 0.1;
    int image_size = 32;
    int log_every = 50;
    uint64_t seed = 0;
    bool allow_bias = false;  // gate for paired-mode garment training
};

TrainConfig train_preset(const std::string& name, const std::string& stage);

// ---- core math ----

// z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps, per-item timesteps.
template <typename S>
TensorT<S> q_sample(const TensorT<S>& z0, const std::vector<int>& t, const TensorT<S>& eps,
                    const NoiseSchedule& sched) {
    require_same_shape(z0, eps, "q_sample");
    check(z0.dim(0) == static_cast<int>(t.size()), "q_sample: batch/timestep count mismatch");
    TensorT<S> out(z0.shape);
    int64_t per = z0.numel() / z0.dim(0);
    for (int b = 0; b < z0.dim(0); ++b) {
        check(t[static_cast<size_t>(b)] >= 0 && t[static_cast<size_t>(b)] < sched.steps,
              "q_sample: timestep out of range");
        S sa = static_cast<S>(std::sqrt(sched.alpha_bar[static_cast<size_t>(t[static_cast<size_t>(b)])]));
        S sb = static_cast<S>(std::sqrt(1.0 - sched.alpha_bar[static_cast<size_t>(t[static_cast<size_t>(b)])]));
        for (int64_t i = 0; i < per; ++i)
            out[b * per + i] = sa * z0[b * per + i] + sb * eps[b * per + i];
    }
    return out;
}

// Guided noise: eps_u + alpha * (eps_c - eps_u). alpha 0 and 1 short-circuit
// to the exact inputs.
template <typename S>
TensorT<S> cfg_combine(const TensorT<S>& eps_c, const TensorT<S>& eps_u, double alpha) {
    require_same_shape(eps_c, eps_u, "cfg_combine");
    check(alpha >= 0.0, "cfg_combine: guidance scale must be >= 0");
    if (alpha == 1.0) return eps_c.clone();
    if (alpha == 0.0) return eps_u.clone();
    TensorT<S> out(eps_c.shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<S>(eps_u[i] + alpha * (static_cast<double>(eps_c[i]) - eps_u[i]));
    return out;
}

// Uniform-stride DDIM timestep ladder, descending; the step below the last
// entry lands on abar = 1 (exact reconstruction step).
std::vector<int> ddim_timesteps(int T, int ddim_steps);

// One eta=0 DDIM update from t to t_prev (t_prev < 0 means abar_prev = 1).
template <typename S>
TensorT<S> ddim_step(const TensorT<S>& z, const TensorT<S>& eps_hat, int t, int t_prev,
                     const NoiseSchedule& sched) {
    double abar_t = sched.alpha_bar[static_cast<size_t>(t)];
    double abar_prev = t_prev >= 0 ? sched.alpha_bar[static_cast<size_t>(t_prev)] : 1.0;
    double sa = std::sqrt(abar_t), sb = std::sqrt(1.0 - abar_t);
    double pa = std::sqrt(abar_prev), pb = std::sqrt(1.0 - abar_prev);
    TensorT<S> out(z.shape);
    for (int64_t i = 0; i < z.numel(); ++i) {
        double x0 = (static_cast<double>(z[i]) - sb * eps_hat[i]) / sa;
        out[i] = static_cast<S>(pa * x0 + pb * eps_hat[i]);
    }
    return out;
}

// ---- model bundle ----

struct ModelSet {
    ParamStore store;  // base/ + cond/ (+ pose/, garment/ once trained)
    DenoiserConfig cfg;

    bool has_pose() const { return store.has("pose/stem.w"); }
    bool has_garment() const { return store.has("garment/stem.w"); }
};

ModelSet model_from_checkpoint(const Checkpoint& ckpt);
std::string model_config_json(const ModelSet& models, const TrainConfig& train,
                              const std::string& stage_lineage);

// ---- sampling ----

struct SampleRequest {
    GarmentSpec garment;
    PoseSkeleton pose;
    PromptTokens prompt;
    FeaturizerVariant feat_variant = FeaturizerVariant::SE;
    bool use_branches = true;      // false reproduces the no-control ablation
    bool zero_garment_row = false; // true reproduces the no-enhancement ablation
};

// Deterministic batched DDIM with classifier-free guidance. Control
// residuals are recomputed from the current z_t at every step; both the
// conditional and the null forward receive them.
std::vector<ImageGrid> ddim_sample(ModelSet& models, const std::vector<SampleRequest>& requests,
                                   const SamplerConfig& sampler, const NoiseSchedule& sched);

// ---- training ----

struct TrainBatch {
    Tensor z0;            // (B,3,H,W) in [-1,1]
    Tensor garment_cards; // control image, same mapping
    Tensor pose_maps;
    Tensor garment_feats; // (B,43)
    std::vector<PromptTokens> prompts;
    std::vector<uint8_t> drop_cond;
    std::vector<int> t;
    Tensor eps;
};

TrainBatch make_batch(const DatasetManifest& data, const std::vector<int>& record_ids,
                      const NoiseSchedule& sched, const TrainConfig& cfg, RngStream& t_rng,
                      RngStream& noise_rng, RngStream& drop_rng);

// Eq.-style denoising objective: MSE between drawn and predicted noise, with
// stage-appropriate residuals (base: none; pose: pose branch; garment: fused
// garment+pose).
Var training_loss(Tape& tape, TapeParams<float>& params, const std::string& stage,
                  const TrainBatch& batch, const NoiseSchedule& sched, const DenoiserConfig& cfg);

struct StageResult {
    std::vector<std::pair<int, float>> loss_log;  // (step, loss) every log_every
    std::string checkpoint_path;
};

// Runs one training stage end to end and writes the checkpoint. Stages pose
// and garment require the previous stage's checkpoint via init_ckpt.
StageResult run_stage(const TrainConfig& cfg, const DatasetManifest& data,
                      const std::string& init_ckpt, const std::string& out_ckpt,
                      const std::function<void(const std::string&)>& log = nullptr);

}  // namespace nct
