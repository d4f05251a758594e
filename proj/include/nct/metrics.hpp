#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nct/diffusion.hpp"
#include "nct/semantic.hpp"
#include "nct/synthworld.hpp"

namespace nct {

// ---- keypoint detection ----

// Per joint: closeness-weighted centroid of pixels within L-inf 0.12 of the
// joint's reserved marker color.
struct KeypointDetection {
    std::array<bool, kNumJoints> found{};
    std::array<Vec2, kNumJoints> pos{};
    int n_found = 0;
};

KeypointDetection detect_keypoints(const ImageGrid& img);

inline constexpr float kMarkerWindow = 0.12f;
inline constexpr float kMissingJointPenalty = 0.25f;

// Mean Euclidean distance of detected joints to the target skeleton in
// normalized coordinates; undetected joints contribute the fixed penalty.
float pose_distance(const ImageGrid& generated, const PoseSkeleton& target);

// ---- fidelity (visual identity) ----

struct FidelityResult {
    float score = 0.f;
    bool valid = false;  // false when the analytic crop is empty; excluded from means
};

// Cosine between the featurizer run over the analytic garment-region crop of
// the generated image and over the rendered garment card.
FidelityResult fidelity_score(const ImageGrid& generated, const GarmentSpec& garment_ref,
                              const PoseSkeleton& pose);

// ---- text adherence probes ----

// Probe thresholds are fixed configuration, calibrated once against clean
// renders (the calibration test pins fraction == 1.0 on 100 renders).
struct ProbeConfig {
    float color_window = 0.15f;       // dominant color L-inf tolerance
    float solid_energy_max = 0.02f;   // gradient energy below => Solid
    float stripe_ratio = 2.0f;        // ey > ratio*ex => HStripes
    float mouth_window = 0.10f;       // mouth glyph color tolerance
    float skin_window = 0.12f;        // head disc pixel tolerance
    float head_child_max_r = 2.74f;   // radius buckets in px at size 32
    float head_adult_max_r = 3.27f;
    float sit_stand_split = 0.28f;    // feet-pelvis distance threshold
};

const ProbeConfig& default_probes();

enum class AdherenceScope { GarmentOnly, FullPrompt };

// Fraction of checkable attributes satisfied. GarmentOnly covers base color
// and pattern; FullPrompt adds one probe per optional prompt token
// (background, expression, age bucket, stance).
float text_adherence(const ImageGrid& generated, const GarmentSpec& garment,
                     const PromptTokens& prompt, const PoseSkeleton& pose, AdherenceScope scope,
                     const ProbeConfig& probes = default_probes());

// Individual probes, exposed for calibration tests.
bool probe_color(const ImageGrid& img, const GarmentSpec& g, const PoseSkeleton& pose,
                 const ProbeConfig& p);
bool probe_pattern(const ImageGrid& img, const GarmentSpec& g, const PoseSkeleton& pose,
                   const ProbeConfig& p);
bool probe_background(const ImageGrid& img, int bg_index, const ProbeConfig& p);
bool probe_expression(const ImageGrid& img, Expression e, const ProbeConfig& p);
bool probe_age(const ImageGrid& img, float head_scale, const ProbeConfig& p);
bool probe_stance(const ImageGrid& img, bool sitting, const ProbeConfig& p);

// ---- aggregated evaluation ----

struct CategoryMetrics {
    double fidelity = 0;        // CLIP-I analogue, cosine
    double garment_adherence = 0;  // CLIP-T analogue
    double prompt_adherence = 0;   // CLIP-S analogue
    double pose_dist = 0;          // PD
    int count = 0;
    int excluded = 0;  // empty-crop fidelity samples
};

struct MetricsReport {
    std::string variant;
    CategoryMetrics overall;
    std::array<CategoryMetrics, 3> per_category;  // Top, Trousers, Dress
    std::string to_json() const;
};

struct EvalVariant {
    bool use_branches = true;
    bool zero_garment_row = false;
    FeaturizerVariant featurizer = FeaturizerVariant::SE;
    bool append_garment_tokens = false;
};

// full | no-se | se-c | no-sc
EvalVariant eval_variant(const std::string& name);

// Samples every record of the eval manifest with its garment/pose/prompt and
// aggregates the metrics. Deterministic given the sampler seed.
MetricsReport evaluate_run(ModelSet& models, const DatasetManifest& eval_set,
                           const std::string& variant, const SamplerConfig& sampler,
                           const NoiseSchedule& sched,
                           std::vector<ImageGrid>* keep_images = nullptr);

// ---- pairing-bias probe ----

struct BiasProbeReport {
    double paired_pd_requested = 0, paired_pd_trainpaired = 0;
    double cross_pd_requested = 0, cross_pd_trainpaired = 0;
    int count = 0;
    bool paired_mimics() const { return paired_pd_trainpaired < paired_pd_requested; }
    bool cross_follows_request() const { return cross_pd_requested < cross_pd_trainpaired; }
    std::string to_json() const;
};

// For each garment with a training-paired pose, samples with a different
// requested pose and measures PD both to the request and to the old paired
// pose, for both checkpoints. eval_set must be the paired manifest.
BiasProbeReport bias_probe(ModelSet& paired_models, ModelSet& cross_models,
                           const DatasetManifest& eval_set, const SamplerConfig& sampler,
                           const NoiseSchedule& sched, int max_garments = 16,
                           std::vector<ImageGrid>* keep_images = nullptr);

}  // namespace nct
