#pragma once

#include <array>
#include <string>
#include <vector>

#include "nct/image.hpp"
#include "nct/rng.hpp"

namespace nct {

// ---- palettes ----
// Marker colors use channel levels {0.15, 0.85}; every drawing color keeps
// all channels in [0.3, 0.7] (plus exact black/white backgrounds), which
// holds them at L-inf >= 0.15 from every marker. The keypoint detector
// window is 0.12, so only marker pixels ever match.

inline constexpr int kNumJoints = 8;

enum class Joint { Head = 0, Neck, LHand, RHand, Pelvis, LKnee, RKnee, FeetMid };

extern const std::array<const char*, kNumJoints> kJointNames;
extern const std::array<Rgb, kNumJoints> kMarkerColors;     // reserved, one per joint
extern const std::array<Rgb, 8> kGarmentPalette;            // red green blue yellow magenta cyan light dark
extern const std::array<const char*, 8> kGarmentColorNames;
extern const std::array<Rgb, 6> kBackgroundPalette;
extern const std::array<const char*, 6> kBackgroundColorNames;
extern const std::array<Rgb, 4> kSkinTones;
extern const std::array<Rgb, kNumJoints> kBoneColors;       // pose-map bones
extern const Rgb kMouthColor;

// ---- domain types ----

struct Vec2 {
    float x = 0, y = 0;
};

// 8 named joints in normalized [0,1]^2 image coordinates (y grows downward).
// Joints are snapped to the 1/32 grid so 2x2 marker dots center exactly on
// them at both supported render sizes.
struct PoseSkeleton {
    std::array<Vec2, kNumJoints> joints{};

    Vec2& at(Joint j) { return joints[static_cast<size_t>(j)]; }
    const Vec2& at(Joint j) const { return joints[static_cast<size_t>(j)]; }
};

PoseSkeleton canonical_pose_standing();
PoseSkeleton canonical_pose_sitting();
PoseSkeleton mirrored(const PoseSkeleton& p);
bool is_sitting(const PoseSkeleton& p);

// Throws ContractError when out of bounds, neck below pelvis, or any bone
// length strays more than 40% from the canonical proportions.
void validate_pose(const PoseSkeleton& p);

enum class GarmentCategory { Top = 0, Trousers, Dress };
enum class GarmentPattern { Solid = 0, HStripes, Dots };
enum class GarmentLength { Short = 0, Long };
enum class Expression { Smile = 0, Neutral, Frown };

struct GarmentSpec {
    GarmentCategory category = GarmentCategory::Top;
    int base_color = 0;      // index into kGarmentPalette
    GarmentPattern pattern = GarmentPattern::Solid;
    int pattern_color = 1;   // ignored when pattern == Solid
    GarmentLength length = GarmentLength::Long;
};

void validate_garment(const GarmentSpec& g);

inline constexpr std::array<float, 3> kHeadScales = {0.8f, 1.0f, 1.15f};  // child adult elderly

struct PersonSpec {
    PoseSkeleton pose;
    int skin_tone = 0;            // index into kSkinTones
    float head_scale = 1.0f;      // one of kHeadScales
    Expression expression = Expression::Neutral;
    int background_color = 0;     // index into kBackgroundPalette
};

void validate_person(const PersonSpec& p);

struct ManifestRecord {
    int person = 0;
    int garment = 0;
    std::string split = "train";
};

struct DatasetManifest {
    std::string mode = "paired_one_to_one";  // or "cross_paired"
    std::vector<PersonSpec> persons;
    std::vector<GarmentSpec> garments;
    std::vector<ManifestRecord> records;
};

void validate_manifest(const DatasetManifest& m);

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text);
void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

// ---- rendering ----

void check_render_size(int size);  // 32 or 64

// Shoulder/hip/hem anchor points derived from the pose; shared between the
// renderer and the metric crop rules.
struct GarmentAnchors {
    Vec2 shoulder_l, shoulder_r, hip_l, hip_r;
    Vec2 hem_l, hem_r;  // dress hem at the spec'd length
};
GarmentAnchors garment_anchors(const PoseSkeleton& pose, GarmentLength length);

// Analytic garment coverage at a given raster size; the renderer paints
// exactly these pixels, and the metrics reuse it as the crop mask.
std::vector<uint8_t> garment_mask(const GarmentSpec& g, const PoseSkeleton& pose, int size);

// Deterministic full render: background, limbs, head with expression glyph,
// garment with pattern, then 2x2 joint markers on top.
ImageGrid render_person(const PersonSpec& person, const GarmentSpec& garment, int size);

// Garment in canonical standing pose on a white background.
ImageGrid render_garment_card(const GarmentSpec& garment, int size);

// Black background, fixed per-bone colors, joint markers on top.
ImageGrid render_pose_map(const PoseSkeleton& pose, int size);

// Mouth glyph pixel offsets relative to the mouth center, per expression and
// head radius in pixels. Shared by the renderer and the expression probe.
std::vector<std::array<int, 2>> mouth_glyph(Expression e, float head_radius_px);
float head_radius_px(float head_scale, int size);

// ---- world sampling ----

// Uniform random specs honoring all invariants. Paired mode emits one record
// per garment with a bijective garment<->person assignment; cross mode runs
// the pairing augmentation with its default k. Split tags are 90/10.
DatasetManifest sample_world(RngStream& rng, int n_persons, int n_garments,
                             const std::string& mode);

PoseSkeleton sample_pose(RngStream& rng);
GarmentSpec sample_garment(RngStream& rng);
PersonSpec sample_person(RngStream& rng);

}  // namespace nct
