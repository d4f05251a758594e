#include "nct/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nct/common.hpp"
#include "nct/pairing.hpp"

namespace nct {

using json = nlohmann::json;

const std::array<const char*, kNumJoints> kJointNames = {
    "head", "neck", "l_hand", "r_hand", "pelvis", "l_knee", "r_knee", "feet_mid"};

// Channel levels {0.15, 0.85}: eight distinct combos, pairwise L-inf 0.7.
const std::array<Rgb, kNumJoints> kMarkerColors = {{
    {0.85f, 0.15f, 0.15f},  // head
    {0.15f, 0.85f, 0.15f},  // neck
    {0.15f, 0.15f, 0.85f},  // l_hand
    {0.85f, 0.85f, 0.15f},  // r_hand
    {0.85f, 0.15f, 0.85f},  // pelvis
    {0.15f, 0.85f, 0.85f},  // l_knee
    {0.85f, 0.85f, 0.85f},  // r_knee
    {0.15f, 0.15f, 0.15f},  // feet_mid
}};

const std::array<Rgb, 8> kGarmentPalette = {{
    {0.7f, 0.3f, 0.3f},  // red
    {0.3f, 0.7f, 0.3f},  // green
    {0.3f, 0.3f, 0.7f},  // blue
    {0.7f, 0.7f, 0.3f},  // yellow
    {0.7f, 0.3f, 0.7f},  // magenta
    {0.3f, 0.7f, 0.7f},  // cyan
    {0.7f, 0.7f, 0.7f},  // light
    {0.3f, 0.3f, 0.3f},  // dark
}};

const std::array<const char*, 8> kGarmentColorNames = {
    "red", "green", "blue", "yellow", "magenta", "cyan", "light", "dark"};

const std::array<Rgb, 6> kBackgroundPalette = {{
    {0.60f, 0.46f, 0.46f},  // red
    {0.46f, 0.60f, 0.46f},  // green
    {0.46f, 0.46f, 0.60f},  // blue
    {0.60f, 0.60f, 0.46f},  // yellow
    {0.60f, 0.46f, 0.60f},  // magenta
    {0.46f, 0.60f, 0.60f},  // cyan
}};

const std::array<const char*, 6> kBackgroundColorNames = {"red",    "green",   "blue",
                                                          "yellow", "magenta", "cyan"};

const std::array<Rgb, 4> kSkinTones = {{
    {0.66f, 0.52f, 0.38f},
    {0.56f, 0.46f, 0.34f},
    {0.50f, 0.40f, 0.31f},
    {0.43f, 0.34f, 0.30f},
}};

const std::array<Rgb, kNumJoints> kBoneColors = {{
    {0.70f, 0.50f, 0.30f},  // head-neck
    {0.30f, 0.70f, 0.50f},  // neck-l_hand
    {0.50f, 0.30f, 0.70f},  // neck-r_hand
    {0.70f, 0.30f, 0.50f},  // neck-pelvis
    {0.50f, 0.70f, 0.30f},  // pelvis-l_knee
    {0.30f, 0.50f, 0.70f},  // pelvis-r_knee
    {0.70f, 0.60f, 0.60f},  // l_knee-feet
    {0.60f, 0.60f, 0.70f},  // r_knee-feet
}};

const Rgb kMouthColor = {0.3f, 0.3f, 0.3f};

namespace {

constexpr int kGrid = 32;  // joint coordinates live on the 1/32 lattice

struct Bone {
    Joint a, b;
};
constexpr std::array<Bone, kNumJoints> kBones = {{
    {Joint::Head, Joint::Neck},
    {Joint::Neck, Joint::LHand},
    {Joint::Neck, Joint::RHand},
    {Joint::Neck, Joint::Pelvis},
    {Joint::Pelvis, Joint::LKnee},
    {Joint::Pelvis, Joint::RKnee},
    {Joint::LKnee, Joint::FeetMid},
    {Joint::RKnee, Joint::FeetMid},
}};

Vec2 grid(int x, int y) { return {static_cast<float>(x) / kGrid, static_cast<float>(y) / kGrid}; }

float dist(const Vec2& a, const Vec2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

Vec2 lerp(const Vec2& a, const Vec2& b, float t) {
    return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
}

Vec2 normalize(const Vec2& v) {
    float n = std::hypot(v.x, v.y);
    return n > 0 ? Vec2{v.x / n, v.y / n} : Vec2{0, 1};
}

Vec2 perp(const Vec2& v) { return {-v.y, v.x}; }

std::array<float, kNumJoints> canonical_bone_lengths() {
    PoseSkeleton c = canonical_pose_standing();
    std::array<float, kNumJoints> out{};
    for (size_t i = 0; i < kBones.size(); ++i)
        out[i] = dist(c.at(kBones[i].a), c.at(kBones[i].b));
    return out;
}

using Poly = std::vector<Vec2>;

bool point_in_poly(const Poly& poly, float x, float y) {
    bool inside = false;
    size_t n = poly.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        if ((poly[i].y > y) != (poly[j].y > y) &&
            x < (poly[j].x - poly[i].x) * (y - poly[i].y) / (poly[j].y - poly[i].y) + poly[i].x)
            inside = !inside;
    }
    return inside;
}

Poly segment_quad(const Vec2& a, const Vec2& b, float half_width) {
    Vec2 p = perp(normalize({b.x - a.x, b.y - a.y}));
    return {{a.x + p.x * half_width, a.y + p.y * half_width},
            {b.x + p.x * half_width, b.y + p.y * half_width},
            {b.x - p.x * half_width, b.y - p.y * half_width},
            {a.x - p.x * half_width, a.y - p.y * half_width}};
}

std::vector<Poly> garment_polys(const GarmentSpec& g, const PoseSkeleton& pose) {
    GarmentAnchors an = garment_anchors(pose, g.length);
    const Vec2 neck = pose.at(Joint::Neck);
    std::vector<Poly> polys;
    switch (g.category) {
        case GarmentCategory::Top: {
            polys.push_back({an.shoulder_l, an.shoulder_r, an.hip_r, an.hip_l});
            float frac = g.length == GarmentLength::Long ? 0.92f : 0.45f;
            for (Joint hand : {Joint::LHand, Joint::RHand}) {
                Vec2 h = pose.at(hand);
                polys.push_back(segment_quad(lerp(neck, h, 0.12f), lerp(neck, h, frac), 0.028f));
            }
            break;
        }
        case GarmentCategory::Trousers: {
            Vec2 pelvis = pose.at(Joint::Pelvis);
            Vec2 d = normalize({pelvis.x - neck.x, pelvis.y - neck.y});
            Vec2 p = perp(d);
            Vec2 feet = pose.at(Joint::FeetMid);
            for (int side = 0; side < 2; ++side) {
                float s = side == 0 ? 1.f : -1.f;
                Vec2 hip{pelvis.x + p.x * 0.075f * s, pelvis.y + p.y * 0.075f * s};
                Vec2 knee = pose.at(side == 0 ? Joint::LKnee : Joint::RKnee);
                if (g.length == GarmentLength::Long) {
                    Vec2 foot{feet.x + p.x * 0.035f * s, feet.y + p.y * 0.035f * s};
                    polys.push_back(segment_quad(hip, knee, 0.042f));
                    polys.push_back(segment_quad(knee, foot, 0.042f));
                } else {
                    // knee-length shorts
                    polys.push_back(segment_quad(hip, knee, 0.055f));
                }
            }
            break;
        }
        case GarmentCategory::Dress: {
            polys.push_back({an.shoulder_l, an.shoulder_r, an.hem_r, an.hem_l});
            break;
        }
    }
    return polys;
}

void paint_block2(ImageGrid& img, int tlx, int tly, const Rgb& c) {
    for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
            if (img.in_bounds(tly + dy, tlx + dx)) img.set(tly + dy, tlx + dx, c);
}

void draw_marker(ImageGrid& img, const Vec2& joint, const Rgb& c) {
    int tlx = static_cast<int>(std::lround(joint.x * img.w)) - 1;
    int tly = static_cast<int>(std::lround(joint.y * img.h)) - 1;
    paint_block2(img, tlx, tly, c);
}

void draw_stroke(ImageGrid& img, const Vec2& a, const Vec2& b, const Rgb& c) {
    float ax = a.x * img.w, ay = a.y * img.h;
    float bx = b.x * img.w, by = b.y * img.h;
    float len = std::hypot(bx - ax, by - ay);
    int steps = std::max(1, static_cast<int>(std::ceil(len * 2.f)));
    for (int i = 0; i <= steps; ++i) {
        float t = static_cast<float>(i) / steps;
        int tlx = static_cast<int>(std::lround(ax + (bx - ax) * t)) - 1;
        int tly = static_cast<int>(std::lround(ay + (by - ay) * t)) - 1;
        paint_block2(img, tlx, tly, c);
    }
}

void draw_disc(ImageGrid& img, const Vec2& center, float radius_px, const Rgb& c) {
    float cx = center.x * img.w, cy = center.y * img.h;
    int y0 = std::max(0, static_cast<int>(std::floor(cy - radius_px - 1)));
    int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(cy + radius_px + 1)));
    int x0 = std::max(0, static_cast<int>(std::floor(cx - radius_px - 1)));
    int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(cx + radius_px + 1)));
    float r2 = radius_px * radius_px;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            float dx = x + 0.5f - cx, dy = y + 0.5f - cy;
            if (dx * dx + dy * dy <= r2) img.set(y, x, c);
        }
}

void paint_garment(ImageGrid& img, const GarmentSpec& g, const PoseSkeleton& pose) {
    int size = img.h;
    std::vector<uint8_t> mask = garment_mask(g, pose, size);
    const Rgb& base = kGarmentPalette[static_cast<size_t>(g.base_color)];
    const Rgb& pat = kGarmentPalette[static_cast<size_t>(g.pattern_color)];
    int stripe_h = std::max(1, size / 16);
    int dot_stride = std::max(4, size / 8);
    int dot_size = std::max(1, size / 32);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            if (!mask[static_cast<size_t>(y) * size + x]) continue;
            Rgb c = base;
            if (g.pattern == GarmentPattern::HStripes) {
                if ((y / stripe_h) % 3 == 1) c = pat;
            } else if (g.pattern == GarmentPattern::Dots) {
                int half = dot_stride / 2;
                if ((y % dot_stride) >= half && (y % dot_stride) < half + dot_size &&
                    (x % dot_stride) >= half && (x % dot_stride) < half + dot_size)
                    c = pat;
            }
            img.set(y, x, c);
        }
}

void draw_body(ImageGrid& img, const PersonSpec& person) {
    const Rgb& skin = kSkinTones[static_cast<size_t>(person.skin_tone)];
    const PoseSkeleton& p = person.pose;
    for (const Bone& b : kBones) {
        if (b.a == Joint::Head) continue;  // head is a disc, not a stroke
        draw_stroke(img, p.at(b.a), p.at(b.b), skin);
    }
    float r = head_radius_px(person.head_scale, img.h);
    draw_disc(img, p.at(Joint::Head), r, skin);
    // mouth glyph
    Vec2 head = p.at(Joint::Head);
    int mcx = static_cast<int>(std::lround(head.x * img.w));
    int mcy = static_cast<int>(std::lround(head.y * img.h)) +
              std::max(2, static_cast<int>(std::lround(0.55f * r)));
    for (const auto& off : mouth_glyph(person.expression, r)) {
        int x = mcx + off[0], y = mcy + off[1];
        if (img.in_bounds(y, x)) img.set(y, x, kMouthColor);
    }
}

}  // namespace

PoseSkeleton canonical_pose_standing() {
    PoseSkeleton p;
    p.at(Joint::Head) = grid(16, 6);
    p.at(Joint::Neck) = grid(16, 10);
    p.at(Joint::LHand) = grid(9, 18);
    p.at(Joint::RHand) = grid(23, 18);
    p.at(Joint::Pelvis) = grid(16, 18);
    p.at(Joint::LKnee) = grid(13, 24);
    p.at(Joint::RKnee) = grid(19, 24);
    p.at(Joint::FeetMid) = grid(16, 29);
    return p;
}

PoseSkeleton canonical_pose_sitting() {
    PoseSkeleton p;
    p.at(Joint::Head) = grid(16, 8);
    p.at(Joint::Neck) = grid(16, 12);
    p.at(Joint::LHand) = grid(9, 19);
    p.at(Joint::RHand) = grid(23, 19);
    p.at(Joint::Pelvis) = grid(16, 20);
    p.at(Joint::LKnee) = grid(11, 23);
    p.at(Joint::RKnee) = grid(21, 23);
    p.at(Joint::FeetMid) = grid(16, 27);
    return p;
}

PoseSkeleton mirrored(const PoseSkeleton& p) {
    PoseSkeleton out = p;
    for (auto& j : out.joints) j.x = std::round((1.f - j.x) * kGrid) / kGrid;
    return out;
}

bool is_sitting(const PoseSkeleton& p) {
    return (p.at(Joint::FeetMid).y - p.at(Joint::Pelvis).y) < 0.28f;
}

void validate_pose(const PoseSkeleton& p) {
    for (size_t i = 0; i < kNumJoints; ++i) {
        const Vec2& j = p.joints[i];
        check(j.x >= 0.f && j.x <= 1.f && j.y >= 0.f && j.y <= 1.f,
              std::string("pose: joint ") + kJointNames[i] + " out of bounds");
    }
    check(p.at(Joint::Neck).y < p.at(Joint::Pelvis).y, "pose: neck must sit above pelvis");
    static const std::array<float, kNumJoints> canon = canonical_bone_lengths();
    for (size_t i = 0; i < kBones.size(); ++i) {
        float len = dist(p.at(kBones[i].a), p.at(kBones[i].b));
        check(len >= 0.6f * canon[i] && len <= 1.4f * canon[i],
              std::string("pose: bone ") + kJointNames[static_cast<size_t>(kBones[i].a)] + "-" +
                  kJointNames[static_cast<size_t>(kBones[i].b)] +
                  " length outside 40% of canonical");
    }
}

void validate_garment(const GarmentSpec& g) {
    check(g.base_color >= 0 && g.base_color < 8, "garment: base_color index out of range");
    check(g.pattern_color >= 0 && g.pattern_color < 8, "garment: pattern_color index out of range");
    if (g.pattern != GarmentPattern::Solid)
        check(g.pattern_color != g.base_color,
              "garment: pattern_color must differ from base_color for patterned garments");
}

void validate_person(const PersonSpec& p) {
    validate_pose(p.pose);
    check(p.skin_tone >= 0 && p.skin_tone < 4, "person: skin_tone index out of range");
    bool scale_ok = false;
    for (float s : kHeadScales) scale_ok = scale_ok || s == p.head_scale;
    check(scale_ok, "person: head_scale not one of {0.8, 1.0, 1.15}");
    check(p.background_color >= 0 && p.background_color < 6,
          "person: background_color index out of range");
}

void validate_manifest(const DatasetManifest& m) {
    check(m.mode == "paired_one_to_one" || m.mode == "cross_paired",
          "manifest: unknown mode '" + m.mode + "'");
    for (const auto& p : m.persons) validate_person(p);
    for (const auto& g : m.garments) validate_garment(g);
    std::vector<int> garment_uses(m.garments.size(), 0);
    for (const auto& r : m.records) {
        check(r.person >= 0 && r.person < static_cast<int>(m.persons.size()),
              "manifest: record person index out of range");
        check(r.garment >= 0 && r.garment < static_cast<int>(m.garments.size()),
              "manifest: record garment index out of range");
        check(r.split == "train" || r.split == "val", "manifest: bad split tag '" + r.split + "'");
        garment_uses[static_cast<size_t>(r.garment)]++;
    }
    if (m.mode == "paired_one_to_one") {
        for (size_t g = 0; g < garment_uses.size(); ++g)
            check(garment_uses[g] == 1,
                  "manifest: paired mode requires each garment in exactly one record");
    }
}

void check_render_size(int size) {
    check(size == 32 || size == 64, "render size must be 32 or 64, got " + std::to_string(size));
}

float head_radius_px(float head_scale, int size) { return 0.095f * head_scale * size; }

std::vector<std::array<int, 2>> mouth_glyph(Expression e, float r) {
    int hw = std::max(1, static_cast<int>(std::lround(0.45f * r)));
    int dip = std::max(1, static_cast<int>(std::lround(0.30f * r)));
    std::vector<std::array<int, 2>> px;
    for (int dx = -hw; dx <= hw; ++dx) {
        int dy = 0;
        if (e == Expression::Smile && std::abs(dx) < hw) dy = dip;
        if (e == Expression::Frown && std::abs(dx) == hw) dy = dip;
        px.push_back({dx, dy});
    }
    return px;
}

GarmentAnchors garment_anchors(const PoseSkeleton& pose, GarmentLength length) {
    const Vec2 neck = pose.at(Joint::Neck);
    const Vec2 pelvis = pose.at(Joint::Pelvis);
    Vec2 d = normalize({pelvis.x - neck.x, pelvis.y - neck.y});
    Vec2 p = perp(d);
    GarmentAnchors a;
    Vec2 sh{neck.x + d.x * 0.02f, neck.y + d.y * 0.02f};
    a.shoulder_l = {sh.x + p.x * 0.11f, sh.y + p.y * 0.11f};
    a.shoulder_r = {sh.x - p.x * 0.11f, sh.y - p.y * 0.11f};
    Vec2 hip{pelvis.x + d.x * 0.02f, pelvis.y + d.y * 0.02f};
    a.hip_l = {hip.x + p.x * 0.095f, hip.y + p.y * 0.095f};
    a.hip_r = {hip.x - p.x * 0.095f, hip.y - p.y * 0.095f};
    Vec2 knees = lerp(pose.at(Joint::LKnee), pose.at(Joint::RKnee), 0.5f);
    Vec2 feet = pose.at(Joint::FeetMid);
    float hem_t = length == GarmentLength::Long ? 0.55f : -0.10f;
    Vec2 hem_c = lerp(knees, feet, hem_t);
    a.hem_l = {hem_c.x + p.x * 0.17f, hem_c.y + p.y * 0.17f};
    a.hem_r = {hem_c.x - p.x * 0.17f, hem_c.y - p.y * 0.17f};
    return a;
}

std::vector<uint8_t> garment_mask(const GarmentSpec& g, const PoseSkeleton& pose, int size) {
    check_render_size(size);
    validate_garment(g);
    std::vector<Poly> polys = garment_polys(g, pose);
    std::vector<uint8_t> mask(static_cast<size_t>(size) * size, 0);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            float nx = (x + 0.5f) / size, ny = (y + 0.5f) / size;
            for (const Poly& poly : polys)
                if (point_in_poly(poly, nx, ny)) {
                    mask[static_cast<size_t>(y) * size + x] = 1;
                    break;
                }
        }
    return mask;
}

ImageGrid render_person(const PersonSpec& person, const GarmentSpec& garment, int size) {
    check_render_size(size);
    validate_person(person);
    validate_garment(garment);
    ImageGrid img(size, size);
    img.fill(kBackgroundPalette[static_cast<size_t>(person.background_color)]);
    draw_body(img, person);
    paint_garment(img, garment, person.pose);
    for (size_t j = 0; j < kNumJoints; ++j)
        draw_marker(img, person.pose.joints[j], kMarkerColors[j]);
    return img;
}

ImageGrid render_garment_card(const GarmentSpec& garment, int size) {
    check_render_size(size);
    validate_garment(garment);
    ImageGrid img(size, size);
    img.fill({1.f, 1.f, 1.f});
    paint_garment(img, garment, canonical_pose_standing());
    return img;
}

ImageGrid render_pose_map(const PoseSkeleton& pose, int size) {
    check_render_size(size);
    validate_pose(pose);
    ImageGrid img(size, size);
    img.fill({0.f, 0.f, 0.f});
    for (size_t i = 0; i < kBones.size(); ++i)
        draw_stroke(img, pose.at(kBones[i].a), pose.at(kBones[i].b), kBoneColors[i]);
    for (size_t j = 0; j < kNumJoints; ++j)
        draw_marker(img, pose.joints[j], kMarkerColors[j]);
    return img;
}

// ---- sampling ----

namespace {

struct JitterSpec {
    int dx, dy;
};

// Per-joint jitter amplitude in 1/32 grid units.
constexpr std::array<JitterSpec, kNumJoints> kJitter = {{
    {1, 1},  // head
    {1, 1},  // neck
    {3, 2},  // l_hand
    {3, 2},  // r_hand
    {1, 1},  // pelvis
    {2, 1},  // l_knee
    {2, 1},  // r_knee
    {2, 1},  // feet_mid
}};

bool joints_separated(const PoseSkeleton& p) {
    // 2x2 markers must never overlap: L-inf >= 2 grid units pairwise.
    for (size_t i = 0; i < kNumJoints; ++i)
        for (size_t j = i + 1; j < kNumJoints; ++j) {
            float d = std::max(std::abs(p.joints[i].x - p.joints[j].x),
                               std::abs(p.joints[i].y - p.joints[j].y));
            if (d < 1.9f / kGrid) return false;
        }
    return true;
}

bool pose_in_margins(const PoseSkeleton& p) {
    for (const Vec2& j : p.joints)
        if (j.x < 3.f / kGrid || j.x > 29.f / kGrid || j.y < 3.f / kGrid || j.y > 30.f / kGrid)
            return false;
    // keep the head disc clear of the top edge at the largest head scale
    return p.at(Joint::Head).y >= 5.f / kGrid;
}

}  // namespace

PoseSkeleton sample_pose(RngStream& rng) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        bool sitting = rng.next_below(2) == 1;
        PoseSkeleton base = sitting ? canonical_pose_sitting() : canonical_pose_standing();
        int shift = static_cast<int>(rng.next_below(5)) - 2;  // whole-body x shift
        PoseSkeleton p;
        for (size_t j = 0; j < kNumJoints; ++j) {
            int gx = static_cast<int>(std::lround(base.joints[j].x * kGrid)) + shift +
                     static_cast<int>(rng.next_below(static_cast<uint64_t>(2 * kJitter[j].dx + 1))) -
                     kJitter[j].dx;
            int gy = static_cast<int>(std::lround(base.joints[j].y * kGrid)) +
                     static_cast<int>(rng.next_below(static_cast<uint64_t>(2 * kJitter[j].dy + 1))) -
                     kJitter[j].dy;
            p.joints[j] = grid(gx, gy);
        }
        if (!pose_in_margins(p) || !joints_separated(p)) continue;
        try {
            validate_pose(p);
        } catch (const ContractError&) {
            continue;
        }
        return p;
    }
    throw ContractError("sample_pose: could not draw a valid pose in 1000 attempts");
}

GarmentSpec sample_garment(RngStream& rng) {
    GarmentSpec g;
    g.category = static_cast<GarmentCategory>(rng.next_below(3));
    g.base_color = static_cast<int>(rng.next_below(8));
    g.pattern = static_cast<GarmentPattern>(rng.next_below(3));
    g.length = static_cast<GarmentLength>(rng.next_below(2));
    g.pattern_color = static_cast<int>(rng.next_below(8));
    while (g.pattern != GarmentPattern::Solid && g.pattern_color == g.base_color)
        g.pattern_color = static_cast<int>(rng.next_below(8));
    return g;
}

PersonSpec sample_person(RngStream& rng) {
    PersonSpec p;
    p.pose = sample_pose(rng);
    p.skin_tone = static_cast<int>(rng.next_below(4));
    p.head_scale = kHeadScales[rng.next_below(3)];
    p.expression = static_cast<Expression>(rng.next_below(3));
    p.background_color = static_cast<int>(rng.next_below(6));
    return p;
}

DatasetManifest sample_world(RngStream& rng, int n_persons, int n_garments,
                             const std::string& mode) {
    check(mode == "paired_one_to_one" || mode == "cross_paired",
          "sample_world: unknown mode '" + mode + "'");
    check(n_persons > 0 && n_garments > 0, "sample_world: counts must be positive");
    check(n_garments <= n_persons, "sample_world: paired mode needs n_garments <= n_persons");
    DatasetManifest m;
    m.mode = "paired_one_to_one";
    for (int i = 0; i < n_persons; ++i) m.persons.push_back(sample_person(rng));
    for (int i = 0; i < n_garments; ++i) m.garments.push_back(sample_garment(rng));
    // bijection: garment i worn by a distinct random person
    std::vector<int> person_perm(static_cast<size_t>(n_persons));
    for (int i = 0; i < n_persons; ++i) person_perm[static_cast<size_t>(i)] = i;
    for (int i = n_persons - 1; i > 0; --i)
        std::swap(person_perm[static_cast<size_t>(i)],
                  person_perm[rng.next_below(static_cast<uint64_t>(i + 1))]);
    for (int g = 0; g < n_garments; ++g)
        m.records.push_back({person_perm[static_cast<size_t>(g)], g, "train"});
    // 90/10 split over a shuffled record order
    std::vector<int> order(m.records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (size_t i = order.size() - 1; i > 0; --i)
        std::swap(order[i], order[rng.next_below(static_cast<uint64_t>(i + 1))]);
    size_t n_train = (order.size() * 9 + 9) / 10;
    for (size_t i = 0; i < order.size(); ++i)
        m.records[static_cast<size_t>(order[i])].split = i < n_train ? "train" : "val";
    if (mode == "cross_paired") return cross_pair(m, std::min(kDefaultCrossPairK, n_garments), rng);
    return m;
}

// ---- JSON ----

namespace {

template <size_t N>
int name_index(const std::array<const char*, N>& names, const std::string& s,
               const char* what) {
    for (size_t i = 0; i < N; ++i)
        if (s == names[i]) return static_cast<int>(i);
    throw ContractError(std::string("manifest: unknown ") + what + " '" + s + "'");
}

const std::array<const char*, 3> kCategoryNames = {"top", "trousers", "dress"};
const std::array<const char*, 3> kPatternNames = {"solid", "hstripes", "dots"};
const std::array<const char*, 2> kLengthNames = {"short", "long"};
const std::array<const char*, 3> kExpressionNames = {"smile", "neutral", "frown"};
const std::array<const char*, 3> kAgeNames = {"child", "adult", "elderly"};

int age_index(float head_scale) {
    for (size_t i = 0; i < kHeadScales.size(); ++i)
        if (kHeadScales[i] == head_scale) return static_cast<int>(i);
    throw ContractError("manifest: head_scale not in the supported set");
}

}  // namespace

std::string manifest_to_json(const DatasetManifest& m) {
    json j;
    j["format"] = "nct-manifest-v1";
    j["mode"] = m.mode;
    j["persons"] = json::array();
    for (const auto& p : m.persons) {
        json pj;
        json pose;
        for (size_t k = 0; k < kNumJoints; ++k)
            pose[kJointNames[k]] = {static_cast<int>(std::lround(p.pose.joints[k].x * kGrid)),
                                    static_cast<int>(std::lround(p.pose.joints[k].y * kGrid))};
        pj["pose"] = pose;
        pj["skin_tone"] = p.skin_tone;
        pj["age"] = kAgeNames[static_cast<size_t>(age_index(p.head_scale))];
        pj["expression"] = kExpressionNames[static_cast<size_t>(p.expression)];
        pj["background"] = kBackgroundColorNames[static_cast<size_t>(p.background_color)];
        j["persons"].push_back(pj);
    }
    j["garments"] = json::array();
    for (const auto& g : m.garments) {
        json gj;
        gj["category"] = kCategoryNames[static_cast<size_t>(g.category)];
        gj["base_color"] = kGarmentColorNames[static_cast<size_t>(g.base_color)];
        gj["pattern"] = kPatternNames[static_cast<size_t>(g.pattern)];
        gj["pattern_color"] = kGarmentColorNames[static_cast<size_t>(g.pattern_color)];
        gj["length"] = kLengthNames[static_cast<size_t>(g.length)];
        j["garments"].push_back(gj);
    }
    j["records"] = json::array();
    for (const auto& r : m.records)
        j["records"].push_back({{"person", r.person}, {"garment", r.garment}, {"split", r.split}});
    return j.dump(2);
}

DatasetManifest manifest_from_json(const std::string& text) {
    json j = json::parse(text);
    check(j.value("format", "") == "nct-manifest-v1", "manifest: unknown format tag");
    DatasetManifest m;
    m.mode = j.at("mode").get<std::string>();
    for (const auto& pj : j.at("persons")) {
        PersonSpec p;
        for (size_t k = 0; k < kNumJoints; ++k) {
            auto xy = pj.at("pose").at(kJointNames[k]);
            p.pose.joints[k] = grid(xy.at(0).get<int>(), xy.at(1).get<int>());
        }
        p.skin_tone = pj.at("skin_tone").get<int>();
        p.head_scale = kHeadScales[static_cast<size_t>(
            name_index(kAgeNames, pj.at("age").get<std::string>(), "age"))];
        p.expression = static_cast<Expression>(
            name_index(kExpressionNames, pj.at("expression").get<std::string>(), "expression"));
        p.background_color =
            name_index(kBackgroundColorNames, pj.at("background").get<std::string>(), "background");
        m.persons.push_back(p);
    }
    for (const auto& gj : j.at("garments")) {
        GarmentSpec g;
        g.category = static_cast<GarmentCategory>(
            name_index(kCategoryNames, gj.at("category").get<std::string>(), "category"));
        g.base_color =
            name_index(kGarmentColorNames, gj.at("base_color").get<std::string>(), "color");
        g.pattern = static_cast<GarmentPattern>(
            name_index(kPatternNames, gj.at("pattern").get<std::string>(), "pattern"));
        g.pattern_color =
            name_index(kGarmentColorNames, gj.at("pattern_color").get<std::string>(), "color");
        g.length = static_cast<GarmentLength>(
            name_index(kLengthNames, gj.at("length").get<std::string>(), "length"));
        m.garments.push_back(g);
    }
    for (const auto& rj : j.at("records")) {
        ManifestRecord r;
        r.person = rj.at("person").get<int>();
        r.garment = rj.at("garment").get<int>();
        r.split = rj.at("split").get<std::string>();
        m.records.push_back(r);
    }
    validate_manifest(m);
    return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    f << manifest_to_json(m) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open for read: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return manifest_from_json(ss.str());
}

}  // namespace nct
