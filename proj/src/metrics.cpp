#include "nct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "nct/common.hpp"

namespace nct {

using json = nlohmann::json;

KeypointDetection detect_keypoints(const ImageGrid& img) {
    KeypointDetection det;
    for (size_t j = 0; j < kNumJoints; ++j) {
        const Rgb& mc = kMarkerColors[j];
        double wx = 0, wy = 0, wsum = 0;
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                float d = linf(img.get(y, x), mc);
                if (d > kMarkerWindow) continue;
                double w = 1.0 - d / kMarkerWindow;
                wx += w * (x + 0.5);
                wy += w * (y + 0.5);
                wsum += w;
            }
        if (wsum > 0) {
            det.found[j] = true;
            det.pos[j] = {static_cast<float>(wx / wsum / img.w),
                          static_cast<float>(wy / wsum / img.h)};
            ++det.n_found;
        }
    }
    return det;
}

float pose_distance(const ImageGrid& generated, const PoseSkeleton& target) {
    KeypointDetection det = detect_keypoints(generated);
    double total = 0;
    for (size_t j = 0; j < kNumJoints; ++j) {
        if (!det.found[j]) {
            total += kMissingJointPenalty;
            continue;
        }
        total += std::hypot(det.pos[j].x - target.joints[j].x, det.pos[j].y - target.joints[j].y);
    }
    return static_cast<float>(total / kNumJoints);
}

// ---- fidelity ----

FidelityResult fidelity_score(const ImageGrid& generated, const GarmentSpec& garment_ref,
                              const PoseSkeleton& pose) {
    FidelityResult res;
    std::vector<uint8_t> mask = garment_mask(garment_ref, pose, generated.h);
    int y0 = generated.h, x0 = generated.w, y1 = -1, x1 = -1;
    for (int y = 0; y < generated.h; ++y)
        for (int x = 0; x < generated.w; ++x)
            if (mask[static_cast<size_t>(y) * generated.w + x]) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    if (y1 < 0) return res;  // empty analytic crop: flagged, excluded from means
    GarmentFeature crop_feat =
        featurize_region(generated, mask, y0, x0, y1, x1, FeaturizerVariant::SE);
    ImageGrid card = render_garment_card(garment_ref, generated.h);
    GarmentFeature card_feat = featurize_garment(card, FeaturizerVariant::SE);
    res.score = cosine(crop_feat, card_feat);
    res.valid = true;
    return res;
}

// ---- probes ----

const ProbeConfig& default_probes() {
    static const ProbeConfig p;
    return p;
}

bool probe_color(const ImageGrid& img, const GarmentSpec& g, const PoseSkeleton& pose,
                 const ProbeConfig& p) {
    std::vector<uint8_t> mask = garment_mask(g, pose, img.h);
    // dominant color: mode over a 0.1-lattice quantization of in-mask pixels
    std::map<std::array<int, 3>, int> counts;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            if (!mask[static_cast<size_t>(y) * img.w + x]) continue;
            Rgb c = img.get(y, x);
            std::array<int, 3> q{static_cast<int>(std::lround(c[0] * 10)),
                                 static_cast<int>(std::lround(c[1] * 10)),
                                 static_cast<int>(std::lround(c[2] * 10))};
            counts[q]++;
        }
    if (counts.empty()) return false;
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
        if (it->second > best->second) best = it;
    Rgb dom{best->first[0] / 10.f, best->first[1] / 10.f, best->first[2] / 10.f};
    return linf(dom, kGarmentPalette[static_cast<size_t>(g.base_color)]) <= p.color_window;
}

namespace {

struct GradEnergy {
    double ex = 0, ey = 0;
};

GradEnergy mask_gradient_energy(const ImageGrid& img, const std::vector<uint8_t>& mask) {
    GradEnergy e;
    int nx = 0, ny = 0;
    auto lum = [&](int y, int x) {
        const float* p = img.at(y, x);
        return (p[0] + p[1] + p[2]) / 3.f;
    };
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            if (!mask[static_cast<size_t>(y) * img.w + x]) continue;
            if (x + 1 < img.w && mask[static_cast<size_t>(y) * img.w + x + 1]) {
                e.ex += std::abs(lum(y, x + 1) - lum(y, x));
                ++nx;
            }
            if (y + 1 < img.h && mask[static_cast<size_t>(y + 1) * img.w + x]) {
                e.ey += std::abs(lum(y + 1, x) - lum(y, x));
                ++ny;
            }
        }
    if (nx) e.ex /= nx;
    if (ny) e.ey /= ny;
    return e;
}

}  // namespace

bool probe_pattern(const ImageGrid& img, const GarmentSpec& g, const PoseSkeleton& pose,
                   const ProbeConfig& p) {
    std::vector<uint8_t> mask = garment_mask(g, pose, img.h);
    GradEnergy e = mask_gradient_energy(img, mask);
    GarmentPattern detected;
    if (e.ex <= p.solid_energy_max && e.ey <= p.solid_energy_max)
        detected = GarmentPattern::Solid;
    else if (e.ey > p.stripe_ratio * std::max(e.ex, 1e-6))
        detected = GarmentPattern::HStripes;
    else
        detected = GarmentPattern::Dots;
    return detected == g.pattern;
}

bool probe_background(const ImageGrid& img, int bg_index, const ProbeConfig&) {
    std::array<int, 6> votes{};
    auto vote = [&](int y, int x) {
        Rgb c = img.get(y, x);
        int best = 0;
        float bd = 1e9f;
        for (int i = 0; i < 6; ++i) {
            float d = linf(c, kBackgroundPalette[static_cast<size_t>(i)]);
            if (d < bd) {
                bd = d;
                best = i;
            }
        }
        votes[static_cast<size_t>(best)]++;
    };
    for (int x = 0; x < img.w; ++x) {
        vote(0, x);
        vote(img.h - 1, x);
    }
    for (int y = 1; y < img.h - 1; ++y) {
        vote(y, 0);
        vote(y, img.w - 1);
    }
    int best = 0;
    for (int i = 1; i < 6; ++i)
        if (votes[static_cast<size_t>(i)] > votes[static_cast<size_t>(best)]) best = i;
    return best == bg_index;
}

namespace {

struct HeadEstimate {
    bool found = false;
    Vec2 center{};
    float radius_px = 0;
};

HeadEstimate estimate_head(const ImageGrid& img, const ProbeConfig& p) {
    HeadEstimate est;
    KeypointDetection det = detect_keypoints(img);
    if (!det.found[static_cast<size_t>(Joint::Head)]) return est;
    est.center = det.pos[static_cast<size_t>(Joint::Head)];
    float cx = est.center.x * img.w, cy = est.center.y * img.h;
    float window = 0.22f * img.h;
    int count = 0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            float dx = x + 0.5f - cx, dy = y + 0.5f - cy;
            if (dx * dx + dy * dy > window * window) continue;
            Rgb c = img.get(y, x);
            for (const Rgb& skin : kSkinTones)
                if (linf(c, skin) <= p.skin_window) {
                    ++count;
                    break;
                }
        }
    est.found = true;
    // the disc loses ~4px to the marker and a few to the mouth glyph
    est.radius_px = std::sqrt(std::max(0.f, static_cast<float>(count) + 7.f) / 3.14159265f);
    return est;
}

}  // namespace

bool probe_expression(const ImageGrid& img, Expression e, const ProbeConfig& p) {
    HeadEstimate head = estimate_head(img, p);
    if (!head.found) return false;
    int mcx = static_cast<int>(std::lround(head.center.x * img.w));
    int mcy = static_cast<int>(std::lround(head.center.y * img.h)) +
              std::max(2, static_cast<int>(std::lround(0.55f * head.radius_px)));
    // binary mouth map in a window around the expected glyph position
    std::vector<std::array<int, 2>> lit;
    int win = std::max(3, static_cast<int>(std::lround(head.radius_px)) + 1);
    for (int dy = -win; dy <= win; ++dy)
        for (int dx = -win; dx <= win; ++dx) {
            int y = mcy + dy, x = mcx + dx;
            if (!img.in_bounds(y, x)) continue;
            if (linf(img.get(y, x), kMouthColor) <= p.mouth_window) lit.push_back({dx, dy});
        }
    if (lit.empty()) return false;
    Expression best = Expression::Neutral;
    double best_iou = -1;
    for (Expression cand : {Expression::Smile, Expression::Neutral, Expression::Frown}) {
        auto tmpl = mouth_glyph(cand, head.radius_px);
        int inter = 0;
        for (const auto& t : tmpl)
            for (const auto& l : lit)
                if (t[0] == l[0] && t[1] == l[1]) {
                    ++inter;
                    break;
                }
        double uni = static_cast<double>(tmpl.size() + lit.size() - inter);
        double iou = uni > 0 ? inter / uni : 0;
        if (iou > best_iou) {
            best_iou = iou;
            best = cand;
        }
    }
    return best == e;
}

bool probe_age(const ImageGrid& img, float head_scale, const ProbeConfig& p) {
    HeadEstimate head = estimate_head(img, p);
    if (!head.found) return false;
    float r32 = head.radius_px * 32.f / img.h;  // buckets are calibrated at size 32
    float detected;
    if (r32 <= p.head_child_max_r) detected = kHeadScales[0];
    else if (r32 <= p.head_adult_max_r) detected = kHeadScales[1];
    else detected = kHeadScales[2];
    return detected == head_scale;
}

bool probe_stance(const ImageGrid& img, bool sitting, const ProbeConfig& p) {
    KeypointDetection det = detect_keypoints(img);
    if (!det.found[static_cast<size_t>(Joint::Pelvis)] ||
        !det.found[static_cast<size_t>(Joint::FeetMid)])
        return false;
    float d = det.pos[static_cast<size_t>(Joint::FeetMid)].y -
              det.pos[static_cast<size_t>(Joint::Pelvis)].y;
    return (d < p.sit_stand_split) == sitting;
}

float text_adherence(const ImageGrid& generated, const GarmentSpec& garment,
                     const PromptTokens& prompt, const PoseSkeleton& pose, AdherenceScope scope,
                     const ProbeConfig& probes) {
    int checked = 0, ok = 0;
    auto tally = [&](bool pass) {
        ++checked;
        if (pass) ++ok;
    };
    tally(probe_color(generated, garment, pose, probes));
    tally(probe_pattern(generated, garment, pose, probes));
    if (scope == AdherenceScope::FullPrompt) {
        for (const auto& tok : prompt.tokens) {
            if (tok == "clothes" || tok.rfind("col_", 0) == 0 || tok.rfind("pat_", 0) == 0 ||
                tok.rfind("len_", 0) == 0 || tok.rfind("cat_", 0) == 0)
                continue;  // garment facts are already covered by the two probes above
            if (tok.rfind("bg_", 0) == 0) {
                int idx = -1;
                for (int i = 0; i < 6; ++i)
                    if (tok == std::string("bg_") + kBackgroundColorNames[static_cast<size_t>(i)])
                        idx = i;
                check(idx >= 0, "text_adherence: unknown background token " + tok);
                tally(probe_background(generated, idx, probes));
            } else if (tok == "smiling") {
                tally(probe_expression(generated, Expression::Smile, probes));
            } else if (tok == "neutral") {
                tally(probe_expression(generated, Expression::Neutral, probes));
            } else if (tok == "frowning") {
                tally(probe_expression(generated, Expression::Frown, probes));
            } else if (tok == "child") {
                tally(probe_age(generated, kHeadScales[0], probes));
            } else if (tok == "adult") {
                tally(probe_age(generated, kHeadScales[1], probes));
            } else if (tok == "elderly") {
                tally(probe_age(generated, kHeadScales[2], probes));
            } else if (tok == "standing") {
                tally(probe_stance(generated, false, probes));
            } else if (tok == "sitting") {
                tally(probe_stance(generated, true, probes));
            }
        }
    }
    return checked ? static_cast<float>(ok) / static_cast<float>(checked) : 1.f;
}

// ---- evaluation runs ----

EvalVariant eval_variant(const std::string& name) {
    EvalVariant v;
    if (name == "full") return v;
    if (name == "no-se") {
        v.zero_garment_row = true;
        return v;
    }
    if (name == "se-c") {
        v.featurizer = FeaturizerVariant::SE_C;
        return v;
    }
    if (name == "no-sc") {
        v.use_branches = false;
        v.append_garment_tokens = true;
        return v;
    }
    throw ContractError("unknown eval variant '" + name + "' (full|no-se|se-c|no-sc)");
}

namespace {

void accumulate(CategoryMetrics& m, const FidelityResult& fid, float adh_g, float adh_f,
                float pd) {
    if (fid.valid) m.fidelity += fid.score;
    else m.excluded += 1;
    m.garment_adherence += adh_g;
    m.prompt_adherence += adh_f;
    m.pose_dist += pd;
    m.count += 1;
}

void finalize(CategoryMetrics& m) {
    if (m.count == 0) return;
    int fid_n = m.count - m.excluded;
    if (fid_n > 0) m.fidelity /= fid_n;
    m.garment_adherence /= m.count;
    m.prompt_adherence /= m.count;
    m.pose_dist /= m.count;
}

json category_json(const CategoryMetrics& m) {
    return {{"fidelity", m.fidelity},
            {"garment_adherence", m.garment_adherence},
            {"prompt_adherence", m.prompt_adherence},
            {"pose_distance", m.pose_dist},
            {"count", m.count},
            {"excluded_empty_crop", m.excluded}};
}

}  // namespace

std::string MetricsReport::to_json() const {
    json j;
    j["variant"] = variant;
    j["overall"] = category_json(overall);
    j["per_category"] = {{"top", category_json(per_category[0])},
                         {"trousers", category_json(per_category[1])},
                         {"dress", category_json(per_category[2])}};
    return j.dump(2);
}

MetricsReport evaluate_run(ModelSet& models, const DatasetManifest& eval_set,
                           const std::string& variant_name, const SamplerConfig& sampler,
                           const NoiseSchedule& sched, std::vector<ImageGrid>* keep_images) {
    validate_manifest(eval_set);
    EvalVariant variant = eval_variant(variant_name);
    MetricsReport report;
    report.variant = variant_name;

    constexpr int kChunk = 10;  // sampling batch size
    for (size_t base = 0; base < eval_set.records.size(); base += kChunk) {
        size_t end = std::min(eval_set.records.size(), base + kChunk);
        std::vector<SampleRequest> reqs;
        for (size_t i = base; i < end; ++i) {
            const auto& rec = eval_set.records[i];
            const PersonSpec& person = eval_set.persons[static_cast<size_t>(rec.person)];
            const GarmentSpec& garment = eval_set.garments[static_cast<size_t>(rec.garment)];
            SampleRequest r;
            r.garment = garment;
            r.pose = person.pose;
            r.prompt = prompt_for_person(person);
            if (variant.append_garment_tokens)
                for (const auto& t : garment_attribute_tokens(garment)) r.prompt.tokens.push_back(t);
            r.feat_variant = variant.featurizer;
            r.use_branches = variant.use_branches;
            r.zero_garment_row = variant.zero_garment_row;
            reqs.push_back(std::move(r));
        }
        SamplerConfig chunk_sampler = sampler;
        chunk_sampler.seed = splitmix64(sampler.seed ^ static_cast<uint64_t>(base));
        std::vector<ImageGrid> images = ddim_sample(models, reqs, chunk_sampler, sched);
        for (size_t i = base; i < end; ++i) {
            const auto& rec = eval_set.records[i];
            const PersonSpec& person = eval_set.persons[static_cast<size_t>(rec.person)];
            const GarmentSpec& garment = eval_set.garments[static_cast<size_t>(rec.garment)];
            const ImageGrid& img = images[i - base];
            FidelityResult fid = fidelity_score(img, garment, person.pose);
            PromptTokens prompt = prompt_for_person(person);
            float adh_g = text_adherence(img, garment, prompt, person.pose,
                                         AdherenceScope::GarmentOnly);
            float adh_f = text_adherence(img, garment, prompt, person.pose,
                                         AdherenceScope::FullPrompt);
            float pd = pose_distance(img, person.pose);
            accumulate(report.overall, fid, adh_g, adh_f, pd);
            accumulate(report.per_category[static_cast<size_t>(garment.category)], fid, adh_g,
                       adh_f, pd);
            if (keep_images) keep_images->push_back(img);
        }
    }
    finalize(report.overall);
    for (auto& c : report.per_category) finalize(c);
    return report;
}

// ---- bias probe ----

std::string BiasProbeReport::to_json() const {
    json j;
    j["note"] =
        "fitting oracle is the exact renderer, so pairing structure is isolated from fitting "
        "artifacts";
    j["paired_checkpoint"] = {{"pd_to_requested_pose", paired_pd_requested},
                              {"pd_to_train_paired_pose", paired_pd_trainpaired},
                              {"mimics_train_pose", paired_mimics()}};
    j["cross_checkpoint"] = {{"pd_to_requested_pose", cross_pd_requested},
                             {"pd_to_train_paired_pose", cross_pd_trainpaired},
                             {"follows_requested_pose", cross_follows_request()}};
    j["garments_probed"] = count;
    return j.dump(2);
}

BiasProbeReport bias_probe(ModelSet& paired_models, ModelSet& cross_models,
                           const DatasetManifest& eval_set, const SamplerConfig& sampler,
                           const NoiseSchedule& sched, int max_garments,
                           std::vector<ImageGrid>* keep_images) {
    check(eval_set.mode == "paired_one_to_one",
          "bias_probe: eval manifest must be the paired dataset (it defines the train-paired "
          "poses)");
    // garment -> its training-paired person
    std::vector<SampleRequest> reqs;
    std::vector<const PersonSpec*> train_persons, req_persons;
    for (const auto& rec : eval_set.records) {
        if (static_cast<int>(reqs.size()) >= max_garments) break;
        const PersonSpec& paired_person = eval_set.persons[static_cast<size_t>(rec.person)];
        // requested pose: the next person with a different pose
        const PersonSpec* other = nullptr;
        for (size_t off = 1; off < eval_set.persons.size(); ++off) {
            const PersonSpec& cand =
                eval_set.persons[(static_cast<size_t>(rec.person) + off) % eval_set.persons.size()];
            float d = 0;
            for (size_t j = 0; j < kNumJoints; ++j)
                d += std::hypot(cand.pose.joints[j].x - paired_person.pose.joints[j].x,
                                cand.pose.joints[j].y - paired_person.pose.joints[j].y);
            if (d > 0.05f) {
                other = &cand;
                break;
            }
        }
        if (!other) continue;
        SampleRequest r;
        r.garment = eval_set.garments[static_cast<size_t>(rec.garment)];
        r.pose = other->pose;
        r.prompt = prompt_for_person(*other);
        reqs.push_back(std::move(r));
        train_persons.push_back(&paired_person);
        req_persons.push_back(other);
    }
    check(!reqs.empty(), "bias_probe: no probe-able garments in eval set");

    BiasProbeReport rep;
    rep.count = static_cast<int>(reqs.size());
    auto run_half = [&](ModelSet& models, double& pd_req, double& pd_train) {
        constexpr int kChunk = 10;
        for (size_t base = 0; base < reqs.size(); base += kChunk) {
            size_t end = std::min(reqs.size(), base + kChunk);
            std::vector<SampleRequest> chunk(reqs.begin() + static_cast<long>(base),
                                             reqs.begin() + static_cast<long>(end));
            SamplerConfig cs = sampler;
            cs.seed = splitmix64(sampler.seed ^ static_cast<uint64_t>(base));
            std::vector<ImageGrid> images = ddim_sample(models, chunk, cs, sched);
            for (size_t i = base; i < end; ++i) {
                pd_req += pose_distance(images[i - base], req_persons[i]->pose);
                pd_train += pose_distance(images[i - base], train_persons[i]->pose);
                if (keep_images) keep_images->push_back(images[i - base]);
            }
        }
        pd_req /= static_cast<double>(reqs.size());
        pd_train /= static_cast<double>(reqs.size());
    };
    run_half(paired_models, rep.paired_pd_requested, rep.paired_pd_trainpaired);
    run_half(cross_models, rep.cross_pd_requested, rep.cross_pd_trainpaired);
    return rep;
}

}  // namespace nct
