#include "nct/semantic.hpp"

#include <algorithm>
#include <cmath>

#include "nct/common.hpp"
#include "nct/tape.hpp"

namespace nct {

namespace {

std::vector<std::string> build_vocab() {
    std::vector<std::string> v = {"clothes", "smiling", "neutral", "frowning",
                                  "child",   "adult",   "elderly"};
    for (const char* c : kBackgroundColorNames) v.push_back(std::string("bg_") + c);
    v.push_back("standing");
    v.push_back("sitting");
    for (const char* c : kGarmentColorNames) v.push_back(std::string("col_") + c);
    for (const char* p : {"solid", "hstripes", "dots"}) v.push_back(std::string("pat_") + p);
    for (const char* l : {"short", "long"}) v.push_back(std::string("len_") + l);
    for (const char* c : {"top", "trousers", "dress"}) v.push_back(std::string("cat_") + c);
    return v;
}

}  // namespace

const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> v = build_vocab();
    return v;
}

int vocab_index(const std::string& token) {
    const auto& v = vocabulary();
    for (size_t i = 0; i < v.size(); ++i)
        if (v[i] == token) return static_cast<int>(i);
    throw ContractError("unknown prompt token '" + token + "'");
}

std::string vocab_file_text() {
    std::string out = "nct-vocab v1\n";
    for (const auto& t : vocabulary()) out += t + "\n";
    return out;
}

void validate_prompt(const PromptTokens& p) {
    int anchors = 0;
    for (const auto& t : p.tokens) {
        vocab_index(t);
        if (t == "clothes") ++anchors;
    }
    check(anchors == 1, "prompt must contain 'clothes' exactly once, found " +
                            std::to_string(anchors));
}

PromptTokens parse_prompt(const std::string& s) {
    PromptTokens p;
    std::string cur;
    for (char c : s + " ") {
        if (c == ' ' || c == '\t') {
            if (!cur.empty()) p.tokens.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    validate_prompt(p);
    return p;
}

PromptTokens prompt_for_person(const PersonSpec& person) {
    PromptTokens p;
    p.tokens.push_back("clothes");
    switch (person.expression) {
        case Expression::Smile: p.tokens.push_back("smiling"); break;
        case Expression::Neutral: p.tokens.push_back("neutral"); break;
        case Expression::Frown: p.tokens.push_back("frowning"); break;
    }
    if (person.head_scale == kHeadScales[0]) p.tokens.push_back("child");
    else if (person.head_scale == kHeadScales[2]) p.tokens.push_back("elderly");
    else p.tokens.push_back("adult");
    p.tokens.push_back(std::string("bg_") +
                       kBackgroundColorNames[static_cast<size_t>(person.background_color)]);
    p.tokens.push_back(is_sitting(person.pose) ? "sitting" : "standing");
    return p;
}

std::vector<std::string> garment_attribute_tokens(const GarmentSpec& g) {
    static const char* pat[] = {"solid", "hstripes", "dots"};
    static const char* len[] = {"short", "long"};
    static const char* cat[] = {"top", "trousers", "dress"};
    return {std::string("col_") + kGarmentColorNames[static_cast<size_t>(g.base_color)],
            std::string("pat_") + pat[static_cast<int>(g.pattern)],
            std::string("len_") + len[static_cast<int>(g.length)],
            std::string("cat_") + cat[static_cast<int>(g.category)]};
}

// ---- featurizer ----

namespace {

float luminance(const float* p) { return (p[0] + p[1] + p[2]) / 3.f; }

// Hue in [0,360); callers skip near-achromatic pixels.
float hue_of(const float* p) {
    float mx = std::max({p[0], p[1], p[2]}), mn = std::min({p[0], p[1], p[2]});
    float c = mx - mn;
    float h;
    if (mx == p[0]) h = std::fmod((p[1] - p[2]) / c, 6.f);
    else if (mx == p[1]) h = (p[2] - p[0]) / c + 2.f;
    else h = (p[0] - p[1]) / c + 4.f;
    h *= 60.f;
    if (h < 0) h += 360.f;
    return h;
}

GarmentFeature descriptor(const ImageGrid& img, const std::vector<uint8_t>& fg, int y0, int x0,
                          int y1, int x1, FeaturizerVariant variant) {
    // fg is an h*w mask; [y0,y1]x[x0,x1] is the crop box (inclusive).
    Tensor v({kGarmentFeatDim});
    int bh = y1 - y0 + 1, bw = x1 - x0 + 1;
    // 3x3 grid of mean RGB over foreground
    for (int gy = 0; gy < 3; ++gy)
        for (int gx = 0; gx < 3; ++gx) {
            int ry0 = y0 + gy * bh / 3, ry1 = y0 + (gy + 1) * bh / 3 - 1;
            int rx0 = x0 + gx * bw / 3, rx1 = x0 + (gx + 1) * bw / 3 - 1;
            double acc[3] = {0, 0, 0};
            int n = 0;
            for (int y = ry0; y <= ry1; ++y)
                for (int x = rx0; x <= rx1; ++x) {
                    if (!fg[static_cast<size_t>(y) * img.w + x]) continue;
                    const float* p = img.at(y, x);
                    acc[0] += p[0];
                    acc[1] += p[1];
                    acc[2] += p[2];
                    ++n;
                }
            for (int c = 0; c < 3; ++c)
                v[(gy * 3 + gx) * 3 + c] = n ? static_cast<float>(acc[c] / n) : 0.f;
        }
    // 8-bin hue histogram over chromatic foreground, normalized by all fg
    int n_fg = 0;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            if (!fg[static_cast<size_t>(y) * img.w + x]) continue;
            ++n_fg;
            const float* p = img.at(y, x);
            float mx = std::max({p[0], p[1], p[2]}), mn = std::min({p[0], p[1], p[2]});
            if (mx - mn < 0.05f) continue;
            int bin = std::min(7, static_cast<int>(hue_of(p) / 45.f));
            v[27 + bin] += 1.f;
        }
    if (n_fg > 0)
        for (int i = 0; i < 8; ++i) v[27 + i] /= static_cast<float>(n_fg);
    // pattern stats over in-foreground neighbour pairs
    double gx_acc = 0, gy_acc = 0;
    int gx_n = 0, gy_n = 0;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            if (!fg[static_cast<size_t>(y) * img.w + x]) continue;
            if (x + 1 <= x1 && fg[static_cast<size_t>(y) * img.w + x + 1]) {
                gx_acc += std::abs(luminance(img.at(y, x + 1)) - luminance(img.at(y, x)));
                ++gx_n;
            }
            if (y + 1 <= y1 && fg[static_cast<size_t>(y + 1) * img.w + x]) {
                gy_acc += std::abs(luminance(img.at(y + 1, x)) - luminance(img.at(y, x)));
                ++gy_n;
            }
        }
    v[35] = gx_n ? static_cast<float>(gx_acc / gx_n) : 0.f;
    v[36] = gy_n ? static_cast<float>(gy_acc / gy_n) : 0.f;
    v[37] = static_cast<float>(n_fg) / (static_cast<float>(img.h) * img.w);
    v[38] = 0.3f * static_cast<float>(bh) / static_cast<float>(bw);
    // dims 39..42 reserved as zero to keep the 43-dim layout stable
    if (variant == FeaturizerVariant::SE_C)
        for (int i = 0; i < 27; ++i) v[i] = 0.f;
    double norm = 0;
    for (int i = 0; i < kGarmentFeatDim; ++i) norm += static_cast<double>(v[i]) * v[i];
    norm = std::sqrt(norm);
    check(norm > 0, "garment featurizer: zero descriptor");
    for (int i = 0; i < kGarmentFeatDim; ++i) v[i] = static_cast<float>(v[i] / norm);
    GarmentFeature f;
    f.v = v;
    return f;
}

}  // namespace

GarmentFeature featurize_garment(const ImageGrid& card, FeaturizerVariant variant) {
    std::vector<uint8_t> fg(static_cast<size_t>(card.h) * card.w, 0);
    int y0 = card.h, x0 = card.w, y1 = -1, x1 = -1;
    for (int y = 0; y < card.h; ++y)
        for (int x = 0; x < card.w; ++x) {
            const float* p = card.at(y, x);
            float d = std::max({std::abs(p[0] - 1.f), std::abs(p[1] - 1.f), std::abs(p[2] - 1.f)});
            if (d > 0.1f) {
                fg[static_cast<size_t>(y) * card.w + x] = 1;
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
        }
    if (y1 < 0) throw ContractError("featurize_garment: card has no non-white foreground");
    return descriptor(card, fg, y0, x0, y1, x1, variant);
}

GarmentFeature featurize_region(const ImageGrid& img, const std::vector<uint8_t>& mask, int y0,
                                int x0, int y1, int x1, FeaturizerVariant variant) {
    check(y0 >= 0 && x0 >= 0 && y1 < img.h && x1 < img.w && y0 <= y1 && x0 <= x1,
          "featurize_region: bad crop box");
    bool any = false;
    for (int y = y0; y <= y1 && !any; ++y)
        for (int x = x0; x <= x1 && !any; ++x) any = mask[static_cast<size_t>(y) * img.w + x];
    if (!any) throw ContractError("featurize_region: empty mask in crop");
    return descriptor(img, mask, y0, x0, y1, x1, variant);
}

float cosine(const GarmentFeature& a, const GarmentFeature& b) {
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < kGarmentFeatDim; ++i) {
        dot += static_cast<double>(a.v[i]) * b.v[i];
        na += static_cast<double>(a.v[i]) * a.v[i];
        nb += static_cast<double>(b.v[i]) * b.v[i];
    }
    return static_cast<float>(dot / (std::sqrt(na) * std::sqrt(nb)));
}

// ---- condition params + single-record encoding ----

void build_cond_params(ParamStore& store, RngStream& rng) {
    int v = static_cast<int>(vocabulary().size());
    store.add("cond/token_table", kern::scale(rng.normal<float>({v, kCondDim}), 0.5f));
    store.add("cond/garment_proj",
              kern::scale(rng.normal<float>({kGarmentFeatDim, kCondDim}),
                          1.f / std::sqrt(static_cast<float>(kGarmentFeatDim))));
    store.add("cond/null_row", kern::scale(rng.normal<float>({kCondDim}), 0.5f));
}

ConditionEmbedding encode_condition(const PromptTokens& prompt, const GarmentFeature& feat,
                                    const ParamStore& table) {
    Tape tape;
    ParamStore& mut = const_cast<ParamStore&>(table);
    TapeParams<float> params(tape, mut);
    Tensor feats = feat.v.reshaped({1, kGarmentFeatDim});
    auto cond = encode_cond_batch<float>(tape, params, {prompt}, feats, {0});
    ConditionEmbedding out;
    out.rows = cond.rows.val().clone().reshaped({kCondLen, kCondDim});
    out.mask = cond.mask.reshaped({kCondLen});
    return out;
}

ConditionEmbedding null_condition(const ParamStore& table) {
    const Tensor& null_row = table.at("cond/null_row");
    ConditionEmbedding out;
    out.rows = Tensor({kCondLen, kCondDim});
    out.mask = Tensor({kCondLen});
    for (int r = 0; r < kCondLen; ++r)
        for (int d = 0; d < kCondDim; ++d)
            out.rows[static_cast<int64_t>(r) * kCondDim + d] = null_row[d];
    return out;
}

}  // namespace nct
