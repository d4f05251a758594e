#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <fstream>
#include <set>

#include "nct/semantic.hpp"
#include "nct/synthworld.hpp"

using namespace nct;

namespace {

GarmentSpec solid_top(int color) {
    GarmentSpec g;
    g.category = GarmentCategory::Top;
    g.base_color = color;
    g.pattern = GarmentPattern::Solid;
    g.length = GarmentLength::Long;
    return g;
}

}  // namespace

TEST_CASE("vocabulary file shipped with the repo matches the build") {
    std::ifstream f("data/vocab.txt");
    if (!f.is_open()) f.open("../data/vocab.txt");
    REQUIRE(f.is_open());
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(text == vocab_file_text());
}

TEST_CASE("prompt validation") {
    CHECK_THROWS_AS(parse_prompt("smiling adult"), ContractError);        // missing anchor
    CHECK_THROWS_AS(parse_prompt("clothes clothes"), ContractError);      // duplicate anchor
    try {
        parse_prompt("clothes sparkly");
        CHECK(false);
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("sparkly") != std::string::npos);
    }
    PromptTokens p = parse_prompt("clothes smiling adult bg_red standing");
    CHECK(p.tokens.size() == 5);
}

TEST_CASE("featurizer determinism and color separation") {
    ImageGrid red = render_garment_card(solid_top(0), 32);
    ImageGrid blue = render_garment_card(solid_top(2), 32);
    GarmentFeature a1 = featurize_garment(red, FeaturizerVariant::SE);
    GarmentFeature a2 = featurize_garment(red, FeaturizerVariant::SE);
    CHECK(std::memcmp(a1.v.data(), a2.v.data(), sizeof(float) * kGarmentFeatDim) == 0);
    GarmentFeature b = featurize_garment(blue, FeaturizerVariant::SE);
    CHECK(cosine(a1, b) < 0.8f);
}

TEST_CASE("featurizer rejects an empty card") {
    ImageGrid white(32, 32);
    white.fill({1.f, 1.f, 1.f});
    CHECK_THROWS_AS(featurize_garment(white, FeaturizerVariant::SE), ContractError);
}

TEST_CASE("SE_C zeroes the spatial grid dims by construction") {
    RngStream rng(3, "sec");
    for (int i = 0; i < 8; ++i) {
        GarmentSpec g = sample_garment(rng);
        ImageGrid card = render_garment_card(g, 32);
        GarmentFeature full = featurize_garment(card, FeaturizerVariant::SE);
        GarmentFeature coarse = featurize_garment(card, FeaturizerVariant::SE_C);
        for (int k = 0; k < 27; ++k) CHECK(coarse.v[k] == 0.f);
        // remaining dims proportional: cosine computable and in (0,1]
        float c = cosine(full, coarse);
        CHECK(c > 0.f);
        CHECK(c <= 1.f + 1e-6f);
    }
}

TEST_CASE("featurizer is scale consistent between 64->downsample and native 32") {
    RngStream rng(5, "scale");
    for (int i = 0; i < 20; ++i) {
        GarmentSpec g = sample_garment(rng);
        GarmentFeature at32 =
            featurize_garment(render_garment_card(g, 32), FeaturizerVariant::SE);
        GarmentFeature at64down =
            featurize_garment(downsample2x(render_garment_card(g, 64)), FeaturizerVariant::SE);
        INFO("garment ", i, " cosine ", cosine(at32, at64down));
        CHECK(cosine(at32, at64down) >= 0.98f);
    }
}

TEST_CASE("encode_condition row layout") {
    RngStream rng(7, "enc");
    ParamStore table;
    build_cond_params(table, rng);
    ImageGrid card = render_garment_card(solid_top(0), 32);
    GarmentFeature feat = featurize_garment(card, FeaturizerVariant::SE);

    PromptTokens minimal = parse_prompt("clothes");
    ConditionEmbedding e = encode_condition(minimal, feat, table);
    CHECK(e.rows.dim(0) == kCondLen);
    CHECK(e.rows.dim(1) == kCondDim);
    // two real rows: garment + the anchor token
    int real = 0;
    for (int i = 0; i < kCondLen; ++i) real += e.mask[i] > 0.5f;
    CHECK(real == 2);
    // padding rows equal the learned null embedding
    const Tensor& null_row = table.at("cond/null_row");
    for (int r = 2; r < kCondLen; ++r)
        for (int d = 0; d < kCondDim; ++d)
            CHECK(e.rows[static_cast<int64_t>(r) * kCondDim + d] == null_row[d]);
}

TEST_CASE("prompts differing in one token differ only in that row") {
    RngStream rng(9, "row");
    ParamStore table;
    build_cond_params(table, rng);
    GarmentFeature feat =
        featurize_garment(render_garment_card(solid_top(1), 32), FeaturizerVariant::SE);
    ConditionEmbedding a = encode_condition(parse_prompt("clothes smiling adult"), feat, table);
    ConditionEmbedding b = encode_condition(parse_prompt("clothes frowning adult"), feat, table);
    for (int r = 0; r < kCondLen; ++r) {
        bool differs = false;
        for (int d = 0; d < kCondDim; ++d)
            differs = differs || a.rows[static_cast<int64_t>(r) * kCondDim + d] !=
                                     b.rows[static_cast<int64_t>(r) * kCondDim + d];
        CHECK(differs == (r == 2));  // row 0 garment, row 1 "clothes", row 2 expression
    }
}

TEST_CASE("zero garment feature gives a zero garment row") {
    RngStream rng(11, "zero");
    ParamStore table;
    build_cond_params(table, rng);
    GarmentFeature zero;
    zero.v = Tensor({kGarmentFeatDim});
    ConditionEmbedding e = encode_condition(parse_prompt("clothes"), zero, table);
    for (int d = 0; d < kCondDim; ++d) CHECK(e.rows[d] == 0.f);
}

TEST_CASE("null condition: all rows equal the null embedding, mask all false") {
    RngStream rng(13, "null");
    ParamStore table;
    build_cond_params(table, rng);
    ConditionEmbedding e = null_condition(table);
    const Tensor& null_row = table.at("cond/null_row");
    for (int r = 0; r < kCondLen; ++r) {
        CHECK(e.mask[r] == 0.f);
        for (int d = 0; d < kCondDim; ++d)
            CHECK(e.rows[static_cast<int64_t>(r) * kCondDim + d] == null_row[d]);
    }
}

TEST_CASE("encode_condition is injective over the 3-token cross product") {
    RngStream rng(15, "inj");
    ParamStore table;
    build_cond_params(table, rng);
    GarmentFeature feat =
        featurize_garment(render_garment_card(solid_top(3), 32), FeaturizerVariant::SE);
    std::vector<std::string> exprs = {"smiling", "neutral", "frowning"};
    std::vector<std::string> ages = {"child", "adult", "elderly"};
    std::vector<std::string> bgs;
    for (const char* c : kBackgroundColorNames) bgs.push_back(std::string("bg_") + c);
    std::set<std::string> seen;
    for (const auto& ex : exprs)
        for (const auto& ag : ages)
            for (const auto& bg : bgs) {
                PromptTokens p;
                p.tokens = {"clothes", ex, ag, bg};
                ConditionEmbedding e = encode_condition(p, feat, table);
                std::string key(reinterpret_cast<const char*>(e.rows.data()),
                                sizeof(float) * static_cast<size_t>(e.rows.numel()));
                CHECK(seen.insert(key).second);
            }
    CHECK(seen.size() == 54);
}

TEST_CASE("unknown token in encode path names the token") {
    RngStream rng(17, "unk");
    ParamStore table;
    build_cond_params(table, rng);
    GarmentFeature feat =
        featurize_garment(render_garment_card(solid_top(0), 32), FeaturizerVariant::SE);
    PromptTokens p;
    p.tokens = {"clothes", "velvet"};
    try {
        encode_condition(p, feat, table);
        CHECK(false);
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("velvet") != std::string::npos);
    }
}
