#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <set>

#include "nct/image.hpp"
#include "nct/metrics.hpp"
#include "nct/pairing.hpp"
#include "nct/synthworld.hpp"

using namespace nct;

namespace {

std::string test_data_dir() {
    const char* env = std::getenv("NCT_TEST_DATA");
    return env ? env : "tests";
}

GarmentSpec solid_red_top() {
    GarmentSpec g;
    g.category = GarmentCategory::Top;
    g.base_color = 0;
    g.pattern = GarmentPattern::Solid;
    g.length = GarmentLength::Long;
    return g;
}

PersonSpec canonical_person() {
    PersonSpec p;
    p.pose = canonical_pose_standing();
    p.skin_tone = 0;
    p.head_scale = 1.0f;
    p.expression = Expression::Neutral;
    p.background_color = 2;
    return p;
}

bool same_bytes(const ImageGrid& a, const ImageGrid& b) {
    return a.h == b.h && a.w == b.w && a.to_bytes() == b.to_bytes();
}

}  // namespace

TEST_CASE("ppm round trip is lossless over quantized bytes") {
    RngStream rng(1, "ppm");
    ImageGrid img(16, 16);
    for (auto& v : img.px) v = static_cast<float>(rng.next_uniform());
    std::string path = std::filesystem::temp_directory_path() / "nct_ppm_test.ppm";
    write_ppm(path, img);
    ImageGrid back = read_ppm(path);
    CHECK(same_bytes(img, back));
}

TEST_CASE("render_person matches the checked-in golden image") {
    ImageGrid img = render_person(canonical_person(), solid_red_top(), 32);
    std::string golden_path = test_data_dir() + "/golden/person_canonical_red_top_32.ppm";
    if (!std::filesystem::exists(golden_path)) {
        // first run of a fresh checkout: write, then fail loudly so the
        // golden gets reviewed and committed
        write_ppm(golden_path, img);
        FAIL("golden was missing; wrote " << golden_path << " for review");
    }
    ImageGrid golden = read_ppm(golden_path);
    CHECK(same_bytes(img, golden));
}

TEST_CASE("golden garment card and pose map") {
    ImageGrid card = render_garment_card(solid_red_top(), 32);
    ImageGrid pose = render_pose_map(canonical_pose_standing(), 32);
    std::string cpath = test_data_dir() + "/golden/card_red_top_32.ppm";
    std::string ppath = test_data_dir() + "/golden/pose_canonical_32.ppm";
    if (!std::filesystem::exists(cpath) || !std::filesystem::exists(ppath)) {
        write_ppm(cpath, card);
        write_ppm(ppath, pose);
        FAIL("goldens were missing; wrote them for review");
    }
    CHECK(same_bytes(card, read_ppm(cpath)));
    CHECK(same_bytes(pose, read_ppm(ppath)));
}

TEST_CASE("renders are deterministic") {
    PersonSpec p = canonical_person();
    GarmentSpec g = solid_red_top();
    CHECK(same_bytes(render_person(p, g, 32), render_person(p, g, 32)));
    CHECK(same_bytes(render_garment_card(g, 64), render_garment_card(g, 64)));
    CHECK(same_bytes(render_pose_map(p.pose, 32), render_pose_map(p.pose, 32)));
}

TEST_CASE("garment masks: golden exceeds 40 px, random ones stay well nonempty") {
    auto count_mask = [](const GarmentSpec& g, const PoseSkeleton& pose) {
        auto mask = garment_mask(g, pose, 32);
        int count = 0;
        for (uint8_t m : mask) count += m;
        return count;
    };
    CHECK(count_mask(solid_red_top(), canonical_pose_standing()) > 40);
    RngStream rng(7, "mask");
    for (int i = 0; i < 20; ++i) {
        GarmentSpec g = sample_garment(rng);
        PoseSkeleton pose = sample_pose(rng);
        INFO("garment ", i, " category ", static_cast<int>(g.category));
        CHECK(count_mask(g, pose) > 24);
    }
}

TEST_CASE("invalid render size is rejected") {
    CHECK_THROWS_AS(render_person(canonical_person(), solid_red_top(), 48), ContractError);
}

TEST_CASE("pose map background is exact black") {
    ImageGrid img = render_pose_map(canonical_pose_standing(), 32);
    // origin corner is far from every bone
    Rgb c = img.get(0, 0);
    CHECK(c[0] == 0.f);
    CHECK(c[1] == 0.f);
    CHECK(c[2] == 0.f);
}

TEST_CASE("out-of-bounds joints are rejected") {
    PoseSkeleton p = canonical_pose_standing();
    p.at(Joint::LHand).x = 1.25f;
    CHECK_THROWS_AS(render_pose_map(p, 32), ContractError);
    PoseSkeleton q = canonical_pose_standing();
    q.at(Joint::Neck).y = q.at(Joint::Pelvis).y + 0.1f;
    CHECK_THROWS_AS(validate_pose(q), ContractError);
}

TEST_CASE("marker palette exclusivity") {
    // no drawing color within L-inf 0.1 of any reserved marker color
    std::vector<Rgb> palette;
    for (const Rgb& c : kGarmentPalette) palette.push_back(c);
    for (const Rgb& c : kBackgroundPalette) palette.push_back(c);
    for (const Rgb& c : kSkinTones) palette.push_back(c);
    for (const Rgb& c : kBoneColors) palette.push_back(c);
    palette.push_back(kMouthColor);
    palette.push_back({0.f, 0.f, 0.f});  // pose-map background
    palette.push_back({1.f, 1.f, 1.f});  // card background
    for (const Rgb& c : palette)
        for (const Rgb& m : kMarkerColors) CHECK(linf(c, m) > 0.1f);
    // markers are mutually far beyond twice the detector window
    for (size_t i = 0; i < kMarkerColors.size(); ++i)
        for (size_t j = i + 1; j < kMarkerColors.size(); ++j)
            CHECK(linf(kMarkerColors[i], kMarkerColors[j]) > 2 * kMarkerWindow);
}

TEST_CASE("round-trip pose fidelity on clean renders") {
    RngStream rng(11, "roundtrip");
    for (int i = 0; i < 25; ++i) {
        PersonSpec person = sample_person(rng);
        GarmentSpec g = sample_garment(rng);
        for (int size : {32, 64}) {
            ImageGrid img = render_person(person, g, size);
            float pd = pose_distance(img, person.pose);
            INFO("render ", i, " size ", size);
            CHECK(pd < 0.01f);
        }
    }
}

TEST_CASE("garment-crop purity: most mask pixels are exact garment colors") {
    RngStream rng(13, "purity");
    for (int i = 0; i < 25; ++i) {
        PersonSpec person = sample_person(rng);
        GarmentSpec g = sample_garment(rng);
        ImageGrid img = render_person(person, g, 32);
        auto mask = garment_mask(g, person.pose, 32);
        const Rgb& base = kGarmentPalette[static_cast<size_t>(g.base_color)];
        const Rgb& pat = kGarmentPalette[static_cast<size_t>(g.pattern_color)];
        int inside = 0, pure = 0;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                if (!mask[static_cast<size_t>(y) * 32 + x]) continue;
                ++inside;
                Rgb c = img.get(y, x);
                if (linf(c, base) == 0.f || (g.pattern != GarmentPattern::Solid && linf(c, pat) == 0.f))
                    ++pure;
            }
        INFO("render ", i, ": ", pure, "/", inside);
        CHECK(pure >= 0.7 * inside);
    }
}

TEST_CASE("sample_world paired mode is a bijection") {
    RngStream rng(17, "world");
    DatasetManifest m = sample_world(rng, 100, 100, "paired_one_to_one");
    validate_manifest(m);
    CHECK(m.records.size() == 100);
    std::set<int> persons, garments;
    for (const auto& r : m.records) {
        persons.insert(r.person);
        garments.insert(r.garment);
    }
    CHECK(persons.size() == 100);
    CHECK(garments.size() == 100);
}

TEST_CASE("sample_world is deterministic for a fixed seed") {
    RngStream a(21, "w"), b(21, "w");
    DatasetManifest ma = sample_world(a, 30, 30, "paired_one_to_one");
    DatasetManifest mb = sample_world(b, 30, 30, "paired_one_to_one");
    CHECK(manifest_to_json(ma) == manifest_to_json(mb));
}

TEST_CASE("attribute marginals are near uniform") {
    RngStream rng(23, "marginals");
    DatasetManifest m = sample_world(rng, 4000, 4000, "paired_one_to_one");
    std::array<int, 8> colors{};
    for (const auto& g : m.garments) colors[static_cast<size_t>(g.base_color)]++;
    for (int c = 0; c < 8; ++c) {
        INFO("color ", c, " count ", colors[static_cast<size_t>(c)]);
        CHECK(colors[static_cast<size_t>(c)] > 4000 / 8 * 0.7);
        CHECK(colors[static_cast<size_t>(c)] < 4000 / 8 * 1.3);
    }
}

TEST_CASE("split tags are 90/10") {
    RngStream rng(27, "split");
    DatasetManifest m = sample_world(rng, 200, 200, "paired_one_to_one");
    int train = 0;
    for (const auto& r : m.records) train += r.split == "train";
    CHECK(train == 180);
}

TEST_CASE("manifest json round trip") {
    RngStream rng(29, "json");
    DatasetManifest m = sample_world(rng, 12, 10, "paired_one_to_one");
    DatasetManifest back = manifest_from_json(manifest_to_json(m));
    CHECK(manifest_to_json(back) == manifest_to_json(m));
}

TEST_CASE("cross_pair: k=0 empty, k over catalog rejected, coverage at k=5") {
    RngStream rng(31, "cp");
    DatasetManifest paired = sample_world(rng, 100, 100, "paired_one_to_one");
    RngStream r0(1, "k0");
    CHECK(cross_pair(paired, 0, r0).records.empty());
    RngStream r1(1, "kbig");
    CHECK_THROWS_AS(cross_pair(paired, 101, r1), ContractError);
    RngStream r2(1, "k5");
    DatasetManifest crossed = cross_pair(paired, 5, r2);
    CHECK(crossed.mode == "cross_paired");
    CHECK(crossed.records.size() == 500);
    // no duplicate garment within one person's block
    std::map<int, std::set<int>> per_person;
    for (const auto& r : crossed.records) CHECK(per_person[r.person].insert(r.garment).second);
    // nearly every garment reaches at least 2 distinct persons
    std::map<int, std::set<int>> per_garment;
    for (const auto& r : crossed.records) per_garment[r.garment].insert(r.person);
    int ok = 0;
    for (int g = 0; g < 100; ++g)
        if (per_garment[g].size() >= 2) ++ok;
    CHECK(ok >= 90);
}

TEST_CASE("pose style classifier separates the two canonical families") {
    CHECK(!is_sitting(canonical_pose_standing()));
    CHECK(is_sitting(canonical_pose_sitting()));
}

TEST_CASE("mirrored canonical pose is far in PD terms") {
    PersonSpec p = canonical_person();
    ImageGrid img = render_person(p, solid_red_top(), 32);
    float pd = pose_distance(img, mirrored(p.pose));
    CHECK(pd > 0.05f);
}
