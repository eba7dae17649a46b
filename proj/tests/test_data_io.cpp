#include "testing.hpp"

#include <fstream>
#include <random>
#include <set>

#include "scribbleseg/data_io.hpp"
#include "scribbleseg/error.hpp"

using namespace scribbleseg;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name)
        : path(fs::temp_directory_path() / ("scribbleseg_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

Image gradient_image(int h, int w) {
    Image img{h, w, std::vector<float>(static_cast<std::size_t>(h * w * 3))};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(y, x, 0) = static_cast<float>(x) / static_cast<float>(w - 1);
            img.at(y, x, 1) = static_cast<float>(y) / static_cast<float>(h - 1);
            img.at(y, x, 2) = 0.25F;
        }
    return img;
}

std::size_t count_label(const ScribbleMap& s, std::uint8_t label) {
    std::size_t n = 0;
    for (auto v : s.values()) n += v == label ? 1 : 0;
    return n;
}

}  // namespace

TEST_CASE("image round trip keeps channel order within one grey level") {
    TempDir dir("image");
    auto img = gradient_image(9, 13);
    save_image(dir.path / "a.png", img);
    auto back = load_image(dir.path / "a.png");
    REQUIRE(back.height == 9);
    REQUIRE(back.width == 13);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) CHECK(std::abs(back.rgb[i] - img.rgb[i]) <= 0.5F / 255.0F + 1e-6F);
    CHECK_THROWS_AS(load_image(dir.path / "missing.png"), DataError);
}

TEST_CASE("scribbles load from indexed and colour files") {
    TempDir dir("scribble");
    ScribbleMap s(5, 6, kUnlabeled);
    s.at(1, 1) = kForeground;
    s.at(3, 4) = kBackground;
    save_scribble(dir.path / "idx.png", s);
    CHECK(load_scribble(dir.path / "idx.png") == s);

    Image colour{5, 6, std::vector<float>(5 * 6 * 3, 0.5F)};
    colour.at(1, 1, 0) = 0.0F, colour.at(1, 1, 1) = 0.0F, colour.at(1, 1, 2) = 1.0F;
    colour.at(3, 4, 0) = 0.0F, colour.at(3, 4, 1) = 1.0F, colour.at(3, 4, 2) = 0.0F;
    save_image(dir.path / "rgb.png", colour);
    CHECK(load_scribble(dir.path / "rgb.png") == s);

    save_mask(dir.path / "bad.png", BinaryMask(5, 6, 1));
    try {
        load_scribble(dir.path / "bad.png");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("bad.png") != std::string::npos);
    }
}

TEST_CASE("masks accept 0/255 and 0/1 encodings") {
    TempDir dir("mask");
    BinaryMask m(4, 4, 0);
    m.at(2, 3) = 1;
    save_mask(dir.path / "m.png", m);
    CHECK(load_mask(dir.path / "m.png") == m);
    save_scribble(dir.path / "m01.png", m);  // stored as raw 0/1
    CHECK(load_mask(dir.path / "m01.png") == m);
}

TEST_CASE("probability maps round trip to 8 bits") {
    TempDir dir("prob");
    ProbabilityMap p(3, 3, 0.0F);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<float>(i) / 8.0F;
    save_probability(dir.path / "p.png", p);
    auto back = load_probability(dir.path / "p.png");
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(back[i] - p[i]) <= 0.5F / 255.0F + 1e-6F);
}

TEST_CASE("label resizing never invents values") {
    std::mt19937_64 rng(1);
    ScribbleMap s(17, 23, kUnlabeled);
    for (auto& v : s.values()) v = static_cast<std::uint8_t>(rng() % 3 == 0 ? (rng() % 2) + 1 : 0);
    for (auto [h, w] : {std::pair{5, 7}, std::pair{64, 64}, std::pair{31, 9}}) {
        auto r = resize_labels(s, h, w);
        CHECK(r.height() == h);
        CHECK(r.width() == w);
        for (auto v : r.values()) CHECK(v <= kBackground);
    }
    CHECK(resize_labels(s, 17, 23) == s);
}

TEST_CASE("manifest round trip and validation") {
    TempDir dir("manifest");
    std::vector<SampleRecord> recs{{"a", "images/a.png", "scribbles/a.png", "masks/a.png", "train"},
                                   {"b", "images/b.png", "", "masks/b.png", "test"}};
    write_manifest(dir.path, recs);
    auto back = read_manifest(dir.path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "a");
    CHECK(back[0].scribble == "scribbles/a.png");
    CHECK(back[1].scribble.empty());
    CHECK(back[1].split == "test");

    {
        std::ofstream out(dir.path / "manifest.csv");
        out << "id,image\n";
    }
    CHECK_THROWS_AS(read_manifest(dir.path), DataError);
    {
        std::ofstream out(dir.path / "manifest.csv");
        out << "id,image,scribble,mask,split\nx,images/x.png,,,train\n";
    }
    CHECK_THROWS_AS(read_manifest(dir.path), DataError);
    {
        std::ofstream out(dir.path / "manifest.csv");
        out << "id,image,scribble,mask,split\nx,images/x.png,s.png,,valid\n";
    }
    CHECK_THROWS_AS(read_manifest(dir.path), DataError);
}

TEST_CASE("train transform is deterministic and keeps a foreground scribble pixel") {
    auto img = gradient_image(40, 50);
    ScribbleMap s(40, 50, kUnlabeled);
    s.at(3, 47) = kForeground;  // near a corner, so many crops lose it
    for (int x = 0; x < 50; ++x) s.at(39, x) = kBackground;
    BinaryMask extra(40, 50, 0);
    extra.at(3, 47) = 1;
    std::vector<BinaryMask> extras{extra};
    TransformConfig cfg{32, 0.5, 0.9};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto a = train_transform(img, s, extras, cfg, seed);
        auto b = train_transform(img, s, extras, cfg, seed);
        CHECK(a.image == b.image);
        CHECK(a.scribble == b.scribble);
        CHECK(a.image.height == 32);
        CHECK(a.scribble.width() == 32);
        CHECK(count_label(a.scribble, kForeground) > 0);
        REQUIRE(a.extras.size() == 1);
        CHECK(a.extras[0].height() == 32);
    }
    TransformConfig bad{32, 0.9, 0.5};
    CHECK_THROWS_AS(train_transform(img, s, extras, bad, 0), ValidationError);
    CHECK_THROWS_AS(train_transform(img, ScribbleMap(4, 4), extras, cfg, 0), ValidationError);
}

TEST_CASE("full-range crop ratio reduces to a plain resize") {
    auto img = gradient_image(20, 20);
    ScribbleMap s(20, 20, kForeground);
    auto t = train_transform(img, s, {}, TransformConfig{16, 1.0, 1.0}, 3);
    CHECK(t.image == resize_image(img, 16, 16));
}

TEST_CASE("stream seeds are distinct across streams") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 20; ++a)
        for (std::uint64_t b = 0; b < 20; ++b) seen.insert(stream_seed(7, a, b));
    CHECK(seen.size() == 400);
    CHECK(stream_seed(7, 1, 2) == stream_seed(7, 1, 2));
    CHECK(stream_seed(7, 1, 2) != stream_seed(8, 1, 2));
}

TEST_CASE("thinning gives a connected one-pixel skeleton inside the mask") {
    BinaryMask m(20, 30, 0);
    for (int y = 5; y < 15; ++y)
        for (int x = 3; x < 27; ++x) m.at(y, x) = 1;
    auto t = thin(m);
    int count = 0;
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 30; ++x) {
            if (!t.at(y, x)) continue;
            ++count;
            CHECK(m.at(y, x) == 1);
        }
    CHECK(count > 10);
    CHECK(count < 60);
    // no 2x2 block survives
    for (int y = 0; y + 1 < 20; ++y)
        for (int x = 0; x + 1 < 30; ++x)
            CHECK_FALSE((t.at(y, x) && t.at(y + 1, x) && t.at(y, x + 1) && t.at(y + 1, x + 1)));
}

TEST_CASE("synthetic dataset is consistent and reproducible") {
    TempDir a("synth_a"), b("synth_b");
    SyntheticConfig cfg;
    cfg.n = 4;
    cfg.n_test = 2;
    cfg.size = 64;
    cfg.seed = 11;
    cfg.scribble_width = 3;
    auto recs = make_synthetic_dataset(cfg, a.path);
    make_synthetic_dataset(cfg, b.path);
    REQUIRE(recs.size() == 6);
    CHECK(read_manifest(a.path).size() == 6);
    int train = 0;
    for (const auto& r : recs) {
        auto s = load_sample(r, a.path);
        CHECK(s.image.height == 64);
        REQUIRE(s.gt.has_value());
        CHECK(s.image == load_sample(r, b.path).image);
        if (r.split != "train") continue;
        ++train;
        REQUIRE(s.scribble.has_value());
        CHECK(count_label(*s.scribble, kForeground) >= 10);
        CHECK(count_label(*s.scribble, kBackground) >= 10);
        for (std::size_t i = 0; i < s.gt->size(); ++i) {
            if ((*s.scribble)[i] == kForeground) CHECK((*s.gt)[i] == 1);
            if ((*s.scribble)[i] == kBackground) CHECK((*s.gt)[i] == 0);
        }
    }
    CHECK(train == 4);
    SyntheticConfig bad = cfg;
    bad.n = 0;
    CHECK_THROWS_AS(make_synthetic_dataset(bad, a.path), ValidationError);
}

TEST_CASE("overlay marks the mask boundary in red") {
    Image img{8, 8, std::vector<float>(8 * 8 * 3, 0.0F)};
    BinaryMask m(8, 8, 0);
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) m.at(y, x) = 1;
    auto o = make_overlay(img, m);
    CHECK(o.at(2, 2, 0) > 0.9F);
    CHECK(o.at(2, 2, 1) < 0.1F);
    CHECK(o.at(0, 0, 0) == 0.0F);
    CHECK_THROWS_AS(make_overlay(img, BinaryMask(4, 4)), ValidationError);
}
