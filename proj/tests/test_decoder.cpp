#include "testing.hpp"

#include <cmath>
#include <random>
#include <set>

#include "oracles.hpp"
#include "scribbleseg/decoder.hpp"
#include "scribbleseg/error.hpp"

using namespace scribbleseg;

namespace {

// centre tap 1, everything else 0, for every conv under `m`; BN reset to identity stats
void set_identity_taps(torch::nn::Module& m) {
    torch::NoGradGuard ng;
    for (auto& child : m.modules(/*include_self=*/true)) {
        if (auto* conv = child->as<torch::nn::Conv2dImpl>()) {
            conv->weight.zero_();
            const auto k = conv->weight.size(2) / 2;
            conv->weight.index_put_({torch::indexing::Slice(), torch::indexing::Slice(), k, k}, 1.0);
            if (conv->bias.defined()) conv->bias.zero_();
        } else if (auto* bn = child->as<torch::nn::BatchNorm2dImpl>()) {
            bn->weight.fill_(1.0);
            bn->bias.zero_();
            bn->running_mean.zero_();
            bn->running_var.fill_(1.0);
        }
    }
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
double relu(double v) { return v > 0 ? v : 0.0; }
const double kBnScale = 1.0 / std::sqrt(1.0 + 1e-5);

torch::Tensor scalar_map(double v) { return torch::full({1, 1, 1, 1}, v, torch::kDouble); }

SegmentationNet tiny_net(std::uint64_t seed, std::int64_t width = 8) {
    return SegmentationNet(make_tiny_backbone({4, 8, 16, 32, 64}, seed), width, seed);
}

}  // namespace

TEST_CASE("enhancement module matches a hand-computed 1x1 trace") {
    CrossLevelEnhancement cem(1, 1, 1);
    cem->to(torch::kDouble);
    set_identity_taps(*cem);
    cem->eval();
    const double a = 2.0, b = 4.0;
    const double c = relu((sigmoid(b) * a + sigmoid(a) * b) * kBnScale);
    const double expected = (a + c) + (b + c);
    auto out = cem->forward(scalar_map(a), scalar_map(b));
    CHECK(out.item<double>() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("aggregation module matches a hand-computed 1x1 trace") {
    FeatureAggregation fam(1, 1);
    fam->to(torch::kDouble);
    set_identity_taps(*fam);
    fam->eval();
    const double v = 0.7;
    const double b = relu(v * kBnScale);
    const double con = relu(b * kBnScale);
    const double expected = relu((con * sigmoid(con) + con) * kBnScale);
    auto out = fam->forward({scalar_map(v)}, 1, 1);
    CHECK(out.item<double>() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("aggregation with two inputs sums the upsampled branches") {
    FeatureAggregation fam(2, 1);
    fam->to(torch::kDouble);
    set_identity_taps(*fam);
    fam->eval();
    const double u = 0.5, v = 1.5;
    const double cas = relu(u * kBnScale) + relu(v * kBnScale);
    const double con = relu(cas * kBnScale);
    const double expected = relu((con * sigmoid(con) + con) * kBnScale);
    auto out = fam->forward({scalar_map(u), scalar_map(v)}, 1, 1);
    CHECK(out.item<double>() == doctest::Approx(expected).epsilon(1e-12));
    CHECK_THROWS_AS(fam->forward({scalar_map(u)}, 1, 1), ValidationError);
}

TEST_CASE("enhancement rejects a high level finer than the low level") {
    CrossLevelEnhancement cem(2, 2, 4);
    CHECK_THROWS_AS(cem->forward(torch::rand({1, 2, 4, 4}), torch::rand({1, 2, 8, 8})),
                    ValidationError);
    CHECK_NOTHROW(cem->forward(torch::rand({1, 2, 8, 8}), torch::rand({1, 2, 4, 4})));
    CHECK_NOTHROW(cem->forward(torch::rand({1, 2, 8, 8}), torch::rand({1, 2, 8, 8})));
}

TEST_CASE("decoder trace and side outputs have the documented shapes") {
    auto net = tiny_net(0);
    auto x = torch::rand({2, 3, 64, 64});
    auto pyr = extract_features(net->encoder(), x);
    auto trace = net->decoder()->forward(pyr);
    const std::int64_t sizes[4] = {16, 16, 8, 4};
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(trace.cem[i].sizes().vec() == std::vector<std::int64_t>{2, 8, sizes[i], sizes[i]});
        CHECK(trace.stage_logits[i].sizes().vec() == std::vector<std::int64_t>{2, 1, sizes[i], sizes[i]});
        CHECK(trace.fam[i].has_value() == (i < 3));
    }
    auto preds = net->forward_all(x);
    for (const auto& s : preds.side) CHECK(s.sizes().vec() == std::vector<std::int64_t>{2, 1, 64, 64});
}

TEST_CASE("every stage owns its own parameters") {
    auto net = tiny_net(0);
    std::set<const void*> storages;
    std::size_t count = 0;
    for (const auto& p : net->decoder()->parameters()) {
        storages.insert(p.data_ptr());
        ++count;
    }
    CHECK(storages.size() == count);
    auto named = net->named_parameters();
    for (const char* key : {"decoder.cem1.low_conv.conv.weight", "decoder.cem4.out_conv.conv.weight",
                            "decoder.fam1.reduce.conv.weight", "decoder.fam3.out_conv.bn.weight",
                            "decoder.stage4.head.conv.bias"}) {
        CHECK_MESSAGE(named.find(key) != nullptr, key);
    }
    CHECK(named.find("decoder.fam4.reduce.conv.weight") == nullptr);
    CHECK(net->decoder()->fams[0]->num_inputs() == 3);
    CHECK(net->decoder()->fams[2]->num_inputs() == 1);
}

TEST_CASE("all-zero decoder weights give all-zero logits") {
    auto net = tiny_net(0);
    {
        torch::NoGradGuard ng;
        for (auto& p : net->decoder()->parameters()) p.zero_();
    }
    auto preds = net->forward_all(torch::rand({2, 3, 32, 32}));
    for (const auto& s : preds.side) CHECK(s.abs().max().item<float>() == 0.0F);
}

TEST_CASE("downscaled forward pads to the encoder grid and crops back") {
    auto net = tiny_net(0);
    net->eval();
    torch::NoGradGuard ng;
    auto x = torch::rand({1, 3, 64, 64});
    auto small = net->forward_downscaled(x, 0.3);
    CHECK(scaled_size(64, 0.3) == 19);
    CHECK(small.sizes().vec() == std::vector<std::int64_t>{1, 1, 19, 19});
    CHECK(torch::isfinite(small).all().item<bool>());

    // when the reduced size is already on the grid nothing is padded
    auto half = net->forward_downscaled(x, 0.5);
    auto direct = net->forward_all(resize_bilinear(x, 32, 32)).side[0];
    CHECK(torch::allclose(half, direct));
}

TEST_CASE("network outputs are reproducible for a fixed seed") {
    auto x = torch::rand({1, 3, 32, 32});
    auto a = tiny_net(5);
    auto b = tiny_net(5);
    a->eval();
    b->eval();
    CHECK(torch::equal(a->forward_all(x).side[0], b->forward_all(x).side[0]));
}

TEST_CASE("autograd matches central differences through the whole network") {
    for (std::uint64_t instance = 0; instance < 3; ++instance) {
        torch::manual_seed(instance);
        auto net = SegmentationNet(make_tiny_backbone({4, 8, 16, 32, 64}, instance), 4, instance);
        net->to(torch::kDouble);
        net->train();
        auto x = torch::rand({2, 3, 32, 32}, torch::kDouble);
        auto weights = torch::randn({2, 1, 32, 32}, torch::kDouble);
        auto loss = [&] {
            auto preds = net->forward_all(x);
            auto total = torch::zeros({}, torch::kDouble);
            for (std::size_t i = 0; i < 4; ++i) total = total + (torch::sigmoid(preds.side[i]) * weights).sum();
            return total;
        };
        std::mt19937_64 rng(11 + instance);
        auto named = net->named_parameters();
        for (const char* key : {"backbone.stem.0.weight", "backbone.level5.1.weight",
                                "decoder.cem1.low_conv.conv.weight", "decoder.cem3.fuse.bn.weight",
                                "decoder.fam1.reduce.conv.bias", "decoder.fam2.context.conv.weight",
                                "decoder.stage1.head.conv.weight", "decoder.stage4.fuse.conv.weight"}) {
            auto* p = named.find(key);
            REQUIRE_MESSAGE(p != nullptr, key);
            auto res = oracle::check_gradient(loss, *p, rng);
            CHECK_MESSAGE(res.worst_rel < 1e-3, key << " worst relative error " << res.worst_rel);
        }
        auto xr = x.clone().requires_grad_(true);
        auto input_loss = [&] {
            auto preds = net->forward_all(xr);
            return (torch::sigmoid(preds.side[0]) * weights).sum();
        };
        auto res = oracle::check_gradient(input_loss, xr, rng);
        CHECK_MESSAGE(res.worst_rel < 1e-3, "input worst relative error " << res.worst_rel);
    }
}
