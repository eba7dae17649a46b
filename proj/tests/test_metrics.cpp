#include "testing.hpp"

#include <random>

#include "oracles.hpp"
#include "scribbleseg/error.hpp"
#include "scribbleseg/metrics.hpp"

using namespace scribbleseg;
namespace M = scribbleseg::metrics;

namespace {

// ellipse-ish GT with a soft, noisy prediction around it
std::pair<ProbabilityMap, BinaryMask> random_pair(int h, int w, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    BinaryMask gt(h, w, 0);
    const double cy = u(rng) * h, cx = u(rng) * w;
    const double ry = 1.5 + u(rng) * h / 2.5, rx = 1.5 + u(rng) * w / 2.5;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dy = (y - cy) / ry, dx = (x - cx) / rx;
            gt.at(y, x) = dy * dy + dx * dx <= 1.0 ? 1 : 0;
        }
    ProbabilityMap pred(h, w, 0.0F);
    const double quality = u(rng);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const double target = gt[i] != 0 ? 1.0 : 0.0;
        pred[i] = static_cast<float>(quality * target + (1 - quality) * u(rng));
    }
    return {pred, gt};
}

}  // namespace

TEST_CASE("dice and IoU equal set counts over every 3x3 binary prediction") {
    BinaryMask gt(3, 3, 0);
    gt.at(0, 1) = gt.at(1, 1) = gt.at(1, 2) = gt.at(2, 0) = 1;
    for (int bits = 0; bits < 512; ++bits) {
        ProbabilityMap pred(3, 3, 0.0F);
        int tp = 0, fp = 0, fn = 0;
        for (int i = 0; i < 9; ++i) {
            const bool p = ((bits >> i) & 1) != 0;
            pred[static_cast<std::size_t>(i)] = p ? 1.0F : 0.0F;
            const bool g = gt[static_cast<std::size_t>(i)] != 0;
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
        }
        const auto s = M::dice_iou(pred, gt);
        CHECK(s.dice == 2.0 * tp / (2.0 * tp + fp + fn));
        CHECK(s.iou == static_cast<double>(tp) / (tp + fp + fn));
    }
}

TEST_CASE("empty prediction against empty ground truth counts as a perfect match") {
    const auto s = M::dice_iou(ProbabilityMap(4, 4, 0.0F), BinaryMask(4, 4, 0));
    CHECK(s.dice == 1.0);
    CHECK(s.iou == 1.0);
}

TEST_CASE("structure, weighted F and enhanced alignment agree with the reference formulas") {
    std::mt19937_64 rng(123);
    for (int trial = 0; trial < 150; ++trial) {
        auto [pred, gt] = random_pair(16, 16, rng);
        CHECK(M::s_measure(pred, gt) == doctest::Approx(oracle::s_measure(pred, gt)).epsilon(1e-6));
        CHECK(M::weighted_f(pred, gt) == doctest::Approx(oracle::weighted_f(pred, gt)).epsilon(1e-6));
        CHECK(M::e_measure_max(pred, gt) == doctest::Approx(oracle::e_measure_max(pred, gt)).epsilon(1e-6));
    }
}

TEST_CASE("degenerate ground truths") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0.0F, 1.0F);
    ProbabilityMap pred(8, 8, 0.0F);
    for (auto& v : pred.values()) v = u(rng);
    for (std::uint8_t fill : {std::uint8_t{0}, std::uint8_t{1}}) {
        BinaryMask gt(8, 8, fill);
        CHECK(M::s_measure(pred, gt) == doctest::Approx(oracle::s_measure(pred, gt)).epsilon(1e-9));
        CHECK(M::weighted_f(pred, gt) == doctest::Approx(oracle::weighted_f(pred, gt)).epsilon(1e-9));
        CHECK(M::e_measure_max(pred, gt) == doctest::Approx(oracle::e_measure_max(pred, gt)).epsilon(1e-9));
    }
    CHECK(M::weighted_f(pred, BinaryMask(8, 8, 0)) == 0.0);
}

TEST_CASE("perfect pair scores (1, 1, 1, 1, 1, 0)") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        auto [unused, gt] = random_pair(16, 16, rng);
        ProbabilityMap pred(16, 16, 0.0F);
        for (std::size_t i = 0; i < gt.size(); ++i) pred[i] = gt[i] != 0 ? 1.0F : 0.0F;
        const auto s = M::score_image(pred, gt);
        CHECK(s.dice == doctest::Approx(1.0));
        CHECK(s.iou == doctest::Approx(1.0));
        CHECK(s.s_measure == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(s.wf_measure == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(s.e_measure_max == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(s.mae == 0.0);
    }
}

TEST_CASE("inverted prediction gets no weighted F credit") {
    BinaryMask gt(16, 16, 0);
    for (int y = 5; y < 11; ++y)
        for (int x = 4; x < 12; ++x) gt.at(y, x) = 1;
    ProbabilityMap pred(16, 16, 0.0F);
    for (std::size_t i = 0; i < gt.size(); ++i) pred[i] = gt[i] != 0 ? 0.0F : 1.0F;
    CHECK(M::weighted_f(pred, gt) <= 1e-9);
    CHECK(M::mae(pred, gt) == 1.0);
}

TEST_CASE("dataset aggregation averages per-image scores") {
    std::mt19937_64 rng(3);
    std::vector<M::EvalPair> pairs;
    for (int i = 0; i < 5; ++i) pairs.push_back(random_pair(12, 12, rng));
    const auto report = M::evaluate_dataset(pairs);
    double dice = 0, mae = 0, s = 0;
    for (const auto& [p, g] : pairs) {
        dice += M::dice_iou(p, g).dice;
        mae += M::mae(p, g);
        s += M::s_measure(p, g);
    }
    CHECK(report.n_images == 5);
    CHECK(report.mdice == doctest::Approx(dice / 5));
    CHECK(report.mae == doctest::Approx(mae / 5));
    CHECK(report.s_measure == doctest::Approx(s / 5));
    CHECK_THROWS_AS(M::evaluate_dataset(std::vector<M::EvalPair>{}), ValidationError);
    CHECK_THROWS_AS(M::dice_iou(ProbabilityMap(3, 3), BinaryMask(3, 4)), ValidationError);
}

TEST_CASE("report formats") {
    M::MetricReport r{0.5, 0.25, 0.125, 1.0, 0.75, 0.0625, 3};
    CHECK(M::report_csv(r, "kvasir") ==
          "name,n_images,mDice,mIoU,S_alpha,F_beta_w,E_phi_max,MAE\n"
          "kvasir,3,0.500000,0.250000,0.125000,1.000000,0.750000,0.062500\n");
    const auto md = M::report_markdown(r, "kvasir");
    CHECK(md.find("| kvasir |") != std::string::npos);
    CHECK(md.find("0.062500") != std::string::npos);
}
