#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scribbleseg/grid.hpp"

namespace scribbleseg::metrics {

struct DiceIou {
    double dice = 0.0;
    double iou = 0.0;
};

/// Binarizes `prediction` at `threshold` (>=) and compares with `gt` (nonzero = foreground).
/// Both scores are 1 when prediction and ground truth are empty.
DiceIou dice_iou(const ProbabilityMap& prediction, const BinaryMask& gt, float threshold = 0.5F);

double mae(const ProbabilityMap& prediction, const BinaryMask& gt);

/// Structure measure: alpha * object similarity + (1 - alpha) * region similarity.
/// All-background ground truth scores 1 - mean(pred); all-foreground scores mean(pred).
/// The prediction is used as-is (no min-max rescaling).
double s_measure(const ProbabilityMap& prediction, const BinaryMask& gt, double alpha = 0.5);

/// Weighted F-measure with beta^2 = 1. Returns 0 for an all-background ground truth.
double weighted_f(const ProbabilityMap& prediction, const BinaryMask& gt);

/// Enhanced-alignment measure, maximum over the 256 thresholds k/255 (pred >= t),
/// each score normalised by the pixel count.
double e_measure_max(const ProbabilityMap& prediction, const BinaryMask& gt);

struct ImageScores {
    double dice = 0, iou = 0, s_measure = 0, wf_measure = 0, e_measure_max = 0, mae = 0;
};

ImageScores score_image(const ProbabilityMap& prediction, const BinaryMask& gt);

struct MetricReport {
    double mdice = 0, miou = 0, s_measure = 0, wf_measure = 0, e_measure_max = 0, mae = 0;
    int n_images = 0;
};

using EvalPair = std::pair<ProbabilityMap, BinaryMask>;

/// Averages per-image scores in input order. Throws on an empty list.
MetricReport evaluate_dataset(std::span<const EvalPair> pairs);
MetricReport aggregate(std::span<const ImageScores> scores);

/// `name,n_images,mDice,mIoU,S_alpha,F_beta_w,E_phi_max,MAE` header plus one row,
/// values printed with six decimals.
std::string report_csv(const MetricReport& report, const std::string& name);
std::string report_markdown(const MetricReport& report, const std::string& name);

}  // namespace scribbleseg::metrics
