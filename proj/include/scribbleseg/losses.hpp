#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "scribbleseg/decoder.hpp"

namespace scribbleseg {

struct LossWeights {
    double alpha = 0.5;
    std::array<double, 3> lambda{0.8, 0.6, 0.4};  // stages 2, 3, 4
    double ss_scale = 0.3;
    int wmap_radius = 15;  // 31x31 window
    double wmap_gain = 5.0;
    double eps = 1e-7;

    void validate() const;
};

/// Guided masks (N x 1 x H x W, values in {0,1}) and per-sample reliability bits.
struct GuidedMaskBatch {
    torch::Tensor masks;
    std::vector<std::uint8_t> indicator;

    std::size_t reliable_count() const;
};

/// Per-sample partial cross-entropy over labelled scribble pixels.
/// `logits` is N x 1 x H x W (or H x W); `labels` is N x H x W (or H x W) holding
/// 0 unlabelled, 1 foreground, 2 background. Throws if a sample has no labelled pixel.
torch::Tensor partial_ce_per_sample(const torch::Tensor& logits, const torch::Tensor& labels,
                                    double eps = 1e-7);
/// Batch mean of `partial_ce_per_sample`.
torch::Tensor partial_ce(const torch::Tensor& logits, const torch::Tensor& labels, double eps = 1e-7);

/// Mean squared difference between sigmoid(s1_down) and the bilinear downsampling of
/// sigmoid(s1_full) to floor(scale * size).
torch::Tensor structure_consistency(const torch::Tensor& s1_full, const torch::Tensor& s1_down,
                                    double scale = 0.3);

/// Boundary weights 1 + gain * |meanpool(mask) - mask|; the pooling window is
/// (2r+1)^2 and averages only over in-image pixels.
torch::Tensor boundary_weights(const torch::Tensor& mask, int radius = 15, double gain = 5.0);

/// Per-sample weighted IoU + weighted BCE against binary masks.
torch::Tensor weighted_seg_loss_per_sample(const torch::Tensor& logits, const torch::Tensor& mask,
                                           const LossWeights& weights = {});
torch::Tensor weighted_seg_loss(const torch::Tensor& logits, const torch::Tensor& mask,
                                const LossWeights& weights = {});

/// Mean of the seg loss over reliable samples only; a constant zero when none are
/// reliable. Unreliable samples never enter the computation.
torch::Tensor gated_seg_loss(const torch::Tensor& logits, const GuidedMaskBatch& guided,
                             const LossWeights& weights);

/// Staged objective:
///   dom   = pce_1 + alpha * seg_1 + ss
///   aux_i = pce_i + alpha * seg_i          (i = 2, 3, 4)
///   total = dom + sum_i lambda_i * aux_i
template <typename T>
T combine_losses(const std::array<T, 4>& pce, const std::array<T, 4>& seg, const T& ss,
                 const LossWeights& w) {
    T total = pce[0] + w.alpha * seg[0] + ss;
    for (std::size_t i = 1; i < 4; ++i) total = total + w.lambda[i - 1] * (pce[i] + w.alpha * seg[i]);
    return total;
}

struct LossBreakdown {
    torch::Tensor total;
    std::array<double, 4> pce{};
    std::array<double, 4> seg{};
    double ss = 0.0;
    double reliable_fraction = 0.0;
};

/// Full objective. All side outputs must already be at label resolution and
/// `preds.downscaled` must hold S1 for the reduced-scale input.
LossBreakdown total_loss(const PredictionSet& preds, const torch::Tensor& labels,
                         const GuidedMaskBatch& guided, const LossWeights& weights);

}  // namespace scribbleseg
