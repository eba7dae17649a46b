#include "scribbleseg/losses.hpp"

#include <string>

#include "scribbleseg/error.hpp"
#include "scribbleseg/grid.hpp"

namespace scribbleseg {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
    auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
    if (!in_unit(alpha) || !in_unit(ss_scale) || !in_unit(lambda[0]) || !in_unit(lambda[1]) ||
        !in_unit(lambda[2])) {
        throw ValidationError("alpha, lambda_2..4 and ss_scale must lie in (0, 1]");
    }
    if (!(eps > 0.0)) throw ValidationError("eps must be positive");
    if (wmap_radius < 0) throw ValidationError("wmap_radius must be non-negative");
}

std::size_t GuidedMaskBatch::reliable_count() const {
    std::size_t n = 0;
    for (auto o : indicator) n += o != 0 ? 1 : 0;
    return n;
}

namespace {

// N x H x W view of an N x 1 x H x W, N x H x W or H x W map.
torch::Tensor as_nhw(const torch::Tensor& t, const char* what) {
    if (t.dim() == 2) return t.unsqueeze(0);
    if (t.dim() == 3) return t;
    if (t.dim() == 4 && t.size(1) == 1) return t.squeeze(1);
    throw ValidationError(std::string(what) + ": expected a single-channel map");
}

void require_same_map_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (!a.sizes().equals(b.sizes())) {
        throw ValidationError(std::string(what) + ": map shapes differ");
    }
}

}  // namespace

torch::Tensor partial_ce_per_sample(const torch::Tensor& logits, const torch::Tensor& labels,
                                    double eps) {
    auto x = as_nhw(logits, "partial_ce");
    auto y = as_nhw(labels, "partial_ce labels").to(torch::kLong);
    require_same_map_shape(x, y, "partial_ce");
    auto fg = (y == kForeground).to(x.scalar_type());
    auto bg = (y == kBackground).to(x.scalar_type());
    auto count = (fg + bg).sum({1, 2});
    if ((count == 0).any().item<bool>()) {
        throw ValidationError("partial_ce: a sample has no labelled scribble pixel");
    }
    auto p = torch::clamp(torch::sigmoid(x), eps, 1.0 - eps);
    auto per_pixel = -(fg * torch::log(p) + bg * torch::log(1.0 - p));
    return per_pixel.sum({1, 2}) / count;
}

torch::Tensor partial_ce(const torch::Tensor& logits, const torch::Tensor& labels, double eps) {
    return partial_ce_per_sample(logits, labels, eps).mean();
}

torch::Tensor structure_consistency(const torch::Tensor& s1_full, const torch::Tensor& s1_down,
                                    double scale) {
    auto full = as_nhw(s1_full, "structure_consistency").unsqueeze(1);
    auto down = as_nhw(s1_down, "structure_consistency").unsqueeze(1);
    const auto h = scaled_size(full.size(2), scale);
    const auto w = scaled_size(full.size(3), scale);
    if (down.size(0) != full.size(0) || down.size(2) != h || down.size(3) != w) {
        throw ValidationError("structure_consistency: reduced-scale map is " +
                              std::to_string(down.size(2)) + "x" + std::to_string(down.size(3)) +
                              ", expected " + std::to_string(h) + "x" + std::to_string(w));
    }
    auto target = resize_bilinear(torch::sigmoid(full), h, w);
    return (torch::sigmoid(down) - target).pow(2).mean();
}

torch::Tensor boundary_weights(const torch::Tensor& mask, int radius, double gain) {
    auto m = as_nhw(mask, "boundary_weights").unsqueeze(1);
    auto pooled = F::avg_pool2d(m, F::AvgPool2dFuncOptions(2 * radius + 1)
                                       .stride(1)
                                       .padding(radius)
                                       .count_include_pad(false));
    return 1.0 + gain * torch::abs(pooled - m);
}

torch::Tensor weighted_seg_loss_per_sample(const torch::Tensor& logits, const torch::Tensor& mask,
                                           const LossWeights& weights) {
    auto x = as_nhw(logits, "weighted_seg_loss");
    auto g = as_nhw(mask, "weighted_seg_loss mask").to(x.scalar_type());
    require_same_map_shape(x, g, "weighted_seg_loss");
    if (!((g == 0) | (g == 1)).all().item<bool>()) {
        throw ValidationError("weighted_seg_loss: mask must be binary");
    }
    auto w = boundary_weights(g, weights.wmap_radius, weights.wmap_gain).squeeze(1).detach();
    auto p = torch::sigmoid(x);
    auto pc = torch::clamp(p, weights.eps, 1.0 - weights.eps);
    auto bce = -(g * torch::log(pc) + (1.0 - g) * torch::log(1.0 - pc));
    auto wbce = (w * bce).sum({1, 2}) / w.sum({1, 2});
    auto inter = (w * p * g).sum({1, 2});
    auto uni = (w * (p + g - p * g)).sum({1, 2});
    auto wiou = 1.0 - (inter + weights.eps) / (uni + weights.eps);
    return wiou + wbce;
}

torch::Tensor weighted_seg_loss(const torch::Tensor& logits, const torch::Tensor& mask,
                                const LossWeights& weights) {
    return weighted_seg_loss_per_sample(logits, mask, weights).mean();
}

torch::Tensor gated_seg_loss(const torch::Tensor& logits, const GuidedMaskBatch& guided,
                             const LossWeights& weights) {
    auto x = as_nhw(logits, "gated_seg_loss");
    if (guided.indicator.size() != static_cast<std::size_t>(x.size(0))) {
        throw ValidationError("indicator length " + std::to_string(guided.indicator.size()) +
                              " does not match batch size " + std::to_string(x.size(0)));
    }
    std::vector<std::int64_t> reliable;
    for (std::size_t k = 0; k < guided.indicator.size(); ++k) {
        if (guided.indicator[k] != 0) reliable.push_back(static_cast<std::int64_t>(k));
    }
    if (reliable.empty()) return torch::zeros({}, x.options());
    auto idx = torch::tensor(reliable, torch::kLong);
    auto masks = as_nhw(guided.masks, "guided masks");
    return weighted_seg_loss_per_sample(x.index_select(0, idx), masks.index_select(0, idx), weights)
        .mean();
}

LossBreakdown total_loss(const PredictionSet& preds, const torch::Tensor& labels,
                         const GuidedMaskBatch& guided, const LossWeights& weights) {
    if (!preds.downscaled.defined()) {
        throw ValidationError("total_loss: reduced-scale prediction is missing");
    }
    std::array<torch::Tensor, 4> pce;
    std::array<torch::Tensor, 4> seg;
    for (std::size_t i = 0; i < 4; ++i) {
        pce[i] = partial_ce(preds.side[i], labels, weights.eps);
        seg[i] = gated_seg_loss(preds.side[i], guided, weights);
    }
    auto ss = structure_consistency(preds.side[0], preds.downscaled, weights.ss_scale);

    LossBreakdown out;
    out.total = combine_losses(pce, seg, ss, weights);
    for (std::size_t i = 0; i < 4; ++i) {
        out.pce[i] = pce[i].item<double>();
        out.seg[i] = seg[i].item<double>();
    }
    out.ss = ss.item<double>();
    out.reliable_fraction = guided.indicator.empty()
                                ? 0.0
                                : static_cast<double>(guided.reliable_count()) /
                                      static_cast<double>(guided.indicator.size());
    return out;
}

}  // namespace scribbleseg
