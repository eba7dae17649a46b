#include "scribbleseg/decoder.hpp"

#include <cmath>
#include <string>

#include "scribbleseg/error.hpp"

namespace scribbleseg {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

ConvBlockImpl::ConvBlockImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, bool bn_relu) {
    conv = register_module(
        "conv", nn::Conv2d(nn::Conv2dOptions(in, out, kernel).padding(kernel / 2).bias(!bn_relu)));
    if (bn_relu) bn_ = register_module("bn", nn::BatchNorm2d(out));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
    auto y = conv->forward(x);
    if (!bn_.is_empty()) y = torch::relu(bn_->forward(y));
    return y;
}

torch::Tensor resize_bilinear(const torch::Tensor& x, std::int64_t height, std::int64_t width) {
    if (x.size(-2) == height && x.size(-1) == width) return x;
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<std::int64_t>{height, width})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

CrossLevelEnhancementImpl::CrossLevelEnhancementImpl(std::int64_t low_channels,
                                                     std::int64_t high_channels, std::int64_t width) {
    low_conv = register_module("low_conv", ConvBlock(low_channels, width, 3, false));
    high_conv = register_module("high_conv", ConvBlock(high_channels, width, 3, false));
    gate_from_high = register_module("gate_from_high", ConvBlock(width, width, 3, false));
    gate_from_low = register_module("gate_from_low", ConvBlock(width, width, 3, false));
    fuse = register_module("fuse", ConvBlock(2 * width, width, 3, true));
    out_conv = register_module("out_conv", ConvBlock(2 * width, width, 3, false));
}

torch::Tensor CrossLevelEnhancementImpl::forward(const torch::Tensor& f_low,
                                                 const torch::Tensor& f_high) {
    const auto h = f_low.size(2);
    const auto w = f_low.size(3);
    const bool same = f_high.size(2) == h && f_high.size(3) == w;
    const bool half = f_high.size(2) * 2 == h && f_high.size(3) * 2 == w;
    if (!same && !half) {
        throw ValidationError("cross-level enhancement expects the high level at half or equal "
                              "resolution, got " +
                              std::to_string(f_high.size(2)) + "x" + std::to_string(f_high.size(3)) +
                              " vs " + std::to_string(h) + "x" + std::to_string(w));
    }
    auto low = low_conv->forward(f_low);
    auto high = high_conv->forward(resize_bilinear(f_high, h, w));
    auto low_en = torch::sigmoid(gate_from_high->forward(high)) * low;
    auto high_en = torch::sigmoid(gate_from_low->forward(low)) * high;
    auto cat = fuse->forward(torch::cat({low_en, high_en}, 1));
    return out_conv->forward(torch::cat({low + cat, high + cat}, 1));
}

FeatureAggregationImpl::FeatureAggregationImpl(std::int64_t num_inputs, std::int64_t width) {
    if (num_inputs < 1) throw ValidationError("feature aggregation needs at least one input");
    branches = register_module("branches", nn::ModuleList());
    for (std::int64_t i = 0; i < num_inputs; ++i) branches->push_back(ConvBlock(width, width, 3, true));
    reduce = register_module("reduce", ConvBlock(num_inputs * width, width, 1, false));
    context = register_module("context", ConvBlock(width, width, 3, true));
    out_conv = register_module("out_conv", ConvBlock(width, width, 3, true));
}

torch::Tensor FeatureAggregationImpl::forward(const std::vector<torch::Tensor>& priors,
                                              std::int64_t height, std::int64_t width) {
    if (priors.empty()) throw ValidationError("feature aggregation called with no inputs");
    if (static_cast<std::int64_t>(priors.size()) != num_inputs()) {
        throw ValidationError("feature aggregation built for " + std::to_string(num_inputs()) +
                              " inputs, got " + std::to_string(priors.size()));
    }
    std::vector<torch::Tensor> parts;
    parts.reserve(priors.size());
    for (std::size_t i = 0; i < priors.size(); ++i) {
        auto branch = branches->ptr<ConvBlockImpl>(i);
        parts.push_back(resize_bilinear(branch->forward(priors[i]), height, width));
    }
    auto cascaded = reduce->forward(torch::cat(parts, 1));
    auto con = context->forward(cascaded);
    auto gate = torch::sigmoid(con.mean({2, 3}, /*keepdim=*/true));
    return out_conv->forward(con * gate + con);
}

DecodeStageImpl::DecodeStageImpl(std::int64_t width) {
    fuse = register_module("fuse", ConvBlock(width, width, 3, true));
    head = register_module("head", ConvBlock(width, 1, 1, false));
}

StageOutput DecodeStageImpl::forward(const torch::Tensor& cem, const std::optional<torch::Tensor>& fam) {
    torch::Tensor input = cem;
    if (fam) {
        if (!fam->sizes().equals(cem.sizes())) {
            throw ValidationError("decode stage: aggregation and enhancement shapes differ");
        }
        input = cem + *fam;
    }
    auto fused = fuse->forward(input);
    return {fused, head->forward(fused)};
}

CrossLevelDecoderImpl::CrossLevelDecoderImpl(const BackboneSpec& spec, std::int64_t width,
                                             std::uint64_t seed)
    : width_(width) {
    if (width <= 0) throw ValidationError("decoder width must be positive");
    for (std::size_t i = 0; i < 4; ++i) {
        cems[i] = register_module("cem" + std::to_string(i + 1),
                                  CrossLevelEnhancement(spec.channels[i], spec.channels[i + 1], width));
        stages[i] = register_module("stage" + std::to_string(i + 1), DecodeStage(width));
    }
    // stage i (1-based, i <= 3) aggregates the 4 - i deeper enhancement outputs
    for (std::size_t i = 0; i < 3; ++i) {
        fams[i] = register_module("fam" + std::to_string(i + 1),
                                  FeatureAggregation(static_cast<std::int64_t>(3 - i), width));
    }
    init_parameters(*this, seed);
}

DecoderTrace CrossLevelDecoderImpl::forward(const FeaturePyramid& pyramid) {
    DecoderTrace trace;
    for (std::size_t i = 0; i < 4; ++i) {
        trace.cem[i] = cems[i]->forward(pyramid.levels[i], pyramid.levels[i + 1]);
    }
    for (int stage = 3; stage >= 0; --stage) {
        const auto s = static_cast<std::size_t>(stage);
        if (stage < 3) {
            std::vector<torch::Tensor> priors(trace.cem.begin() + stage + 1, trace.cem.end());
            trace.fam[s] = fams[s]->forward(priors, trace.cem[s].size(2), trace.cem[s].size(3));
        }
        trace.stage_logits[s] = stages[s]->forward(trace.cem[s], trace.fam[s]).logits;
    }
    return trace;
}

std::int64_t scaled_size(std::int64_t size, double scale) {
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(scale * static_cast<double>(size))));
}

SegmentationNetImpl::SegmentationNetImpl(std::shared_ptr<EncoderImpl> encoder, std::int64_t width,
                                         std::uint64_t seed)
    : encoder_(std::move(encoder)) {
    if (!encoder_) throw ValidationError("segmentation network needs an encoder");
    register_module("backbone", encoder_);
    decoder_ = register_module("decoder", CrossLevelDecoder(encoder_->spec(), width, seed + 1));
}

PredictionSet SegmentationNetImpl::forward_all(const torch::Tensor& images) {
    auto pyramid = extract_features(*encoder_, images);
    auto trace = decoder_->forward(pyramid);
    PredictionSet out;
    for (std::size_t i = 0; i < 4; ++i) {
        out.side[i] = resize_bilinear(trace.stage_logits[i], pyramid.height, pyramid.width);
    }
    return out;
}

torch::Tensor SegmentationNetImpl::forward_downscaled(const torch::Tensor& images, double scale) {
    auto batch = images.dim() == 3 ? images.unsqueeze(0) : images;
    const auto h = scaled_size(batch.size(2), scale);
    const auto w = scaled_size(batch.size(3), scale);
    auto small = resize_bilinear(batch, h, w);
    const auto ph = (h + 31) / 32 * 32;
    const auto pw = (w + 31) / 32 * 32;
    if (ph != h || pw != w) {
        small = F::pad(small, F::PadFuncOptions({0, pw - w, 0, ph - h}).mode(torch::kReplicate));
    }
    auto s1 = forward_all(small).side[0];
    return s1.index({torch::indexing::Slice(), torch::indexing::Slice(),
                     torch::indexing::Slice(0, h), torch::indexing::Slice(0, w)});
}

}  // namespace scribbleseg
