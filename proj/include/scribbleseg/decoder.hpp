#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "scribbleseg/backbone.hpp"

namespace scribbleseg {

inline constexpr std::int64_t kDefaultDecoderWidth = 64;

/// 3x3 or 1x1 convolution, optionally followed by BatchNorm and ReLU ("Bconv").
/// Bare convolutions carry a bias; Bconv convolutions do not.
class ConvBlockImpl : public torch::nn::Module {
public:
    ConvBlockImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, bool bn_relu);
    torch::Tensor forward(const torch::Tensor& x);

    bool uses_bn_relu() const noexcept { return !bn_.is_empty(); }
    torch::nn::Conv2d conv{nullptr};

private:
    torch::nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Bilinear resize (half-pixel centres); identity when the size already matches.
torch::Tensor resize_bilinear(const torch::Tensor& x, std::int64_t height, std::int64_t width);

/// Cross-level enhancement of two adjacent encoder levels.
///   low  = Conv(f_low),  high = Conv(Up(f_high))
///   low_en  = sigmoid(Conv(high)) * low,  high_en = sigmoid(Conv(low)) * high
///   cat = Bconv([low_en, high_en]);  out = Conv([low + cat, high + cat])
/// f_high must be at half or equal resolution of f_low.
class CrossLevelEnhancementImpl : public torch::nn::Module {
public:
    CrossLevelEnhancementImpl(std::int64_t low_channels, std::int64_t high_channels,
                              std::int64_t width);
    torch::Tensor forward(const torch::Tensor& f_low, const torch::Tensor& f_high);

    ConvBlock low_conv{nullptr}, high_conv{nullptr};
    ConvBlock gate_from_high{nullptr}, gate_from_low{nullptr};
    ConvBlock fuse{nullptr}, out_conv{nullptr};
};
TORCH_MODULE(CrossLevelEnhancement);

/// Aggregates the outputs of all deeper enhancement modules at a target resolution:
///   cas = Conv1x1([Bconv(p) upsampled for p in priors]);  con = Bconv(cas)
///   out = Bconv(con * sigmoid(GAP(con)) + con)
class FeatureAggregationImpl : public torch::nn::Module {
public:
    FeatureAggregationImpl(std::int64_t num_inputs, std::int64_t width);
    torch::Tensor forward(const std::vector<torch::Tensor>& priors, std::int64_t height,
                          std::int64_t width);

    std::int64_t num_inputs() const noexcept { return static_cast<std::int64_t>(branches->size()); }

    torch::nn::ModuleList branches{nullptr};
    ConvBlock reduce{nullptr}, context{nullptr}, out_conv{nullptr};
};
TORCH_MODULE(FeatureAggregation);

struct StageOutput {
    torch::Tensor fused;   // N x D x h x w
    torch::Tensor logits;  // N x 1 x h x w
};

/// fused = Bconv(cem + fam) (or Bconv(cem) without aggregation); logits = Conv1x1(fused).
class DecodeStageImpl : public torch::nn::Module {
public:
    explicit DecodeStageImpl(std::int64_t width);
    StageOutput forward(const torch::Tensor& cem, const std::optional<torch::Tensor>& fam);

    ConvBlock fuse{nullptr}, head{nullptr};
};
TORCH_MODULE(DecodeStage);

struct DecoderTrace {
    std::array<torch::Tensor, 4> cem;                  // level resolution, index 0 = stage 1
    std::array<std::optional<torch::Tensor>, 4> fam;   // absent for stage 4
    std::array<torch::Tensor, 4> stage_logits;         // level resolution
};

/// Four enhancement modules over (F1,F2)...(F4,F5), aggregation for stages 1-3 and
/// four prediction heads. No weights are shared between stages.
class CrossLevelDecoderImpl : public torch::nn::Module {
public:
    CrossLevelDecoderImpl(const BackboneSpec& spec, std::int64_t width, std::uint64_t seed);
    DecoderTrace forward(const FeaturePyramid& pyramid);

    std::int64_t width() const noexcept { return width_; }

    std::array<CrossLevelEnhancement, 4> cems{nullptr, nullptr, nullptr, nullptr};
    std::array<FeatureAggregation, 3> fams{nullptr, nullptr, nullptr};  // stages 1..3
    std::array<DecodeStage, 4> stages{nullptr, nullptr, nullptr, nullptr};

private:
    std::int64_t width_;
};
TORCH_MODULE(CrossLevelDecoder);

/// Side outputs as logits. side[0] is S1 (the main map); all four are at input
/// resolution. `downscaled` holds S1 for the reduced-scale input when computed.
struct PredictionSet {
    static constexpr bool kLogits = true;
    std::array<torch::Tensor, 4> side;
    torch::Tensor downscaled;
};

/// Size of the reduced-scale input: floor(scale * size), at least 1.
std::int64_t scaled_size(std::int64_t size, double scale);

/// Encoder + cross-level decoder.
class SegmentationNetImpl : public torch::nn::Module {
public:
    SegmentationNetImpl(std::shared_ptr<EncoderImpl> encoder, std::int64_t width,
                        std::uint64_t seed);

    PredictionSet forward_all(const torch::Tensor& images);
    /// S1 for the input resized by `scale`. The resized input is replicate-padded up to
    /// the next multiple of 32 and the output cropped back to the resized extent.
    torch::Tensor forward_downscaled(const torch::Tensor& images, double scale);

    EncoderImpl& encoder() { return *encoder_; }
    CrossLevelDecoder& decoder() { return decoder_; }

private:
    std::shared_ptr<EncoderImpl> encoder_;
    CrossLevelDecoder decoder_{nullptr};
};
TORCH_MODULE(SegmentationNet);

}  // namespace scribbleseg
