#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace scribbleseg {

inline constexpr int kNumLevels = 5;

/// Channel/stride contract of the five-level feature extractor.
/// Level 1 and level 2 both sit at stride 4; level i > 1 sits at stride 2^i.
struct BackboneSpec {
    std::array<std::int64_t, kNumLevels> channels{64, 256, 512, 1024, 2048};
    static constexpr std::array<std::int64_t, kNumLevels> strides{4, 4, 8, 16, 32};

    static BackboneSpec full_size() { return {}; }
    static BackboneSpec tiny() { return {{4, 8, 16, 32, 64}}; }
    void validate() const;
};

/// Five encoder feature maps; level i has shape N x channels[i] x H/stride_i x W/stride_i.
struct FeaturePyramid {
    std::array<torch::Tensor, kNumLevels> levels;
    std::int64_t height = 0;  // source image size in pixels
    std::int64_t width = 0;
};

/// Per-channel mean/std normalisation applied to [0,1] RGB images before the encoder.
struct Normalization {
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};
};

torch::Tensor normalize_image(const torch::Tensor& image, const Normalization& norm);

/// Throws SizingError unless both dimensions are positive multiples of 32.
void require_encoder_size(std::int64_t height, std::int64_t width);

/// Multi-level feature extractor. Implementations return the raw level tensors;
/// `extract_features` validates them against the spec.
class EncoderImpl : public torch::nn::Module {
public:
    explicit EncoderImpl(BackboneSpec spec) : spec_(spec) { spec_.validate(); }
    const BackboneSpec& spec() const noexcept { return spec_; }
    virtual std::array<torch::Tensor, kNumLevels> encode(const torch::Tensor& images) = 0;

private:
    BackboneSpec spec_;
};

/// Plain strided conv encoder (conv -> BN -> ReLU stages) honouring any BackboneSpec.
/// Small channel lists give the desk-scale encoder; the default channel list gives the
/// full-size channel layout.
class ConvEncoderImpl : public EncoderImpl {
public:
    ConvEncoderImpl(BackboneSpec spec, std::uint64_t seed);
    std::array<torch::Tensor, kNumLevels> encode(const torch::Tensor& images) override;

private:
    torch::nn::Sequential stem_{nullptr};
    std::array<torch::nn::Sequential, kNumLevels> levels_{nullptr, nullptr, nullptr, nullptr,
                                                          nullptr};
};

/// Runs the encoder on a 3xHxW or Nx3xHxW tensor and checks the pyramid contract.
FeaturePyramid extract_features(EncoderImpl& encoder, const torch::Tensor& images);

std::shared_ptr<ConvEncoderImpl> make_tiny_backbone(const std::array<std::int64_t, kNumLevels>& channels,
                                                    std::uint64_t seed);

using EncoderFactory =
    std::function<std::shared_ptr<EncoderImpl>(const BackboneSpec&, std::uint64_t seed)>;

/// Named encoder registry. "conv" is built in; heavier pretrained encoders can be
/// registered by the embedding application under their own name.
void register_encoder(const std::string& name, EncoderFactory factory);
std::shared_ptr<EncoderImpl> make_encoder(const std::string& name, const BackboneSpec& spec,
                                          std::uint64_t seed);
std::vector<std::string> encoder_names();

/// Deterministic He-uniform initialisation of every conv/BN parameter in `module`
/// from a private generator, independent of the global torch RNG.
void init_parameters(torch::nn::Module& module, std::uint64_t seed);

}  // namespace scribbleseg
