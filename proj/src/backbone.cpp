#include "scribbleseg/backbone.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <map>
#include <mutex>

#include "scribbleseg/error.hpp"

namespace scribbleseg {

namespace nn = torch::nn;

void BackboneSpec::validate() const {
    for (auto c : channels) {
        if (c <= 0) throw ValidationError("backbone channels must all be positive");
    }
}

torch::Tensor normalize_image(const torch::Tensor& image, const Normalization& norm) {
    const auto opts = image.options();
    auto mean = torch::tensor(std::vector<double>(norm.mean.begin(), norm.mean.end()), opts);
    auto std = torch::tensor(std::vector<double>(norm.std.begin(), norm.std.end()), opts);
    const auto shape = image.dim() == 4 ? std::vector<std::int64_t>{1, 3, 1, 1}
                                        : std::vector<std::int64_t>{3, 1, 1};
    return (image - mean.view(shape)) / std.view(shape);
}

void require_encoder_size(std::int64_t height, std::int64_t width) {
    if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0) {
        throw SizingError("input " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not a multiple of 32 in both dimensions");
    }
}

namespace {

nn::Sequential conv_bn_relu(std::int64_t in, std::int64_t out, std::int64_t stride) {
    return nn::Sequential(
        nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)),
        nn::BatchNorm2d(out), nn::ReLU());
}

}  // namespace

ConvEncoderImpl::ConvEncoderImpl(BackboneSpec spec, std::uint64_t seed) : EncoderImpl(spec) {
    const auto& c = this->spec().channels;
    stem_ = register_module("stem", conv_bn_relu(3, c[0], 2));
    levels_[0] = register_module("level1", conv_bn_relu(c[0], c[0], 2));
    levels_[1] = register_module("level2", conv_bn_relu(c[0], c[1], 1));
    levels_[2] = register_module("level3", conv_bn_relu(c[1], c[2], 2));
    levels_[3] = register_module("level4", conv_bn_relu(c[2], c[3], 2));
    levels_[4] = register_module("level5", conv_bn_relu(c[3], c[4], 2));
    init_parameters(*this, seed);
}

std::array<torch::Tensor, kNumLevels> ConvEncoderImpl::encode(const torch::Tensor& images) {
    std::array<torch::Tensor, kNumLevels> out;
    auto x = stem_->forward(images);
    for (int i = 0; i < kNumLevels; ++i) {
        x = levels_[static_cast<std::size_t>(i)]->forward(x);
        out[static_cast<std::size_t>(i)] = x;
    }
    return out;
}

FeaturePyramid extract_features(EncoderImpl& encoder, const torch::Tensor& images) {
    auto batch = images.dim() == 3 ? images.unsqueeze(0) : images;
    if (batch.dim() != 4) throw ValidationError("encoder input must be 3xHxW or Nx3xHxW");
    if (batch.size(1) != 3) {
        throw ValidationError("encoder input must have 3 channels, got " +
                              std::to_string(batch.size(1)));
    }
    const auto h = batch.size(2);
    const auto w = batch.size(3);
    require_encoder_size(h, w);
    FeaturePyramid pyramid{encoder.encode(batch), h, w};
    const auto& spec = encoder.spec();
    for (std::size_t i = 0; i < kNumLevels; ++i) {
        const auto& t = pyramid.levels[i];
        const auto s = BackboneSpec::strides[i];
        if (t.dim() != 4 || t.size(0) != batch.size(0) || t.size(1) != spec.channels[i] ||
            t.size(2) != h / s || t.size(3) != w / s) {
            throw ValidationError("encoder level " + std::to_string(i + 1) +
                                  " violates the pyramid contract");
        }
    }
    return pyramid;
}

std::shared_ptr<ConvEncoderImpl> make_tiny_backbone(const std::array<std::int64_t, kNumLevels>& channels,
                                                    std::uint64_t seed) {
    return std::make_shared<ConvEncoderImpl>(BackboneSpec{channels}, seed);
}

namespace {

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::map<std::string, EncoderFactory>& registry() {
    static std::map<std::string, EncoderFactory> r{
        {"conv", [](const BackboneSpec& spec, std::uint64_t seed) -> std::shared_ptr<EncoderImpl> {
             return std::make_shared<ConvEncoderImpl>(spec, seed);
         }}};
    return r;
}

}  // namespace

void register_encoder(const std::string& name, EncoderFactory factory) {
    std::lock_guard lock(registry_mutex());
    registry()[name] = std::move(factory);
}

std::shared_ptr<EncoderImpl> make_encoder(const std::string& name, const BackboneSpec& spec,
                                          std::uint64_t seed) {
    EncoderFactory factory;
    {
        std::lock_guard lock(registry_mutex());
        auto it = registry().find(name);
        if (it == registry().end()) throw ValidationError("unknown backbone '" + name + "'");
        factory = it->second;
    }
    return factory(spec, seed);
}

std::vector<std::string> encoder_names() {
    std::lock_guard lock(registry_mutex());
    std::vector<std::string> names;
    for (const auto& [name, _] : registry()) names.push_back(name);
    return names;
}

void init_parameters(torch::nn::Module& module, std::uint64_t seed) {
    torch::NoGradGuard no_grad;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    for (auto& child : module.modules(/*include_self=*/false)) {
        if (auto* conv = child->as<nn::Conv2d>()) {
            auto& weight = conv->weight;
            const double fan_in = static_cast<double>(weight.size(1) * weight.size(2) * weight.size(3));
            const double bound = std::sqrt(6.0 / fan_in);
            weight.uniform_(-bound, bound, gen);
            if (conv->bias.defined()) conv->bias.zero_();
        } else if (auto* bn = child->as<nn::BatchNorm2d>()) {
            bn->weight.fill_(1.0);
            bn->bias.zero_();
            bn->running_mean.zero_();
            bn->running_var.fill_(1.0);
        }
    }
}

}  // namespace scribbleseg
