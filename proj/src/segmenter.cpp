#include "scribbleseg/segmenter.hpp"

#include <charconv>
#include <map>
#include <mutex>
#include <random>
#include <sstream>

#include "scribbleseg/backbone.hpp"
#include "scribbleseg/decoder.hpp"
#include "scribbleseg/error.hpp"
#include "scribbleseg/losses.hpp"

namespace scribbleseg {

namespace {

constexpr std::string_view kStubPrefix = "stub:";
constexpr std::string_view kExternalPrefix = "external:";

bool starts_with(std::string_view s, std::string_view prefix) {
    return s.substr(0, prefix.size()) == prefix;
}

torch::Tensor mask_to_tensor(const BinaryMask& mask) {
    auto t = torch::empty({1, mask.height(), mask.width()}, torch::kFloat32);
    auto* out = t.data_ptr<float>();
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] != 0 ? 1.0F : 0.0F;
    return t;
}

BinaryMask threshold_logits(const torch::Tensor& logits) {
    auto l = logits.detach().to(torch::kFloat32).contiguous();
    const auto h = static_cast<int>(l.size(-2));
    const auto w = static_cast<int>(l.size(-1));
    BinaryMask mask(h, w);
    const auto* p = l.data_ptr<float>();
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = p[i] > 0.0F ? 1 : 0;
    return mask;
}

}  // namespace

SegmenterMode SegmenterConfig::mode() const {
    if (starts_with(backend, kStubPrefix)) return SegmenterMode::Stub;
    if (starts_with(backend, kExternalPrefix)) return SegmenterMode::External;
    throw ValidationError("segmenter must be 'stub:<policy>' or 'external:<name>', got '" + backend +
                          "'");
}

void SegmenterConfig::validate() const {
    (void)mode();
    if (encoder_layers < 1) throw ValidationError("segmenter encoder_layers must be >= 1");
    if (trainable_tail_layers < 0 || trainable_tail_layers > encoder_layers) {
        throw ValidationError("segmenter trainable_tail_layers must lie in [0, encoder_layers]");
    }
    if (!(finetune_lr >= 0.0)) throw ValidationError("segmenter finetune_lr must be non-negative");
}

SegmenterOutput GuidedSegmenter::generate_mask(const SegmenterInput& input) {
    if (!input.image.defined() || input.image.dim() != 3 || input.image.size(0) != 3) {
        throw ValidationError("generate_mask expects a 3 x H x W image");
    }
    const auto h = static_cast<int>(input.image.size(1));
    const auto w = static_cast<int>(input.image.size(2));
    if (!input.prompt.valid_in(w, h)) {
        std::ostringstream msg;
        msg << "prompt " << input.prompt << " is not a valid box inside " << w << "x" << h;
        throw ValidationError(msg.str());
    }
    ++invocations_;
    auto out = do_generate(input);
    if (out.mask.height() != h || out.mask.width() != w) {
        throw BackendError(name() + " returned a mask of the wrong size");
    }
    return out;
}

StubSegmenter::StubSegmenter(StubPolicy policy, double flip_probability)
    : policy_(policy), flip_probability_(flip_probability) {
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
        throw ValidationError("noisy-oracle flip probability must lie in [0, 1]");
    }
}

std::string StubSegmenter::name() const {
    switch (policy_) {
        case StubPolicy::BoxFill: return "stub:box-fill";
        case StubPolicy::Oracle: return "stub:oracle";
        case StubPolicy::Complement: return "stub:complement";
        case StubPolicy::NoisyOracle: {
            std::ostringstream s;
            s << "stub:noisy-oracle:" << flip_probability_;
            return s.str();
        }
    }
    return "stub";
}

SegmenterOutput StubSegmenter::do_generate(const SegmenterInput& input) {
    const auto h = static_cast<int>(input.image.size(1));
    const auto w = static_cast<int>(input.image.size(2));
    BinaryMask mask;
    if (policy_ == StubPolicy::BoxFill) {
        mask = box_mask(input.prompt, h, w);
    } else {
        if (input.hidden_gt == nullptr) {
            throw BackendError(name() + " needs ground-truth masks; the dataset provides none");
        }
        require_same_shape(*input.hidden_gt, BinaryMask(h, w), "stub segmenter ground truth");
        mask = *input.hidden_gt;
        if (policy_ == StubPolicy::Complement) {
            for (auto& v : mask.values()) v = v != 0 ? 0 : 1;
        } else if (policy_ == StubPolicy::NoisyOracle) {
            std::mt19937_64 rng(input.key);
            std::bernoulli_distribution flip(flip_probability_);
            for (auto& v : mask.values()) {
                if (flip(rng)) v = v != 0 ? 0 : 1;
            }
        }
    }
    return {mask, mask_to_tensor(mask) * 20.0F - 10.0F};
}

namespace {

/// Small promptable network: patch embedding, a stack of residual conv blocks
/// (the "encoder layers"), a box-prompt encoder and a light mask decoder.
class ConvTinyNetImpl : public torch::nn::Module {
public:
    ConvTinyNetImpl(int layers, std::int64_t width) {
        patch_embed = register_module(
            "patch_embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, width, 4).stride(4)));
        blocks = register_module("blocks", torch::nn::ModuleList());
        for (int i = 0; i < layers; ++i) {
            blocks->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(width, width, 3).padding(1)));
        }
        prompt_embed = register_module(
            "prompt_embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, width, 3).padding(1)));
        mask_conv = register_module(
            "mask_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, width, 3).padding(1)));
        mask_head = register_module("mask_head",
                                    torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 1, 1)));
    }

    torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& box_masks) {
        const auto h = images.size(2);
        const auto w = images.size(3);
        auto x = patch_embed(normalize_image(images, {}));
        for (const auto& block : *blocks) {
            x = x + torch::relu(block->as<torch::nn::Conv2d>()->forward(x));
        }
        auto prompt = torch::nn::functional::adaptive_avg_pool2d(
            box_masks, torch::nn::functional::AdaptiveAvgPool2dFuncOptions({x.size(2), x.size(3)}));
        auto feat = torch::relu(mask_conv(x + prompt_embed(prompt)));
        // the box itself is a strong prior; the network learns a residual around it
        return resize_bilinear(mask_head(feat), h, w) + kPromptGain * (2.0 * box_masks - 1.0);
    }

    static constexpr double kPromptGain = 2.0;
    torch::nn::Conv2d patch_embed{nullptr}, prompt_embed{nullptr}, mask_conv{nullptr},
        mask_head{nullptr};
    torch::nn::ModuleList blocks{nullptr};
};
TORCH_MODULE(ConvTinyNet);

class ConvTinySegmenter final : public GuidedSegmenter {
public:
    explicit ConvTinySegmenter(const SegmenterConfig& config)
        : config_(config), net_(config.encoder_layers, kWidth) {
        init_parameters(*net_, config.seed);
        net_->eval();
        const auto first_trainable =
            static_cast<std::size_t>(config.encoder_layers - config.trainable_tail_layers);
        for (std::size_t i = 0; i < net_->blocks->size(); ++i) {
            for (auto& p : net_->blocks[i]->parameters()) {
                p.set_requires_grad(i >= first_trainable);
                if (i >= first_trainable) trainable_.push_back(p);
            }
        }
        auto group = [&](torch::nn::Module& m, bool frozen) {
            for (auto& p : m.parameters()) {
                p.set_requires_grad(!frozen);
                if (!frozen) trainable_.push_back(p);
            }
        };
        group(*net_->patch_embed, true);
        group(*net_->prompt_embed, config.prompt_encoder_frozen);
        group(*net_->mask_conv, config.decoder_frozen);
        group(*net_->mask_head, config.decoder_frozen);
    }

    std::string name() const override { return "external:conv-tiny"; }
    SegmenterMode mode() const override { return SegmenterMode::External; }
    std::vector<torch::Tensor> trainable_parameters() override { return trainable_; }
    std::vector<torch::Tensor> all_parameters() override { return net_->parameters(); }

    double finetune_step(const torch::Tensor& images, std::span<const Box> prompts,
                         const torch::Tensor& scribbles,
                         std::span<const std::uint8_t> indicator) override {
        const auto n = images.size(0);
        if (static_cast<std::size_t>(n) != prompts.size() ||
            static_cast<std::size_t>(n) != indicator.size() || scribbles.size(0) != n) {
            throw ValidationError("finetune_step: batch, prompt and indicator sizes differ");
        }
        std::vector<std::int64_t> reliable;
        for (std::int64_t k = 0; k < n; ++k) {
            if (indicator[static_cast<std::size_t>(k)] != 0) reliable.push_back(k);
        }
        if (reliable.empty() || trainable_.empty()) return 0.0;
        auto idx = torch::tensor(reliable, torch::kLong);
        const auto h = static_cast<int>(images.size(2));
        const auto w = static_cast<int>(images.size(3));
        std::vector<torch::Tensor> boxes;
        for (auto k : reliable) {
            boxes.push_back(mask_to_tensor(box_mask(prompts[static_cast<std::size_t>(k)], h, w)));
        }
        auto logits = net_->forward(images.index_select(0, idx), torch::stack(boxes));
        auto loss = partial_ce(logits, scribbles.index_select(0, idx));
        auto grads = torch::autograd::grad({loss}, trainable_);
        torch::NoGradGuard no_grad;
        for (std::size_t i = 0; i < trainable_.size(); ++i) {
            trainable_[i].sub_(grads[i], config_.finetune_lr);
        }
        return loss.item<double>();
    }

protected:
    SegmenterOutput do_generate(const SegmenterInput& input) override {
        torch::NoGradGuard no_grad;
        const auto h = static_cast<int>(input.image.size(1));
        const auto w = static_cast<int>(input.image.size(2));
        auto box = mask_to_tensor(box_mask(input.prompt, h, w)).unsqueeze(0);
        auto logits = net_->forward(input.image.unsqueeze(0).to(torch::kFloat32), box).squeeze(0);
        return {threshold_logits(logits), logits};
    }

private:
    static constexpr std::int64_t kWidth = 8;
    SegmenterConfig config_;
    ConvTinyNet net_;
    std::vector<torch::Tensor> trainable_;
};

std::map<std::string, SegmenterFactory>& registry() {
    static std::map<std::string, SegmenterFactory> r{
        {"conv-tiny", [](const SegmenterConfig& c) -> std::unique_ptr<GuidedSegmenter> {
             return std::make_unique<ConvTinySegmenter>(c);
         }}};
    return r;
}

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::unique_ptr<GuidedSegmenter> make_stub(std::string_view spec) {
    if (spec == "box-fill") return std::make_unique<StubSegmenter>(StubPolicy::BoxFill);
    if (spec == "oracle") return std::make_unique<StubSegmenter>(StubPolicy::Oracle);
    if (spec == "complement") return std::make_unique<StubSegmenter>(StubPolicy::Complement);
    constexpr std::string_view noisy = "noisy-oracle:";
    if (starts_with(spec, noisy)) {
        auto text = spec.substr(noisy.size());
        double p = -1.0;
        auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), p);
        if (ec != std::errc() || end != text.data() + text.size()) {
            throw ValidationError("cannot parse flip probability in 'stub:" + std::string(spec) + "'");
        }
        return std::make_unique<StubSegmenter>(StubPolicy::NoisyOracle, p);
    }
    throw ValidationError("unknown stub policy '" + std::string(spec) +
                          "' (expected box-fill, oracle, complement or noisy-oracle:<p>)");
}

}  // namespace

void register_segmenter(const std::string& name, SegmenterFactory factory) {
    std::lock_guard lock(registry_mutex());
    registry()[name] = std::move(factory);
}

std::vector<std::string> segmenter_names() {
    std::lock_guard lock(registry_mutex());
    std::vector<std::string> names;
    for (const auto& [name, _] : registry()) names.push_back(name);
    return names;
}

std::unique_ptr<GuidedSegmenter> make_segmenter(const SegmenterConfig& config) {
    config.validate();
    std::string_view spec = config.backend;
    if (config.mode() == SegmenterMode::Stub) return make_stub(spec.substr(kStubPrefix.size()));
    const std::string name(spec.substr(kExternalPrefix.size()));
    SegmenterFactory factory;
    {
        std::lock_guard lock(registry_mutex());
        auto it = registry().find(name);
        if (it == registry().end()) {
            std::string known;
            for (const auto& [n, _] : registry()) known += (known.empty() ? "" : ", ") + n;
            throw BackendError("external segmenter '" + name + "' is not available (registered: " +
                               known + ")");
        }
        factory = it->second;
    }
    auto segmenter = factory(config);
    if (!segmenter) throw BackendError("external segmenter '" + name + "' failed to load");
    return segmenter;
}

}  // namespace scribbleseg
