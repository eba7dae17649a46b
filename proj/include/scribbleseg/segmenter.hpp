#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "scribbleseg/grid.hpp"
#include "scribbleseg/prompting.hpp"

namespace scribbleseg {

enum class SegmenterMode { Stub, External };

struct SegmenterConfig {
    /// "stub:oracle", "stub:box-fill", "stub:complement", "stub:noisy-oracle:<p>"
    /// or "external:<registered name>".
    std::string backend = "stub:oracle";
    int encoder_layers = 12;
    int trainable_tail_layers = 4;
    bool decoder_frozen = true;
    bool prompt_encoder_frozen = true;
    double finetune_lr = 1e-3;
    std::uint64_t seed = 0;

    SegmenterMode mode() const;
    void validate() const;
};

struct SegmenterInput {
    torch::Tensor image;                     // 3 x H x W, values in [0, 1]
    Box prompt;
    const BinaryMask* hidden_gt = nullptr;   // consulted by the GT-driven stub policies only
    std::uint64_t key = 0;                   // per-call seed for stochastic policies
};

struct SegmenterOutput {
    BinaryMask mask;        // H x W, values in {0, 1}
    torch::Tensor logits;   // 1 x H x W, pre-threshold map (mask = logits > 0)
};

/// Promptable mask generator. `generate_mask` validates the prompt, counts the call
/// and forwards to the backend.
class GuidedSegmenter {
public:
    virtual ~GuidedSegmenter() = default;

    virtual std::string name() const = 0;
    virtual SegmenterMode mode() const = 0;

    SegmenterOutput generate_mask(const SegmenterInput& input);

    /// Parameters updated by `finetune_step`; empty for stubs.
    virtual std::vector<torch::Tensor> trainable_parameters() { return {}; }
    /// Every parameter, frozen or not.
    virtual std::vector<torch::Tensor> all_parameters() { return {}; }

    /// One update of the trainable tail: partial CE between the segmenter logits and
    /// the scribbles over reliable samples. Returns the loss; 0 (and no update) for
    /// stubs or when no sample is reliable.
    virtual double finetune_step(const torch::Tensor& images, std::span<const Box> prompts,
                                 const torch::Tensor& scribbles,
                                 std::span<const std::uint8_t> indicator) {
        (void)images, (void)prompts, (void)scribbles, (void)indicator;
        return 0.0;
    }

    std::size_t invocation_count() const noexcept { return invocations_; }

protected:
    virtual SegmenterOutput do_generate(const SegmenterInput& input) = 0;

private:
    std::size_t invocations_ = 0;
};

enum class StubPolicy { BoxFill, Oracle, Complement, NoisyOracle };

/// Deterministic, weight-free segmenter.
class StubSegmenter final : public GuidedSegmenter {
public:
    explicit StubSegmenter(StubPolicy policy, double flip_probability = 0.0);

    std::string name() const override;
    SegmenterMode mode() const override { return SegmenterMode::Stub; }
    StubPolicy policy() const noexcept { return policy_; }

protected:
    SegmenterOutput do_generate(const SegmenterInput& input) override;

private:
    StubPolicy policy_;
    double flip_probability_;
};

using SegmenterFactory = std::function<std::unique_ptr<GuidedSegmenter>(const SegmenterConfig&)>;

/// External backends register under a name and are selected with "external:<name>".
/// "conv-tiny", a small trainable promptable network, is built in.
void register_segmenter(const std::string& name, SegmenterFactory factory);
std::vector<std::string> segmenter_names();

/// Builds the backend named by `config.backend`. Unknown names raise BackendError;
/// malformed stub specs raise ValidationError.
std::unique_ptr<GuidedSegmenter> make_segmenter(const SegmenterConfig& config);

}  // namespace scribbleseg
