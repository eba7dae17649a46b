#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "scribbleseg/backbone.hpp"
#include "scribbleseg/losses.hpp"
#include "scribbleseg/prompting.hpp"
#include "scribbleseg/segmenter.hpp"

namespace scribbleseg {

enum class MaskMode { Online, Offline };

MaskMode parse_mask_mode(std::string_view text);
std::string_view to_string(MaskMode mode) noexcept;

struct TrainConfig {
    int batch_size = 12;
    int epochs = 100;
    double lr_max = 1e-2;
    double lr_min = 1e-5;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double warmup_fraction = 0.1;
    int image_size = 320;
    double crop_min = 0.75;
    double crop_max = 1.0;
    int margin_px = 25;  // at the 320-pixel reference, scaled with image_size
    double tau = 0.5;
    double pred_threshold = 0.5;
    std::uint64_t seed = 0;
    PromptSource prompt_source = PromptSource::Intersection;
    MaskMode mask_mode = MaskMode::Online;
    int collab_start_epoch = 0;
    int checkpoint_every = 10;  // epochs; 0 writes only the final checkpoint

    void validate() const;
};

struct ModelConfig {
    std::string encoder = "conv";
    std::array<std::int64_t, kNumLevels> channels = BackboneSpec::full_size().channels;
    std::int64_t decoder_width = kDefaultDecoderWidth;
    Normalization normalization{};

    void validate() const;
};

struct Config {
    TrainConfig train;
    ModelConfig model;
    LossWeights loss;
    SegmenterConfig segmenter;

    void validate() const;
};

/// One documented configuration key. The CLI exposes each key as `--key-name`
/// (underscores become hyphens); config files use the underscore form.
struct ConfigKey {
    std::string name;
    std::string help;
    std::function<std::string(const Config&)> get;
    std::function<void(Config&, const std::string&)> set;
};

const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_config_key(std::string_view name);

/// Flat JSON object whose keys are a subset of `config_keys()`. Unknown keys and
/// malformed values raise ValidationError.
Config load_config(const std::filesystem::path& path);
void apply_config_json(Config& config, const std::string& json_text);
std::string config_to_json(const Config& config);

}  // namespace scribbleseg
