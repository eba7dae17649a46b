#include "scribbleseg/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "scribbleseg/error.hpp"

namespace scribbleseg {

using nlohmann::json;

MaskMode parse_mask_mode(std::string_view text) {
    if (text == "online") return MaskMode::Online;
    if (text == "offline") return MaskMode::Offline;
    throw ValidationError("mask mode must be 'online' or 'offline', got '" + std::string(text) + "'");
}

std::string_view to_string(MaskMode mode) noexcept {
    return mode == MaskMode::Online ? "online" : "offline";
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (!(lr_min > 0.0 && lr_min < lr_max)) throw ValidationError("need 0 < lr_min < lr_max");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
        throw ValidationError("warmup_fraction must lie in (0, 1)");
    }
    if (momentum < 0.0 || weight_decay < 0.0) {
        throw ValidationError("momentum and weight_decay must be non-negative");
    }
    if (image_size < 32 || image_size % 32 != 0) {
        throw ValidationError("image_size must be a positive multiple of 32");
    }
    if (!(crop_min > 0.0 && crop_min <= crop_max && crop_max <= 1.0)) {
        throw ValidationError("crop range must satisfy 0 < crop_min <= crop_max <= 1");
    }
    if (margin_px < 0) throw ValidationError("margin_px must be >= 0");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("tau must lie in [0, 1]");
    if (!(pred_threshold > 0.0 && pred_threshold < 1.0)) {
        throw ValidationError("pred_threshold must lie in (0, 1)");
    }
    if (collab_start_epoch < 0) throw ValidationError("collab_start_epoch must be >= 0");
    if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
}

void ModelConfig::validate() const {
    BackboneSpec{channels}.validate();
    if (decoder_width < 1) throw ValidationError("decoder_width must be >= 1");
    for (double s : normalization.std) {
        if (!(s > 0.0)) throw ValidationError("normalisation std must be positive");
    }
}

void Config::validate() const {
    train.validate();
    model.validate();
    loss.validate();
    segmenter.validate();
}

namespace {

std::string fmt(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return {buf, end};
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = first + text.size();
    auto [end, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || end != last) {
        throw ValidationError("invalid value '" + text + "' for " + key);
    }
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ValidationError("invalid value '" + text + "' for " + key + " (expected true or false)");
}

template <typename T, std::size_t N>
std::array<T, N> parse_list(const std::string& key, const std::string& text) {
    std::array<T, N> out{};
    std::istringstream in(text);
    std::string item;
    std::size_t i = 0;
    while (std::getline(in, item, ',')) {
        if (i == N) break;
        out[i++] = parse_number<T>(key, item);
    }
    if (i != N || in.rdbuf()->in_avail() > 0) {
        throw ValidationError(key + " needs exactly " + std::to_string(N) +
                              " comma-separated values, got '" + text + "'");
    }
    return out;
}

template <typename T, std::size_t N>
std::string join(const std::array<T, N>& values) {
    std::string s;
    for (std::size_t i = 0; i < N; ++i) {
        if (i > 0) s += ',';
        if constexpr (std::is_floating_point_v<T>) {
            s += fmt(values[i]);
        } else {
            s += std::to_string(values[i]);
        }
    }
    return s;
}

#define SCRIBBLESEG_KEY(NAME, HELP, FIELD, GET, SET)                                               \
    ConfigKey {                                                                                    \
        NAME, HELP, [](const Config& c) { return GET(c.FIELD); },                                  \
            [](Config& c, const std::string& v) { c.FIELD = SET(NAME, v); }                        \
    }

std::string get_int(auto v) { return std::to_string(v); }
std::string get_bool(bool v) { return v ? "true" : "false"; }
std::string get_str(const std::string& v) { return v; }
int set_int(const std::string& k, const std::string& v) { return parse_number<int>(k, v); }
std::uint64_t set_u64(const std::string& k, const std::string& v) {
    return parse_number<std::uint64_t>(k, v);
}
std::int64_t set_i64(const std::string& k, const std::string& v) {
    return parse_number<std::int64_t>(k, v);
}
double set_double(const std::string& k, const std::string& v) { return parse_number<double>(k, v); }
std::string set_str(const std::string&, const std::string& v) { return v; }

std::vector<ConfigKey> build_keys() {
    return {
        SCRIBBLESEG_KEY("batch_size", "samples per optimisation step", train.batch_size, get_int, set_int),
        SCRIBBLESEG_KEY("epochs", "passes over the training split", train.epochs, get_int, set_int),
        SCRIBBLESEG_KEY("lr_max", "peak learning rate of the triangular schedule", train.lr_max, fmt, set_double),
        SCRIBBLESEG_KEY("lr_min", "learning rate at both ends of the schedule", train.lr_min, fmt, set_double),
        SCRIBBLESEG_KEY("momentum", "SGD momentum", train.momentum, fmt, set_double),
        SCRIBBLESEG_KEY("weight_decay", "SGD weight decay", train.weight_decay, fmt, set_double),
        SCRIBBLESEG_KEY("warmup_fraction", "fraction of steps spent rising to lr_max", train.warmup_fraction, fmt, set_double),
        SCRIBBLESEG_KEY("image_size", "working resolution (square, multiple of 32)", train.image_size, get_int, set_int),
        SCRIBBLESEG_KEY("crop_min", "smallest random-crop side ratio", train.crop_min, fmt, set_double),
        SCRIBBLESEG_KEY("crop_max", "largest random-crop side ratio", train.crop_max, fmt, set_double),
        SCRIBBLESEG_KEY("margin_px", "box augmentation margin at 320 px, scaled to image_size", train.margin_px, get_int, set_int),
        SCRIBBLESEG_KEY("tau", "agreement threshold for keeping a guided mask", train.tau, fmt, set_double),
        SCRIBBLESEG_KEY("pred_threshold", "probability threshold for the prediction box", train.pred_threshold, fmt, set_double),
        SCRIBBLESEG_KEY("seed", "seed for initialisation, shuffling and augmentation", train.seed, get_int, set_u64),
        ConfigKey{"prompt_source", "prompt variant: intersection, box1 or box2",
                  [](const Config& c) { return std::string(to_string(c.train.prompt_source)); },
                  [](Config& c, const std::string& v) { c.train.prompt_source = parse_prompt_source(v); }},
        ConfigKey{"mask_mode", "online (regenerate every step) or offline (computed once)",
                  [](const Config& c) { return std::string(to_string(c.train.mask_mode)); },
                  [](Config& c, const std::string& v) { c.train.mask_mode = parse_mask_mode(v); }},
        SCRIBBLESEG_KEY("collab_start_epoch", "first epoch that uses guided masks", train.collab_start_epoch, get_int, set_int),
        SCRIBBLESEG_KEY("checkpoint_every", "epochs between checkpoints (0 = final only)", train.checkpoint_every, get_int, set_int),
        SCRIBBLESEG_KEY("segmenter", "stub:oracle|stub:box-fill|stub:complement|stub:noisy-oracle:<p>|external:<name>", segmenter.backend, get_str, set_str),
        SCRIBBLESEG_KEY("segmenter_encoder_layers", "encoder blocks of the external segmenter", segmenter.encoder_layers, get_int, set_int),
        SCRIBBLESEG_KEY("segmenter_trainable_tail", "trailing encoder blocks fine-tuned during training", segmenter.trainable_tail_layers, get_int, set_int),
        ConfigKey{"segmenter_decoder_frozen", "keep the segmenter mask decoder frozen",
                  [](const Config& c) { return get_bool(c.segmenter.decoder_frozen); },
                  [](Config& c, const std::string& v) { c.segmenter.decoder_frozen = parse_bool("segmenter_decoder_frozen", v); }},
        ConfigKey{"segmenter_prompt_encoder_frozen", "keep the segmenter prompt encoder frozen",
                  [](const Config& c) { return get_bool(c.segmenter.prompt_encoder_frozen); },
                  [](Config& c, const std::string& v) { c.segmenter.prompt_encoder_frozen = parse_bool("segmenter_prompt_encoder_frozen", v); }},
        SCRIBBLESEG_KEY("segmenter_lr", "learning rate of the segmenter fine-tuning step", segmenter.finetune_lr, fmt, set_double),
        SCRIBBLESEG_KEY("encoder", "registered encoder name", model.encoder, get_str, set_str),
        ConfigKey{"channels", "five encoder channel counts, comma-separated",
                  [](const Config& c) { return join(c.model.channels); },
                  [](Config& c, const std::string& v) { c.model.channels = parse_list<std::int64_t, kNumLevels>("channels", v); }},
        SCRIBBLESEG_KEY("decoder_width", "unified decoder channel width", model.decoder_width, get_int, set_i64),
        ConfigKey{"norm_mean", "per-channel RGB mean subtracted before the encoder",
                  [](const Config& c) { return join(c.model.normalization.mean); },
                  [](Config& c, const std::string& v) { c.model.normalization.mean = parse_list<double, 3>("norm_mean", v); }},
        ConfigKey{"norm_std", "per-channel RGB std dividing the encoder input",
                  [](const Config& c) { return join(c.model.normalization.std); },
                  [](Config& c, const std::string& v) { c.model.normalization.std = parse_list<double, 3>("norm_std", v); }},
        SCRIBBLESEG_KEY("alpha", "weight of the guided-mask loss", loss.alpha, fmt, set_double),
        ConfigKey{"lambda", "auxiliary stage weights for S2,S3,S4",
                  [](const Config& c) { return join(c.loss.lambda); },
                  [](Config& c, const std::string& v) { c.loss.lambda = parse_list<double, 3>("lambda", v); }},
        SCRIBBLESEG_KEY("ss_scale", "input scale of the structure-consistency branch", loss.ss_scale, fmt, set_double),
        SCRIBBLESEG_KEY("wmap_radius", "boundary weight pooling radius", loss.wmap_radius, get_int, set_int),
        SCRIBBLESEG_KEY("wmap_gain", "boundary weight gain", loss.wmap_gain, fmt, set_double),
        SCRIBBLESEG_KEY("eps", "probability clipping for logarithms", loss.eps, fmt, set_double),
    };
}

#undef SCRIBBLESEG_KEY

std::string json_value_to_text(const std::string& key, const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
    if (v.is_number_float()) return fmt(v.get<double>());
    if (v.is_array()) {
        std::string s;
        for (const auto& item : v) {
            if (!item.is_number()) throw ValidationError(key + ": list items must be numbers");
            if (!s.empty()) s += ',';
            s += item.is_number_float() ? fmt(item.get<double>()) : item.dump();
        }
        return s;
    }
    throw ValidationError("unsupported value for " + key);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = build_keys();
    return keys;
}

const ConfigKey* find_config_key(std::string_view name) {
    for (const auto& k : config_keys()) {
        if (k.name == name) return &k;
    }
    return nullptr;
}

void apply_config_json(Config& config, const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("config must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
        const auto* k = find_config_key(key);
        if (k == nullptr) throw ValidationError("unknown config key '" + key + "'");
        k->set(config, json_value_to_text(key, value));
    }
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    Config config;
    try {
        apply_config_json(config, buffer.str());
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return config;
}

std::string config_to_json(const Config& config) {
    json doc = json::object();
    for (const auto& k : config_keys()) doc[k.name] = k.get(config);
    return doc.dump(2);
}

}  // namespace scribbleseg
