#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scribbleseg/grid.hpp"

namespace scribbleseg {

namespace fs = std::filesystem;

/// RGB image, row-major HWC, values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> rgb;

    float& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    friend bool operator==(const Image&, const Image&) = default;
};

Image load_image(const fs::path& path);
void save_image(const fs::path& path, const Image& image);

/// Indexed single-channel file with values {0,1,2}, or RGB where pure blue marks
/// foreground, pure green background and any other colour is unlabelled.
ScribbleMap load_scribble(const fs::path& path);
/// Writes the indexed single-channel form.
void save_scribble(const fs::path& path, const ScribbleMap& scribble);
/// Maps pixel colours (R,G,B) to labels; throws DataError on illegal indexed values.
ScribbleMap decode_scribble_rgb(const Grid<std::uint8_t>& r, const Grid<std::uint8_t>& g,
                                const Grid<std::uint8_t>& b);

/// Binary masks stored 0/255 (values >= 128 are foreground; 0/1 files are accepted too).
BinaryMask load_mask(const fs::path& path);
void save_mask(const fs::path& path, const BinaryMask& mask);

/// Probability maps stored as 8-bit grayscale scaled to 0..255.
ProbabilityMap load_probability(const fs::path& path);
void save_probability(const fs::path& path, const ProbabilityMap& probability);

Image resize_image(const Image& image, int height, int width);
/// Nearest-neighbour resampling; never produces values absent from the input.
Grid<std::uint8_t> resize_labels(const Grid<std::uint8_t>& labels, int height, int width);
ProbabilityMap resize_probability(const ProbabilityMap& map, int height, int width);

/// Input image blended with the boundary of `mask` drawn in red.
Image make_overlay(const Image& image, const BinaryMask& mask);

struct SampleRecord {
    std::string id;
    std::string image;     // relative to the dataset root
    std::string scribble;  // may be empty for test records
    std::string mask;      // optional ground truth, evaluation only
    std::string split = "train";
};

struct Sample {
    std::string id;
    Image image;
    std::optional<ScribbleMap> scribble;
    std::optional<BinaryMask> gt;
};

/// Reads `root/manifest.csv` (columns id,image,scribble,mask,split).
std::vector<SampleRecord> read_manifest(const fs::path& root);
void write_manifest(const fs::path& root, std::span<const SampleRecord> records);
Sample load_sample(const SampleRecord& record, const fs::path& root);

struct TransformConfig {
    int size = 320;
    double crop_min = 0.75;
    double crop_max = 1.0;
};

struct TransformedSample {
    Image image;
    ScribbleMap scribble;
    std::vector<BinaryMask> extras;  // transformed alongside the scribble (nearest)
};

/// Resize to size x size, random square crop with side ratio in [crop_min, crop_max],
/// resize back. Crops that lose every foreground scribble pixel are redrawn up to
/// 10 times, then a centred crop is used. Deterministic for a given seed.
TransformedSample train_transform(const Image& image, const ScribbleMap& scribble,
                                  std::span<const BinaryMask> extras, const TransformConfig& cfg,
                                  std::uint64_t seed);

/// Deterministic sub-seed for (seed, a, b); used to give every sample its own stream.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// One-pixel-wide skeleton of a binary mask (Zhang-Suen thinning).
BinaryMask thin(const BinaryMask& mask);

struct SyntheticConfig {
    int n = 4;
    int n_test = 0;
    int size = 64;
    std::uint64_t seed = 0;
    int scribble_width = 1;  // 1 = skeleton line; larger values thicken both strokes
    double noise = 0.05;
};

/// Writes images/, scribbles/, masks/ and manifest.csv under `out_dir`. Each image
/// holds one or two ellipses; the foreground scribble is the thinned ground truth plus
/// a major-axis stroke, kept inside the eroded objects, and the background scribble is
/// a ring drawn around the objects.
std::vector<SampleRecord> make_synthetic_dataset(const SyntheticConfig& cfg, const fs::path& out_dir);

}  // namespace scribbleseg
