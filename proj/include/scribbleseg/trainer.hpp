#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "scribbleseg/config.hpp"
#include "scribbleseg/data_io.hpp"
#include "scribbleseg/decoder.hpp"
#include "scribbleseg/losses.hpp"
#include "scribbleseg/segmenter.hpp"

namespace scribbleseg {

/// Step index of the schedule peak: floor(warmup_fraction * total), kept inside
/// [1, total - 2] so both ramps have at least one step.
int warmup_peak(int total_steps, const TrainConfig& cfg);

/// Triangular schedule: lr_min at step 0, lr_max at the peak, lr_min at total - 1.
/// Throws ValidationError for a step outside [0, total_steps).
double lr_at(int step, int total_steps, const TrainConfig& cfg);

/// Loss record of one optimisation step. `pce` and `seg` are the stage-weighted sums
/// entering the objective (seg already scaled by alpha), so total = pce + seg + ss.
struct StepLog {
    int step = 0;
    int epoch = 0;
    double lr = 0.0;
    double pce = 0.0;
    double seg = 0.0;
    double ss = 0.0;
    double total = 0.0;
    double reliable_fraction = 0.0;

    friend bool operator==(const StepLog&, const StepLog&) = default;
};

std::string step_log_header();
std::string format_step_log(const StepLog& log);
void write_history(const std::filesystem::path& path, const std::vector<StepLog>& history);

/// One training batch at working resolution.
struct Batch {
    torch::Tensor images;                          // N x 3 x S x S, values in [0, 1]
    torch::Tensor labels;                          // N x S x S, scribble labels
    std::vector<ScribbleMap> scribbles;
    std::vector<std::optional<BinaryMask>> gts;    // hidden, for GT-driven stub segmenters
    std::vector<std::optional<BinaryMask>> fixed_masks;  // offline guided masks
    std::vector<int> indices;                      // dataset indices of the samples
    int epoch = 0;
};

struct FitOptions {
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> resume_from;
    std::optional<int> stop_after_epoch;  // leave early (the schedule still spans all epochs)
    bool verbose = true;                  // per-epoch progress on stderr
};

struct FitResult {
    std::vector<StepLog> history;
    std::filesystem::path checkpoint;
};

/// Collaborative training of the segmentation network with a guided segmenter.
class Trainer {
public:
    Trainer(Config config, std::vector<Sample> train_set);

    const Config& config() const noexcept { return config_; }
    SegmentationNet& net() noexcept { return net_; }
    GuidedSegmenter& segmenter() noexcept { return *segmenter_; }

    int steps_per_epoch() const;
    int total_steps() const;
    int current_step() const noexcept { return step_; }
    int current_epoch() const noexcept { return epoch_; }

    /// Transformed batch for the given dataset indices at `epoch`.
    Batch make_batch(const std::vector<int>& indices, int epoch) const;
    /// One optimisation step at the current step counter; advances the counter.
    StepLog train_step(const Batch& batch);
    /// Dataset order for an epoch.
    std::vector<int> epoch_order(int epoch) const;

    FitResult fit(const FitOptions& options);

    /// sigmoid(S1) for N x 3 x H x W images in [0, 1]; H and W must be multiples of 32.
    torch::Tensor predict(const torch::Tensor& images);
    /// sigmoid(S1) at the image's own resolution; the network runs at image_size.
    ProbabilityMap predict(const Image& image);

    void save_checkpoint(const std::filesystem::path& path);
    void load_checkpoint(const std::filesystem::path& path);

private:
    void compute_offline_masks();

    Config config_;
    std::vector<Sample> train_set_;
    SegmentationNet net_{nullptr};
    std::unique_ptr<GuidedSegmenter> segmenter_;
    std::unique_ptr<torch::optim::SGD> optimizer_;
    std::vector<std::optional<BinaryMask>> offline_masks_;  // at working resolution
    int step_ = 0;
    int epoch_ = 0;
};

/// Builds the network described by a model config.
SegmentationNet make_network(const ModelConfig& model, std::uint64_t seed);

/// Loads every training record of a dataset directory.
std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& split);

/// Converts between HWC images / grids and tensors.
torch::Tensor image_to_tensor(const Image& image);  // 3 x H x W
ProbabilityMap tensor_to_probability(const torch::Tensor& map);  // H x W or 1 x H x W

}  // namespace scribbleseg
