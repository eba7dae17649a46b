#include "scribbleseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "scribbleseg/error.hpp"
#include "scribbleseg/prompting.hpp"

namespace scribbleseg {

int warmup_peak(int total_steps, const TrainConfig& cfg) {
    const int peak = static_cast<int>(std::floor(cfg.warmup_fraction * total_steps));
    return std::clamp(peak, 1, std::max(1, total_steps - 2));
}

double lr_at(int step, int total_steps, const TrainConfig& cfg) {
    if (total_steps < 1 || step < 0 || step >= total_steps) {
        throw ValidationError("lr_at: step " + std::to_string(step) + " outside [0, " +
                              std::to_string(total_steps) + ")");
    }
    if (total_steps <= 2) return cfg.lr_min;
    const int peak = warmup_peak(total_steps, cfg);
    const double span = cfg.lr_max - cfg.lr_min;
    if (step <= peak) return cfg.lr_min + span * static_cast<double>(step) / peak;
    return cfg.lr_max - span * static_cast<double>(step - peak) / (total_steps - 1 - peak);
}

std::string step_log_header() { return "step,epoch,lr,pce,seg,ss,total,reliable_fraction"; }

std::string format_step_log(const StepLog& log) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9e,%.9e,%.9e,%.9e,%.9e,%.6f", log.step, log.epoch,
                  log.lr, log.pce, log.seg, log.ss, log.total, log.reliable_fraction);
    return buf;
}

void write_history(const std::filesystem::path& path, const std::vector<StepLog>& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write history: " + path.string());
    out << step_log_header() << '\n';
    for (const auto& log : history) out << format_step_log(log) << '\n';
}

torch::Tensor image_to_tensor(const Image& image) {
    auto t = torch::from_blob(const_cast<float*>(image.rgb.data()), {image.height, image.width, 3},
                              torch::kFloat32);
    return t.permute({2, 0, 1}).contiguous();
}

ProbabilityMap tensor_to_probability(const torch::Tensor& map) {
    auto m = map.detach().to(torch::kFloat32).contiguous();
    if (m.dim() == 3 && m.size(0) == 1) m = m.squeeze(0);
    if (m.dim() != 2) throw ValidationError("expected a single-channel map");
    ProbabilityMap out(static_cast<int>(m.size(0)), static_cast<int>(m.size(1)));
    std::copy(m.data_ptr<float>(), m.data_ptr<float>() + out.size(), out.data());
    return out;
}

namespace {

torch::Tensor grid_to_tensor(const Grid<std::uint8_t>& g) {
    auto t = torch::empty({g.height(), g.width()}, torch::kLong);
    auto* p = t.data_ptr<std::int64_t>();
    for (std::size_t i = 0; i < g.size(); ++i) p[i] = g[i];
    return t;
}

torch::Tensor mask_to_float(const BinaryMask& m) {
    auto t = torch::empty({1, m.height(), m.width()}, torch::kFloat32);
    auto* p = t.data_ptr<float>();
    for (std::size_t i = 0; i < m.size(); ++i) p[i] = m[i] != 0 ? 1.0F : 0.0F;
    return t;
}

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kSegmenterStream = 0x5345474dULL;

}  // namespace

SegmentationNet make_network(const ModelConfig& model, std::uint64_t seed) {
    model.validate();
    auto encoder = make_encoder(model.encoder, BackboneSpec{model.channels}, seed);
    return SegmentationNet(encoder, model.decoder_width, seed);
}

std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& split) {
    std::vector<Sample> samples;
    for (const auto& record : read_manifest(root)) {
        if (record.split == split) samples.push_back(load_sample(record, root));
    }
    return samples;
}

Trainer::Trainer(Config config, std::vector<Sample> train_set)
    : config_(std::move(config)), train_set_(std::move(train_set)) {
    config_.validate();
    for (const auto& s : train_set_) {
        if (!s.scribble) throw DataError("training sample '" + s.id + "' has no scribble");
    }
    config_.segmenter.seed = stream_seed(config_.train.seed, kSegmenterStream);
    net_ = make_network(config_.model, config_.train.seed);
    segmenter_ = make_segmenter(config_.segmenter);
    optimizer_ = std::make_unique<torch::optim::SGD>(
        net_->parameters(), torch::optim::SGDOptions(config_.train.lr_min)
                                .momentum(config_.train.momentum)
                                .weight_decay(config_.train.weight_decay));
}

int Trainer::steps_per_epoch() const {
    const auto n = static_cast<int>(train_set_.size());
    return (n + config_.train.batch_size - 1) / config_.train.batch_size;
}

int Trainer::total_steps() const { return steps_per_epoch() * config_.train.epochs; }

std::vector<int> Trainer::epoch_order(int epoch) const {
    std::vector<int> order(train_set_.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(stream_seed(config_.train.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

Batch Trainer::make_batch(const std::vector<int>& indices, int epoch) const {
    if (indices.empty()) throw ValidationError("empty batch");
    const int size = config_.train.image_size;
    const TransformConfig tcfg{size, config_.train.crop_min, config_.train.crop_max};
    Batch batch;
    batch.epoch = epoch;
    batch.indices = indices;
    std::vector<torch::Tensor> images;
    std::vector<torch::Tensor> labels;
    for (int index : indices) {
        const auto& sample = train_set_.at(static_cast<std::size_t>(index));
        std::vector<BinaryMask> extras;
        const bool has_gt = sample.gt.has_value();
        const bool has_fixed = !offline_masks_.empty() && offline_masks_[static_cast<std::size_t>(index)];
        if (has_gt) extras.push_back(*sample.gt);
        if (has_fixed) {
            // stored at working resolution; bring it back to the sample's own size first
            extras.push_back(resize_labels(*offline_masks_[static_cast<std::size_t>(index)],
                                           sample.image.height, sample.image.width));
        }
        auto t = train_transform(sample.image, *sample.scribble, extras, tcfg,
                                 stream_seed(config_.train.seed, static_cast<std::uint64_t>(epoch),
                                             static_cast<std::uint64_t>(index)));
        images.push_back(image_to_tensor(t.image));
        labels.push_back(grid_to_tensor(t.scribble));
        batch.scribbles.push_back(std::move(t.scribble));
        std::size_t e = 0;
        batch.gts.push_back(has_gt ? std::optional<BinaryMask>(t.extras[e++]) : std::nullopt);
        batch.fixed_masks.push_back(has_fixed ? std::optional<BinaryMask>(t.extras[e++]) : std::nullopt);
    }
    batch.images = torch::stack(images);
    batch.labels = torch::stack(labels);
    return batch;
}

StepLog Trainer::train_step(const Batch& batch) {
    const auto& tc = config_.train;
    const auto n = static_cast<std::size_t>(batch.images.size(0));
    const int size = static_cast<int>(batch.images.size(2));
    const double lr = lr_at(step_, total_steps(), tc);

    // (1)-(2) full and reduced-scale forward passes with shared weights
    net_->train();
    auto x = normalize_image(batch.images, config_.model.normalization);
    PredictionSet preds = net_->forward_all(x);
    preds.downscaled = net_->forward_downscaled(x, config_.loss.ss_scale);

    GuidedMaskBatch guided{torch::zeros({static_cast<std::int64_t>(n), 1, size, size}),
                           std::vector<std::uint8_t>(n, 0)};
    std::vector<Box> prompts(n, Box{0, 0, size, size});
    const bool collaborate = batch.epoch >= tc.collab_start_epoch;
    if (collaborate) {
        // (3) prompts from the scribbles and the detached S1 probabilities
        auto probs = torch::sigmoid(preds.side[0]).detach();
        const int margin = scale_margin(tc.margin_px, size);
        std::vector<BinaryMask> masks(n, BinaryMask(size, size));
        std::vector<bool> usable(n, false);
        for (std::size_t k = 0; k < n; ++k) {
            try {
                prompts[k] = make_prompt(tc.prompt_source, batch.scribbles[k],
                                         tensor_to_probability(probs[static_cast<std::int64_t>(k)]),
                                         margin, static_cast<float>(tc.pred_threshold))
                                 .box;
            } catch (const ValidationError&) {
                continue;
            }
            // (4) guided masks
            if (tc.mask_mode == MaskMode::Offline) {
                if (!batch.fixed_masks[k]) continue;
                masks[k] = *batch.fixed_masks[k];
            } else {
                const auto& gt = batch.gts[k];
                masks[k] = segmenter_
                               ->generate_mask({batch.images[static_cast<std::int64_t>(k)], prompts[k],
                                                gt ? &*gt : nullptr,
                                                stream_seed(tc.seed ^ kSegmenterStream,
                                                            static_cast<std::uint64_t>(step_),
                                                            static_cast<std::uint64_t>(batch.indices[k]))})
                               .mask;
            }
            usable[k] = true;
        }
        if (std::none_of(usable.begin(), usable.end(), [](bool u) { return u; })) {
            throw DataError("no sample in the batch yields a prompt and a guided mask");
        }
        // (5) reliability filter
        auto indicator = build_indicator(masks, batch.scribbles, tc.tau);
        std::vector<torch::Tensor> mask_tensors;
        for (std::size_t k = 0; k < n; ++k) {
            guided.indicator[k] = usable[k] ? indicator[k] : 0;
            mask_tensors.push_back(mask_to_float(masks[k]));
        }
        guided.masks = torch::stack(mask_tensors);
    }

    // (6) objective, (7) SGD update of backbone and decoder
    auto breakdown = total_loss(preds, batch.labels, guided, config_.loss);
    for (auto& group : optimizer_->param_groups()) {
        static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
    }
    optimizer_->zero_grad();
    breakdown.total.backward();
    optimizer_->step();

    // (8) segmenter fine-tuning on reliable samples
    if (collaborate && segmenter_->mode() == SegmenterMode::External) {
        segmenter_->finetune_step(batch.images, prompts, batch.labels, guided.indicator);
    }

    const auto& w = config_.loss;
    StepLog log;
    log.step = step_;
    log.epoch = batch.epoch;
    log.lr = lr;
    log.pce = combine_losses<double>(breakdown.pce, {0, 0, 0, 0}, 0.0, w);
    log.seg = combine_losses<double>({0, 0, 0, 0}, breakdown.seg, 0.0, w);
    log.ss = breakdown.ss;
    log.total = breakdown.total.item<double>();
    log.reliable_fraction = breakdown.reliable_fraction;
    ++step_;
    return log;
}

void Trainer::compute_offline_masks() {
    const int size = config_.train.image_size;
    const int margin = scale_margin(config_.train.margin_px, size);
    offline_masks_.assign(train_set_.size(), std::nullopt);
    net_->eval();
    for (std::size_t i = 0; i < train_set_.size(); ++i) {
        const auto& sample = train_set_[i];
        auto image = image_to_tensor(resize_image(sample.image, size, size));
        auto scribble = resize_labels(*sample.scribble, size, size);
        std::optional<BinaryMask> gt;
        if (sample.gt) gt = resize_labels(*sample.gt, size, size);
        torch::Tensor prob;
        {
            torch::NoGradGuard no_grad;
            auto x = normalize_image(image.unsqueeze(0), config_.model.normalization);
            prob = torch::sigmoid(net_->forward_all(x).side[0])[0];
        }
        PromptBox prompt;
        try {
            prompt = make_prompt(config_.train.prompt_source, scribble, tensor_to_probability(prob),
                                 margin, static_cast<float>(config_.train.pred_threshold));
        } catch (const ValidationError&) {
            continue;
        }
        offline_masks_[i] =
            segmenter_
                ->generate_mask({image, prompt.box, gt ? &*gt : nullptr,
                                 stream_seed(config_.train.seed ^ kSegmenterStream, 0, i)})
                .mask;
    }
}

torch::Tensor Trainer::predict(const torch::Tensor& images) {
    auto batch = images.dim() == 3 ? images.unsqueeze(0) : images;
    net_->eval();
    torch::NoGradGuard no_grad;
    auto x = normalize_image(batch.to(torch::kFloat32), config_.model.normalization);
    return torch::sigmoid(net_->forward_all(x).side[0]);
}

ProbabilityMap Trainer::predict(const Image& image) {
    const int size = config_.train.image_size;
    auto prob = predict(image_to_tensor(resize_image(image, size, size)));
    return resize_probability(tensor_to_probability(prob[0]), image.height, image.width);
}

void Trainer::save_checkpoint(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    torch::serialize::OutputArchive archive;
    torch::serialize::OutputArchive backbone, decoder, tail, optimizer, meta;
    net_->encoder().save(backbone);
    net_->decoder()->save(decoder);
    auto tail_params = segmenter_->trainable_parameters();
    for (std::size_t i = 0; i < tail_params.size(); ++i) {
        tail.write("p" + std::to_string(i), tail_params[i]);
    }
    optimizer_->save(optimizer);
    meta.write("step", torch::tensor(static_cast<std::int64_t>(step_)));
    meta.write("epoch", torch::tensor(static_cast<std::int64_t>(epoch_)));
    meta.write("seed", torch::tensor(static_cast<std::int64_t>(config_.train.seed)));
    meta.write("config", c10::IValue(config_to_json(config_)));
    if (!offline_masks_.empty()) {
        const int size = config_.train.image_size;
        auto masks = torch::zeros({static_cast<std::int64_t>(offline_masks_.size()), size, size}, torch::kUInt8);
        auto valid = torch::zeros({static_cast<std::int64_t>(offline_masks_.size())}, torch::kUInt8);
        for (std::size_t i = 0; i < offline_masks_.size(); ++i) {
            if (!offline_masks_[i]) continue;
            valid[static_cast<std::int64_t>(i)] = 1;
            std::copy(offline_masks_[i]->data(), offline_masks_[i]->data() + offline_masks_[i]->size(),
                      masks[static_cast<std::int64_t>(i)].data_ptr<std::uint8_t>());
        }
        meta.write("offline_masks", masks);
        meta.write("offline_valid", valid);
    }
    archive.write("backbone", backbone);
    archive.write("decoder", decoder);
    archive.write("segmenter_tail", tail);
    archive.write("optimizer", optimizer);
    archive.write("meta", meta);
    try {
        archive.save_to(path.string());
    } catch (const c10::Error& e) {
        throw DataError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
    try {
        torch::serialize::InputArchive archive;
        archive.load_from(path.string());
        torch::serialize::InputArchive backbone, decoder, tail, optimizer, meta;
        archive.read("backbone", backbone);
        archive.read("decoder", decoder);
        archive.read("segmenter_tail", tail);
        archive.read("optimizer", optimizer);
        archive.read("meta", meta);
        net_->encoder().load(backbone);
        net_->decoder()->load(decoder);
        {
            torch::NoGradGuard no_grad;
            auto tail_params = segmenter_->trainable_parameters();
            for (std::size_t i = 0; i < tail_params.size(); ++i) {
                torch::Tensor value;
                tail.read("p" + std::to_string(i), value);
                tail_params[i].copy_(value);
            }
        }
        optimizer_->load(optimizer);
        torch::Tensor step, epoch;
        meta.read("step", step);
        meta.read("epoch", epoch);
        step_ = static_cast<int>(step.item<std::int64_t>());
        epoch_ = static_cast<int>(epoch.item<std::int64_t>());
        torch::Tensor masks, valid;
        if (meta.try_read("offline_masks", masks) && meta.try_read("offline_valid", valid)) {
            const int size = config_.train.image_size;
            if (masks.size(0) != static_cast<std::int64_t>(train_set_.size()) || masks.size(1) != size) {
                throw DataError("checkpoint offline masks do not match the training set");
            }
            offline_masks_.assign(train_set_.size(), std::nullopt);
            for (std::size_t i = 0; i < offline_masks_.size(); ++i) {
                if (valid[static_cast<std::int64_t>(i)].item<std::uint8_t>() == 0) continue;
                auto m = masks[static_cast<std::int64_t>(i)].contiguous();
                BinaryMask grid(size, size);
                std::copy(m.data_ptr<std::uint8_t>(), m.data_ptr<std::uint8_t>() + grid.size(), grid.data());
                offline_masks_[i] = std::move(grid);
            }
        }
    } catch (const c10::Error& e) {
        throw DataError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
}

FitResult Trainer::fit(const FitOptions& options) {
    if (train_set_.empty()) throw DataError("the training split is empty");
    std::filesystem::create_directories(options.out_dir);
    const auto history_path = options.out_dir / "history.csv";
    std::vector<std::string> previous;
    if (options.resume_from) {
        load_checkpoint(*options.resume_from);
        std::ifstream in(history_path);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (!line.empty() && std::stoi(line.substr(0, line.find(','))) < step_) previous.push_back(line);
        }
    } else if (config_.train.mask_mode == MaskMode::Offline) {
        compute_offline_masks();
    }

    FitResult result;
    const int epochs = config_.train.epochs;
    const int last = options.stop_after_epoch ? std::min(epochs, *options.stop_after_epoch) : epochs;
    const auto batch_size = static_cast<std::size_t>(config_.train.batch_size);
    while (epoch_ < last) {
        const auto order = epoch_order(epoch_);
        double epoch_loss = 0.0;
        double epoch_reliable = 0.0;
        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            std::vector<int> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(
                                                       std::min(order.size(), start + batch_size)));
            auto log = train_step(make_batch(chunk, epoch_));
            epoch_loss += log.total;
            epoch_reliable += log.reliable_fraction;
            ++steps;
            result.history.push_back(log);
        }
        ++epoch_;
        if (options.verbose) {
            std::fprintf(stderr, "epoch %d/%d  step %d  loss %.5f  reliable %.3f\n", epoch_, epochs,
                         step_, epoch_loss / steps, epoch_reliable / steps);
        }
        if (config_.train.checkpoint_every > 0 && epoch_ % config_.train.checkpoint_every == 0 &&
            epoch_ < last) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_epoch%04d.pt", epoch_);
            save_checkpoint(options.out_dir / name);
        }
    }

    result.checkpoint = options.out_dir / "checkpoint.pt";
    save_checkpoint(result.checkpoint);
    std::ofstream out(history_path, std::ios::binary);
    if (!out) throw DataError("cannot write history: " + history_path.string());
    out << step_log_header() << '\n';
    for (const auto& line : previous) out << line << '\n';
    for (const auto& log : result.history) out << format_step_log(log) << '\n';
    return result;
}

}  // namespace scribbleseg
