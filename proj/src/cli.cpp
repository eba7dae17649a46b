#include "scribbleseg/cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "scribbleseg/data_io.hpp"
#include "scribbleseg/error.hpp"
#include "scribbleseg/metrics.hpp"
#include "scribbleseg/prompting.hpp"
#include "scribbleseg/trainer.hpp"

namespace scribbleseg {

namespace fs = std::filesystem;

std::string flag_for_key(const std::string& key) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    return flag;
}

Config read_checkpoint_config(const fs::path& checkpoint) {
    if (!fs::exists(checkpoint)) throw DataError("checkpoint not found: " + checkpoint.string());
    c10::IValue value;
    try {
        torch::serialize::InputArchive archive, meta;
        archive.load_from(checkpoint.string());
        archive.read("meta", meta);
        meta.read("config", value);
    } catch (const c10::Error& e) {
        throw DataError("cannot read checkpoint " + checkpoint.string() + ": " +
                        e.what_without_backtrace());
    }
    Config config;
    apply_config_json(config, value.toStringRef());
    return config;
}

namespace {

bool is_image_file(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" ||
           ext == ".tiff";
}

std::map<std::string, fs::path> images_by_id(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::map<std::string, fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
        const auto id = entry.path().stem().string();
        if (!out.emplace(id, entry.path()).second) {
            throw ValidationError("duplicate image id '" + id + "' in " + dir.string());
        }
    }
    return out;
}

/// Options bound to every config key; applied on top of defaults and --config.
class ConfigFlags {
public:
    void attach(CLI::App& app) {
        const Config defaults;
        app.add_option("--config", config_path_, "JSON config file (keys as listed below)");
        for (const auto& key : config_keys()) {
            auto* opt = app.add_option(flag_for_key(key.name), values_[key.name], key.help);
            opt->default_str(key.get(defaults));
            opts_[key.name] = opt;
        }
    }

    Config resolve() const {
        Config config = config_path_.empty() ? Config{} : load_config(config_path_);
        apply(config);
        config.validate();
        return config;
    }

    /// Applies the flags given on the command line; `only` restricts the keys considered.
    void apply(Config& config, const std::set<std::string>& only = {}) const {
        for (const auto& key : config_keys()) {
            if (!only.empty() && !only.contains(key.name)) continue;
            if (opts_.at(key.name)->count() > 0) key.set(config, values_.at(key.name));
        }
    }

private:
    std::string config_path_;
    std::map<std::string, std::string> values_;
    std::map<std::string, CLI::Option*> opts_;
};

struct TrainArgs {
    ConfigFlags flags;
    std::string data;
    std::string out = "runs/train";
    std::string resume;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    const Config config = a.flags.resolve();
    auto samples = load_split(a.data, "train");
    if (samples.empty()) throw DataError("no training records in " + (fs::path(a.data) / "manifest.csv").string());
    Trainer trainer(config, std::move(samples));
    FitOptions options;
    options.out_dir = a.out;
    if (!a.resume.empty()) options.resume_from = fs::path(a.resume);
    auto result = trainer.fit(options);
    std::ofstream(fs::path(a.out) / "config.json") << config_to_json(config) << '\n';
    out << result.checkpoint.string() << '\n';
    return kExitOk;
}

struct EvalArgs {
    std::string pred;
    std::string gt;
    std::string out = ".";
    std::string name = "dataset";
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const auto preds = images_by_id(a.pred);
    const auto gts = images_by_id(a.gt);
    std::vector<std::string> pred_only, gt_only;
    for (const auto& [id, _] : preds) {
        if (!gts.contains(id)) pred_only.push_back(id);
    }
    for (const auto& [id, _] : gts) {
        if (!preds.contains(id)) gt_only.push_back(id);
    }
    if (!pred_only.empty() || !gt_only.empty()) {
        std::string msg = "prediction and ground-truth files do not match";
        auto list = [](const std::vector<std::string>& ids) {
            std::string s;
            for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
            return s;
        };
        if (!pred_only.empty()) msg += "; only in " + a.pred + ": " + list(pred_only);
        if (!gt_only.empty()) msg += "; only in " + a.gt + ": " + list(gt_only);
        throw ValidationError(msg);
    }
    if (preds.empty()) throw ValidationError("no images found in " + a.pred);
    std::vector<metrics::EvalPair> pairs;
    for (const auto& [id, path] : preds) {
        auto p = load_probability(path);
        auto g = load_mask(gts.at(id));
        if (!p.same_shape(g)) {
            throw ValidationError("size mismatch for '" + id + "': prediction " +
                                  std::to_string(p.width()) + "x" + std::to_string(p.height()) +
                                  ", ground truth " + std::to_string(g.width()) + "x" +
                                  std::to_string(g.height()));
        }
        pairs.push_back({std::move(p), std::move(g)});
    }
    const auto report = metrics::evaluate_dataset(pairs);
    fs::create_directories(a.out);
    const auto csv = metrics::report_csv(report, a.name);
    const auto md = metrics::report_markdown(report, a.name);
    std::ofstream(fs::path(a.out) / "report.csv", std::ios::binary) << csv;
    std::ofstream(fs::path(a.out) / "report.md", std::ios::binary) << md;
    out << md;
    return kExitOk;
}

struct PredictArgs {
    std::string checkpoint;
    std::string input;
    std::string out = "predictions";
    std::string split = "test";
    bool overlay = false;
};

std::vector<std::pair<std::string, fs::path>> prediction_inputs(const fs::path& input,
                                                                const std::string& split) {
    std::vector<std::pair<std::string, fs::path>> items;
    if (fs::exists(input / "manifest.csv")) {
        for (const auto& r : read_manifest(input)) {
            if (split == "all" || r.split == split) items.emplace_back(r.id, input / r.image);
        }
    } else {
        for (const auto& [id, path] : images_by_id(input)) items.emplace_back(id, path);
    }
    if (items.empty()) throw ValidationError("no input images found in " + input.string());
    return items;
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
    const auto config = read_checkpoint_config(a.checkpoint);
    Trainer model(config, {});
    model.load_checkpoint(a.checkpoint);
    const fs::path out_dir = a.out;
    fs::create_directories(out_dir);
    for (const auto& [id, path] : prediction_inputs(a.input, a.split)) {
        const auto image = load_image(path);
        const auto prob = model.predict(image);
        save_probability(out_dir / (id + ".png"), prob);
        if (a.overlay) {
            BinaryMask mask(prob.height(), prob.width());
            for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = prob[i] >= 0.5F ? 1 : 0;
            save_image(out_dir / (id + "_overlay.png"), make_overlay(image, mask));
        }
        out << (out_dir / (id + ".png")).string() << '\n';
    }
    return kExitOk;
}

struct PromptArgs {
    ConfigFlags flags;
    std::string data;
    std::string checkpoint;
    std::string out;
    std::string split = "train";
};

int cmd_make_prompts(const PromptArgs& a, std::ostream& out) {
    Config config = a.checkpoint.empty() ? a.flags.resolve() : read_checkpoint_config(a.checkpoint);
    if (!a.checkpoint.empty()) {
        // prompt-related flags still apply on top of the checkpoint's config
        a.flags.apply(config, {"margin_px", "prompt_source", "pred_threshold"});
        config.validate();
    }
    Trainer model(config, {});
    if (!a.checkpoint.empty()) model.load_checkpoint(a.checkpoint);
    const int size = config.train.image_size;
    const int margin = scale_margin(config.train.margin_px, size);

    std::ostringstream csv;
    csv << "image_id,x0,y0,x1,y1,source\n";
    for (const auto& record : read_manifest(a.data)) {
        if (a.split != "all" && record.split != a.split) continue;
        const auto sample = load_sample(record, a.data);
        if (!sample.scribble) throw DataError("record '" + record.id + "' has no scribble");
        const auto image = resize_image(sample.image, size, size);
        const auto scribble = resize_labels(*sample.scribble, size, size);
        const auto prob = tensor_to_probability(model.predict(image_to_tensor(image))[0]);
        const auto prompt = make_prompt(config.train.prompt_source, scribble, prob, margin,
                                        static_cast<float>(config.train.pred_threshold));
        csv << record.id << ',' << prompt.box.x0 << ',' << prompt.box.y0 << ',' << prompt.box.x1 << ','
            << prompt.box.y1 << ',' << to_string(prompt.origin) << '\n';
    }
    if (a.out.empty()) {
        out << csv.str();
    } else {
        std::ofstream file(a.out, std::ios::binary);
        if (!file) throw DataError("cannot write " + a.out);
        file << csv.str();
    }
    return kExitOk;
}

struct SynthArgs {
    SyntheticConfig cfg;
    std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    const auto records = make_synthetic_dataset(a.cfg, a.out);
    out << records.size() << " samples written to " << a.out << '\n';
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Scribble-supervised binary segmentation with guided-mask collaboration",
                 "scribbleseg"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train the segmentation network on a dataset");
    train_cmd->add_option("--data", train.data, "dataset root holding manifest.csv")->required();
    train_cmd->add_option("--out", train.out, "output directory for checkpoints and history")
        ->capture_default_str();
    train_cmd->add_option("--resume", train.resume, "checkpoint to resume from");
    train.flags.attach(*train_cmd);

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Score predicted probability maps against masks");
    eval_cmd->add_option("--pred", eval.pred, "directory of 8-bit prediction images")->required();
    eval_cmd->add_option("--gt", eval.gt, "directory of binary ground-truth masks")->required();
    eval_cmd->add_option("--out", eval.out, "directory for report.csv and report.md")->capture_default_str();
    eval_cmd->add_option("--name", eval.name, "dataset name used in the report")->capture_default_str();

    PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "Write probability maps for images");
    predict_cmd->add_option("--checkpoint", predict.checkpoint, "trained checkpoint")->required();
    predict_cmd->add_option("--input", predict.input, "image directory or dataset root")->required();
    predict_cmd->add_option("--out", predict.out, "output directory")->capture_default_str();
    predict_cmd->add_option("--split", predict.split, "manifest split to predict (train, test, all)")
        ->capture_default_str();
    predict_cmd->add_flag("--overlay", predict.overlay, "also write <id>_overlay.png");

    PromptArgs prompts;
    auto* prompt_cmd = app.add_subcommand("make-prompts", "Emit the box prompt of every sample as CSV");
    prompt_cmd->add_option("--data", prompts.data, "dataset root holding manifest.csv")->required();
    prompt_cmd->add_option("--checkpoint", prompts.checkpoint, "network used for the prediction box");
    prompt_cmd->add_option("--out", prompts.out, "CSV path (stdout when omitted)");
    prompt_cmd->add_option("--split", prompts.split, "manifest split (train, test, all)")->capture_default_str();
    prompts.flags.attach(*prompt_cmd);

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth-data", "Generate a synthetic ellipse dataset");
    synth_cmd->add_option("--n", synth.cfg.n, "training samples")->capture_default_str();
    synth_cmd->add_option("--n-test", synth.cfg.n_test, "test samples")->capture_default_str();
    synth_cmd->add_option("--size", synth.cfg.size, "image side in pixels")->capture_default_str();
    synth_cmd->add_option("--seed", synth.cfg.seed, "generator seed")->capture_default_str();
    synth_cmd->add_option("--scribble-width", synth.cfg.scribble_width, "stroke width in pixels")
        ->capture_default_str();
    synth_cmd->add_option("--noise", synth.cfg.noise, "Gaussian noise std")->capture_default_str();
    synth_cmd->add_option("--out", synth.out, "output directory")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitValidation;
    }

    try {
        if (app.got_subcommand(train_cmd)) return cmd_train(train, out);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(eval, out);
        if (app.got_subcommand(predict_cmd)) return cmd_predict(predict, out);
        if (app.got_subcommand(prompt_cmd)) return cmd_make_prompts(prompts, out);
        if (app.got_subcommand(synth_cmd)) return cmd_synth(synth, out);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitValidation;
}

int run_cli(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

}  // namespace scribbleseg
