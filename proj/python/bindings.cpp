#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "scribbleseg/cli.hpp"
#include "scribbleseg/data_io.hpp"
#include "scribbleseg/error.hpp"
#include "scribbleseg/losses.hpp"
#include "scribbleseg/metrics.hpp"
#include "scribbleseg/prompting.hpp"
#include "scribbleseg/trainer.hpp"

namespace py = pybind11;
using namespace scribbleseg;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Grid<T> to_grid(const Array<T>& a, const char* what) {
    if (a.ndim() != 2) throw ValidationError(std::string(what) + " must be a 2-D array");
    const auto h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
    return Grid<T>(h, w, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
Array<T> to_array(const Grid<T>& g) {
    Array<T> out({g.height(), g.width()});
    std::copy(g.data(), g.data() + g.size(), out.mutable_data());
    return out;
}

Image to_image(const Array<float>& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw ValidationError("image must be an H x W x 3 array");
    return Image{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                 std::vector<float>(a.data(), a.data() + a.size())};
}

// Tensor view sharing the numpy buffer; callers clone before the array goes away.
torch::Tensor view(const Array<double>& a) {
    std::vector<std::int64_t> shape(a.shape(), a.shape() + a.ndim());
    return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64);
}

py::dict scores_dict(const metrics::ImageScores& s) {
    py::dict d;
    d["dice"] = s.dice;
    d["iou"] = s.iou;
    d["s_measure"] = s.s_measure;
    d["wf_measure"] = s.wf_measure;
    d["e_measure_max"] = s.e_measure_max;
    d["mae"] = s.mae;
    return d;
}

class Predictor {
public:
    explicit Predictor(const fs::path& checkpoint) : trainer_(read_checkpoint_config(checkpoint), {}) {
        trainer_.load_checkpoint(checkpoint);
    }
    Array<float> predict(const Array<float>& image) {
        auto img = to_image(image);
        ProbabilityMap p;
        {
            py::gil_scoped_release release;
            p = trainer_.predict(img);
        }
        return to_array(p);
    }

private:
    Trainer trainer_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Scribble-supervised segmentation: prompts, losses, metrics, data and inference.";

    auto base = py::register_exception<Error>(m, "ScribblesegError", PyExc_RuntimeError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<BackendError>(m, "BackendError", base.ptr());

    py::class_<Box>(m, "Box")
        .def(py::init<int, int, int, int>(), py::arg("x0"), py::arg("y0"), py::arg("x1"), py::arg("y1"))
        .def_readwrite("x0", &Box::x0)
        .def_readwrite("y0", &Box::y0)
        .def_readwrite("x1", &Box::x1)
        .def_readwrite("y1", &Box::y1)
        .def_property_readonly("area", &Box::area)
        .def_property_readonly("empty", &Box::empty)
        .def("as_tuple", [](const Box& b) { return py::make_tuple(b.x0, b.y0, b.x1, b.y1); })
        .def(py::self == py::self)
        .def("__repr__", [](const Box& b) {
            std::ostringstream os;
            os << "Box" << b;
            return os.str();
        });

    m.def("intersect", &intersect, py::arg("a"), py::arg("b"));
    m.def(
        "scribble_to_box", [](const Array<std::uint8_t>& s) { return scribble_to_box(to_grid(s, "scribble")); },
        py::arg("scribble"), "Tight box around the foreground (label 1) pixels.");
    m.def(
        "prediction_to_box",
        [](const Array<float>& p, float threshold) { return prediction_to_box(to_grid(p, "probability"), threshold); },
        py::arg("probability"), py::arg("threshold") = 0.5F);
    m.def("augment_box", &augment_box, py::arg("box"), py::arg("margin"), py::arg("width"), py::arg("height"));
    m.def(
        "make_prompt",
        [](const std::string& source, const Array<std::uint8_t>& s, const Array<float>& p, int margin,
           float threshold) {
            auto prompt = make_prompt(parse_prompt_source(source), to_grid(s, "scribble"), to_grid(p, "probability"),
                                      margin, threshold);
            return py::make_tuple(prompt.box, std::string(to_string(prompt.origin)));
        },
        py::arg("source"), py::arg("scribble"), py::arg("probability"), py::arg("margin"),
        py::arg("threshold") = 0.5F, "Prompt box and its origin for source intersection, box1 or box2.");
    m.def(
        "mask_scribble_agreement",
        [](const Array<std::uint8_t>& mask, const Array<std::uint8_t>& s) {
            return mask_scribble_agreement(to_grid(mask, "mask"), to_grid(s, "scribble"));
        },
        py::arg("mask"), py::arg("scribble"));

    m.def(
        "score_image",
        [](const Array<float>& pred, const Array<std::uint8_t>& gt) {
            return scores_dict(metrics::score_image(to_grid(pred, "prediction"), to_grid(gt, "gt")));
        },
        py::arg("prediction"), py::arg("gt"), "dice, iou, s_measure, wf_measure, e_measure_max and mae.");

    m.def(
        "partial_ce",
        [](const Array<double>& logits, const Array<std::int64_t>& labels, double eps) {
            std::vector<std::int64_t> shape(labels.shape(), labels.shape() + labels.ndim());
            auto l = torch::from_blob(const_cast<std::int64_t*>(labels.data()), shape, torch::kLong);
            return partial_ce(view(logits), l, eps).item<double>();
        },
        py::arg("logits"), py::arg("labels"), py::arg("eps") = 1e-7);
    m.def(
        "weighted_seg_loss",
        [](const Array<double>& logits, const Array<double>& mask, int radius, double gain, double eps) {
            LossWeights w;
            w.wmap_radius = radius;
            w.wmap_gain = gain;
            w.eps = eps;
            return weighted_seg_loss(view(logits), view(mask), w).item<double>();
        },
        py::arg("logits"), py::arg("mask"), py::arg("radius") = 15, py::arg("gain") = 5.0, py::arg("eps") = 1e-7);

    m.def(
        "lr_at",
        [](int step, int total, double lr_min, double lr_max, double warmup_fraction) {
            TrainConfig cfg;
            cfg.lr_min = lr_min;
            cfg.lr_max = lr_max;
            cfg.warmup_fraction = warmup_fraction;
            return lr_at(step, total, cfg);
        },
        py::arg("step"), py::arg("total_steps"), py::arg("lr_min") = 1e-5, py::arg("lr_max") = 1e-2,
        py::arg("warmup_fraction") = 0.1);

    m.def(
        "make_synthetic_dataset",
        [](const fs::path& out, int n, int n_test, int size, std::uint64_t seed, int scribble_width) {
            SyntheticConfig cfg;
            cfg.n = n;
            cfg.n_test = n_test;
            cfg.size = size;
            cfg.seed = seed;
            cfg.scribble_width = scribble_width;
            return make_synthetic_dataset(cfg, out).size();
        },
        py::arg("out_dir"), py::arg("n") = 4, py::arg("n_test") = 0, py::arg("size") = 64, py::arg("seed") = 0,
        py::arg("scribble_width") = 1, "Writes a synthetic dataset and returns its record count.");
    m.def("load_image", [](const fs::path& p) {
        auto img = load_image(p);
        Array<float> out({img.height, img.width, 3});
        std::copy(img.rgb.begin(), img.rgb.end(), out.mutable_data());
        return out;
    });
    m.def("load_scribble", [](const fs::path& p) { return to_array(load_scribble(p)); });
    m.def("load_mask", [](const fs::path& p) { return to_array(load_mask(p)); });

    py::class_<Predictor>(m, "Predictor")
        .def(py::init<const fs::path&>(), py::arg("checkpoint"))
        .def("predict", &Predictor::predict, py::arg("image"),
             "Foreground probability for an H x W x 3 image in [0, 1].");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line tool in-process; returns (exit code, stdout, stderr).");
}
