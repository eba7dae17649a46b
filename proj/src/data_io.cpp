#include "scribbleseg/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "scribbleseg/error.hpp"

namespace scribbleseg {

namespace {

cv::Mat read_raw(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("file not found: " + path.string());
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw DataError("cannot decode image: " + path.string());
    if (m.depth() != CV_8U) throw DataError("expected an 8-bit image: " + path.string());
    return m;
}

void write_raw(const fs::path& path, const cv::Mat& m) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), m)) throw DataError("cannot write image: " + path.string());
}

cv::Mat to_gray(const cv::Mat& m) {
    if (m.channels() == 1) return m;
    cv::Mat gray;
    cv::cvtColor(m, gray, m.channels() == 4 ? cv::COLOR_BGRA2GRAY : cv::COLOR_BGR2GRAY);
    return gray;
}

Grid<std::uint8_t> from_mat_u8(const cv::Mat& m) {
    Grid<std::uint8_t> g(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<std::uint8_t>(y);
        std::copy(row, row + m.cols, g.data() + static_cast<std::size_t>(y) * m.cols);
    }
    return g;
}

cv::Mat to_mat_u8(const Grid<std::uint8_t>& g) {
    cv::Mat m(g.height(), g.width(), CV_8UC1);
    for (int y = 0; y < g.height(); ++y) {
        std::copy(g.data() + static_cast<std::size_t>(y) * g.width(),
                  g.data() + static_cast<std::size_t>(y + 1) * g.width(), m.ptr<std::uint8_t>(y));
    }
    return m;
}

cv::Mat to_mat_f32(const Image& image) {
    cv::Mat m(image.height, image.width, CV_32FC3);
    std::copy(image.rgb.begin(), image.rgb.end(), m.ptr<float>(0));
    return m;
}

Image from_mat_f32(const cv::Mat& m) {
    Image image{m.rows, m.cols, {}};
    cv::Mat cont = m.isContinuous() ? m : m.clone();
    image.rgb.assign(cont.ptr<float>(0), cont.ptr<float>(0) + static_cast<std::size_t>(m.total()) * 3);
    return image;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

Image load_image(const fs::path& path) {
    cv::Mat m = read_raw(path);
    cv::Mat rgb;
    switch (m.channels()) {
        case 1: cv::cvtColor(m, rgb, cv::COLOR_GRAY2RGB); break;
        case 3: cv::cvtColor(m, rgb, cv::COLOR_BGR2RGB); break;
        case 4: cv::cvtColor(m, rgb, cv::COLOR_BGRA2RGB); break;
        default: throw DataError("unsupported channel count in " + path.string());
    }
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
    return from_mat_f32(f);
}

void save_image(const fs::path& path, const Image& image) {
    cv::Mat u8;
    to_mat_f32(image).convertTo(u8, CV_8UC3, 255.0);
    cv::Mat bgr;
    cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
    write_raw(path, bgr);
}

ScribbleMap decode_scribble_rgb(const Grid<std::uint8_t>& r, const Grid<std::uint8_t>& g,
                                const Grid<std::uint8_t>& b) {
    require_same_shape(r, g, "decode_scribble_rgb");
    require_same_shape(r, b, "decode_scribble_rgb");
    ScribbleMap out(r.height(), r.width(), kUnlabeled);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (r[i] == 0 && g[i] == 0 && b[i] == 255) {
            out[i] = kForeground;
        } else if (r[i] == 0 && g[i] == 255 && b[i] == 0) {
            out[i] = kBackground;
        }
    }
    return out;
}

ScribbleMap load_scribble(const fs::path& path) {
    cv::Mat m = read_raw(path);
    if (m.channels() == 1) {
        auto labels = from_mat_u8(m);
        for (auto v : labels.values()) {
            if (v > kBackground) {
                throw DataError("illegal scribble value " + std::to_string(v) + " in " + path.string() +
                                " (expected 0, 1 or 2)");
            }
        }
        return labels;
    }
    std::vector<cv::Mat> planes;
    cv::split(m, planes);  // B, G, R[, A]
    return decode_scribble_rgb(from_mat_u8(planes[2]), from_mat_u8(planes[1]), from_mat_u8(planes[0]));
}

void save_scribble(const fs::path& path, const ScribbleMap& scribble) {
    write_raw(path, to_mat_u8(scribble));
}

BinaryMask load_mask(const fs::path& path) {
    auto g = from_mat_u8(to_gray(read_raw(path)));
    const auto max_v = g.empty() ? 0 : *std::max_element(g.values().begin(), g.values().end());
    const std::uint8_t cut = max_v <= 1 ? 1 : 128;
    for (auto& v : g.values()) v = v >= cut ? 1 : 0;
    return g;
}

void save_mask(const fs::path& path, const BinaryMask& mask) {
    auto scaled = mask;
    for (auto& v : scaled.values()) v = v != 0 ? 255 : 0;
    write_raw(path, to_mat_u8(scaled));
}

ProbabilityMap load_probability(const fs::path& path) {
    auto g = from_mat_u8(to_gray(read_raw(path)));
    ProbabilityMap p(g.height(), g.width());
    for (std::size_t i = 0; i < g.size(); ++i) p[i] = static_cast<float>(g[i]) / 255.0F;
    return p;
}

void save_probability(const fs::path& path, const ProbabilityMap& probability) {
    Grid<std::uint8_t> g(probability.height(), probability.width());
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = static_cast<std::uint8_t>(std::lround(std::clamp(probability[i], 0.0F, 1.0F) * 255.0F));
    }
    write_raw(path, to_mat_u8(g));
}

Image resize_image(const Image& image, int height, int width) {
    if (image.height == height && image.width == width) return image;
    cv::Mat out;
    cv::resize(to_mat_f32(image), out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    return from_mat_f32(out);
}

Grid<std::uint8_t> resize_labels(const Grid<std::uint8_t>& labels, int height, int width) {
    if (labels.height() == height && labels.width() == width) return labels;
    cv::Mat out;
    cv::resize(to_mat_u8(labels), out, cv::Size(width, height), 0, 0, cv::INTER_NEAREST_EXACT);
    return from_mat_u8(out);
}

ProbabilityMap resize_probability(const ProbabilityMap& map, int height, int width) {
    if (map.height() == height && map.width() == width) return map;
    cv::Mat in(map.height(), map.width(), CV_32FC1);
    std::copy(map.values().begin(), map.values().end(), in.ptr<float>(0));
    cv::Mat out;
    cv::resize(in, out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    ProbabilityMap result(height, width);
    std::copy(out.ptr<float>(0), out.ptr<float>(0) + result.size(), result.data());
    return result;
}

Image make_overlay(const Image& image, const BinaryMask& mask) {
    if (image.height != mask.height() || image.width != mask.width()) {
        throw ValidationError("make_overlay: image and mask sizes differ");
    }
    Image out = image;
    const int h = mask.height();
    const int w = mask.width();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (mask.at(y, x) == 0) continue;
            const bool edge = y == 0 || x == 0 || y == h - 1 || x == w - 1 || mask.at(y - 1, x) == 0 ||
                              mask.at(y + 1, x) == 0 || mask.at(y, x - 1) == 0 || mask.at(y, x + 1) == 0;
            if (edge) {
                out.at(y, x, 0) = 1.0F;
                out.at(y, x, 1) = 0.0F;
                out.at(y, x, 2) = 0.0F;
            } else {
                out.at(y, x, 0) = 0.7F * out.at(y, x, 0) + 0.3F;
            }
        }
    }
    return out;
}

std::vector<SampleRecord> read_manifest(const fs::path& root) {
    const auto path = root / "manifest.csv";
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty manifest: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,image,scribble,mask,split") {
        throw DataError("unexpected manifest header in " + path.string() + ": " + line);
    }
    std::vector<SampleRecord> records;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 5) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 5 columns");
        }
        SampleRecord r{cells[0], cells[1], cells[2], cells[3], cells[4]};
        if (r.split != "train" && r.split != "test") {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": unknown split '" +
                            r.split + "'");
        }
        if (r.split == "train" && r.scribble.empty()) {
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": training record without scribble");
        }
        records.push_back(std::move(r));
    }
    return records;
}

void write_manifest(const fs::path& root, std::span<const SampleRecord> records) {
    fs::create_directories(root);
    const auto path = root / "manifest.csv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << "id,image,scribble,mask,split\n";
    for (const auto& r : records) {
        out << r.id << ',' << r.image << ',' << r.scribble << ',' << r.mask << ',' << r.split << '\n';
    }
}

Sample load_sample(const SampleRecord& record, const fs::path& root) {
    Sample s;
    s.id = record.id;
    s.image = load_image(root / record.image);
    if (!record.scribble.empty()) {
        s.scribble = load_scribble(root / record.scribble);
        require_same_shape(*s.scribble, Grid<std::uint8_t>(s.image.height, s.image.width),
                           ("scribble " + record.scribble).c_str());
    }
    if (!record.mask.empty()) {
        s.gt = load_mask(root / record.mask);
        require_same_shape(*s.gt, Grid<std::uint8_t>(s.image.height, s.image.width),
                           ("mask " + record.mask).c_str());
    }
    return s;
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    auto mix = [](std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(seed) ^ a) ^ (b * 0xD1B54A32D192ED03ULL));
}

namespace {

template <typename T>
Grid<T> crop(const Grid<T>& g, int y0, int x0, int side) {
    Grid<T> out(side, side);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) out.at(y, x) = g.at(y0 + y, x0 + x);
    }
    return out;
}

Image crop(const Image& image, int y0, int x0, int side) {
    Image out{side, side, std::vector<float>(static_cast<std::size_t>(side) * side * 3)};
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y0 + y, x0 + x, c);
        }
    }
    return out;
}

bool has_foreground_in(const ScribbleMap& s, int y0, int x0, int side) {
    for (int y = y0; y < y0 + side; ++y) {
        for (int x = x0; x < x0 + side; ++x) {
            if (s.at(y, x) == kForeground) return true;
        }
    }
    return false;
}

}  // namespace

TransformedSample train_transform(const Image& image, const ScribbleMap& scribble,
                                  std::span<const BinaryMask> extras, const TransformConfig& cfg,
                                  std::uint64_t seed) {
    if (cfg.size <= 0) throw ValidationError("transform size must be positive");
    if (!(cfg.crop_min > 0.0 && cfg.crop_min <= cfg.crop_max && cfg.crop_max <= 1.0)) {
        throw ValidationError("crop ratio range must satisfy 0 < min <= max <= 1");
    }
    if (scribble.height() != image.height || scribble.width() != image.width) {
        throw ValidationError("train_transform: image and scribble sizes differ");
    }
    const int size = cfg.size;
    TransformedSample out;
    out.image = resize_image(image, size, size);
    out.scribble = resize_labels(scribble, size, size);
    for (const auto& e : extras) out.extras.push_back(resize_labels(e, size, size));

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ratio(cfg.crop_min, cfg.crop_max);
    int side = size, x0 = 0, y0 = 0;
    bool accepted = false;
    for (int attempt = 0; attempt < 10 && !accepted; ++attempt) {
        side = std::clamp(static_cast<int>(std::lround(ratio(rng) * size)), 1, size);
        std::uniform_int_distribution<int> offset(0, size - side);
        x0 = offset(rng);
        y0 = offset(rng);
        accepted = has_foreground_in(out.scribble, y0, x0, side);
    }
    if (!accepted) {
        x0 = y0 = (size - side) / 2;
        if (!has_foreground_in(out.scribble, y0, x0, side)) {
            side = size;
            x0 = y0 = 0;
        }
    }
    if (side == size) return out;

    out.image = resize_image(crop(out.image, y0, x0, side), size, size);
    out.scribble = resize_labels(crop(out.scribble, y0, x0, side), size, size);
    for (auto& e : out.extras) e = resize_labels(crop(e, y0, x0, side), size, size);
    return out;
}

BinaryMask thin(const BinaryMask& mask) {
    const int h = mask.height();
    const int w = mask.width();
    BinaryMask img = mask;
    for (auto& v : img.values()) v = v != 0 ? 1 : 0;
    auto px = [&](int y, int x) -> int {
        return (y < 0 || x < 0 || y >= h || x >= w) ? 0 : img.at(y, x);
    };
    bool changed = true;
    std::vector<std::pair<int, int>> to_clear;
    while (changed) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            to_clear.clear();
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    if (img.at(y, x) == 0) continue;
                    // neighbours P2..P9 clockwise from north
                    const int p[8] = {px(y - 1, x),     px(y - 1, x + 1), px(y, x + 1),
                                      px(y + 1, x + 1), px(y + 1, x),     px(y + 1, x - 1),
                                      px(y, x - 1),     px(y - 1, x - 1)};
                    int b = 0, a = 0;
                    for (int k = 0; k < 8; ++k) {
                        b += p[k];
                        a += (p[k] == 0 && p[(k + 1) % 8] == 1) ? 1 : 0;
                    }
                    if (b < 2 || b > 6 || a != 1) continue;
                    const bool cond = pass == 0 ? (p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0)
                                                : (p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0);
                    if (cond) to_clear.emplace_back(y, x);
                }
            }
            for (auto [y, x] : to_clear) img.at(y, x) = 0;
            changed = changed || !to_clear.empty();
        }
    }
    return img;
}

namespace {

struct Ellipse {
    cv::Point2d center;
    cv::Size2d axes;
    double angle_deg;
};

cv::Mat ellipse_mask(const Ellipse& e, int size, double axis_scale, int thickness) {
    cv::Mat m = cv::Mat::zeros(size, size, CV_8UC1);
    const cv::Size axes(static_cast<int>(std::lround(e.axes.width * axis_scale)),
                        static_cast<int>(std::lround(e.axes.height * axis_scale)));
    cv::ellipse(m, cv::Point(static_cast<int>(std::lround(e.center.x)), static_cast<int>(std::lround(e.center.y))),
                axes, e.angle_deg, 0, 360, cv::Scalar(1), thickness, cv::LINE_8);
    return m;
}

cv::Mat dilate_square(const cv::Mat& m, int radius) {
    if (radius <= 0) return m.clone();
    cv::Mat out;
    cv::dilate(m, out, cv::getStructuringElement(cv::MORPH_RECT, cv::Size(2 * radius + 1, 2 * radius + 1)));
    return out;
}

}  // namespace

std::vector<SampleRecord> make_synthetic_dataset(const SyntheticConfig& cfg, const fs::path& out_dir) {
    if (cfg.n < 1) throw ValidationError("synthetic dataset needs n >= 1");
    if (cfg.size < 16) throw ValidationError("synthetic images must be at least 16 pixels");
    if (cfg.scribble_width < 1) throw ValidationError("scribble width must be >= 1");
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "scribbles");
    fs::create_directories(out_dir / "masks");

    std::vector<SampleRecord> records;
    const int total = cfg.n + std::max(0, cfg.n_test);
    const int size = cfg.size;
    for (int index = 0; index < total; ++index) {
        std::mt19937_64 rng(stream_seed(cfg.seed, static_cast<std::uint64_t>(index)));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

        const int count = unit(rng) < 0.5 ? 1 : 2;
        std::vector<Ellipse> ellipses;
        cv::Mat gt = cv::Mat::zeros(size, size, CV_8UC1);
        for (int k = 0; k < count; ++k) {
            Ellipse e{{uniform(0.3, 0.7) * size, uniform(0.3, 0.7) * size},
                      {uniform(0.1, 0.2) * size, uniform(0.08, 0.16) * size},
                      uniform(0.0, 180.0)};
            if (count == 2) {
                // keep the two objects in opposite halves so each gets its own stroke
                e.center.x = (k == 0 ? uniform(0.22, 0.38) : uniform(0.62, 0.78)) * size;
            }
            ellipses.push_back(e);
            gt |= ellipse_mask(e, size, 1.0, cv::FILLED);
        }

        std::array<double, 3> bg_color{};
        std::array<double, 3> fg_color{};
        for (int c = 0; c < 3; ++c) {
            bg_color[static_cast<std::size_t>(c)] = uniform(0.15, 0.45);
            fg_color[static_cast<std::size_t>(c)] = bg_color[static_cast<std::size_t>(c)] + uniform(0.3, 0.45);
        }
        std::normal_distribution<double> noise(0.0, cfg.noise);
        Image image{size, size, std::vector<float>(static_cast<std::size_t>(size) * size * 3)};
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const bool fg = gt.at<std::uint8_t>(y, x) != 0;
                for (int c = 0; c < 3; ++c) {
                    const double base = fg ? fg_color[static_cast<std::size_t>(c)] : bg_color[static_cast<std::size_t>(c)];
                    image.at(y, x, c) = static_cast<float>(std::clamp(base + noise(rng), 0.0, 1.0));
                }
            }
        }

        // foreground stroke: skeleton of the eroded objects, thickened inside the GT
        const int grow = cfg.scribble_width / 2;
        BinaryMask gt_grid = from_mat_u8(gt);
        cv::Mat eroded;
        cv::erode(gt, eroded, cv::getStructuringElement(cv::MORPH_RECT, cv::Size(3, 3)));
        cv::Mat skeleton = to_mat_u8(thin(from_mat_u8(cv::countNonZero(eroded) > 0 ? eroded : gt)));
        // near-circular objects have a very short medial axis; add a stroke along the major axis
        for (const auto& e : ellipses) {
            const double rad = e.angle_deg * std::numbers::pi / 180.0;
            const bool along = e.axes.width >= e.axes.height;
            const double half = 0.7 * std::max(e.axes.width, e.axes.height);
            const cv::Point2d dir = along ? cv::Point2d(std::cos(rad), std::sin(rad))
                                          : cv::Point2d(-std::sin(rad), std::cos(rad));
            const cv::Point2d a = e.center - half * dir;
            const cv::Point2d b = e.center + half * dir;
            cv::line(skeleton, cv::Point(static_cast<int>(std::lround(a.x)), static_cast<int>(std::lround(a.y))),
                     cv::Point(static_cast<int>(std::lround(b.x)), static_cast<int>(std::lround(b.y))),
                     cv::Scalar(1), 1, cv::LINE_8);
        }
        cv::Mat fg_stroke = dilate_square(skeleton, grow) & (cv::countNonZero(eroded) > 0 ? eroded : gt);
        if (cv::countNonZero(fg_stroke) == 0) fg_stroke = gt.clone();

        // background stroke: rings around each object, kept clear of the GT
        cv::Mat forbidden = dilate_square(gt, 2 + grow);
        cv::Mat bg_stroke = cv::Mat::zeros(size, size, CV_8UC1);
        for (const auto& e : ellipses) {
            bg_stroke |= ellipse_mask(e, size, uniform(1.5, 1.9), cfg.scribble_width);
        }
        bg_stroke &= (forbidden == 0) / 255;
        if (cv::countNonZero(bg_stroke) == 0) {
            cv::rectangle(bg_stroke, cv::Rect(2, 2, size - 4, size - 4), cv::Scalar(1), cfg.scribble_width);
            bg_stroke &= (forbidden == 0) / 255;
        }

        ScribbleMap scribble(size, size, kUnlabeled);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                if (fg_stroke.at<std::uint8_t>(y, x) != 0) {
                    scribble.at(y, x) = kForeground;
                } else if (bg_stroke.at<std::uint8_t>(y, x) != 0) {
                    scribble.at(y, x) = kBackground;
                }
            }
        }

        char id[32];
        std::snprintf(id, sizeof(id), "synth_%04d", index);
        SampleRecord r{id, std::string("images/") + id + ".png", std::string("scribbles/") + id + ".png",
                       std::string("masks/") + id + ".png", index < cfg.n ? "train" : "test"};
        save_image(out_dir / r.image, image);
        save_scribble(out_dir / r.scribble, scribble);
        save_mask(out_dir / r.mask, gt_grid);
        records.push_back(std::move(r));
    }
    write_manifest(out_dir, records);
    return records;
}

}  // namespace scribbleseg
