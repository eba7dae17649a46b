#include "scribbleseg/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>

namespace scribbleseg::metrics {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

bool is_fg(const BinaryMask& gt, std::size_t i) { return gt[i] != 0; }

double foreground_fraction(const BinaryMask& gt) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) count += is_fg(gt, i) ? 1 : 0;
    return static_cast<double>(count) / static_cast<double>(gt.size());
}

double mean_of(const ProbabilityMap& m) {
    double sum = 0;
    for (float v : m.values()) sum += v;
    return sum / static_cast<double>(m.size());
}

// Object-level similarity of `values` restricted to the pixels where `region` holds.
template <typename Value, typename Region>
double object_score(std::size_t n, Value&& value, Region&& region) {
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!region(i)) continue;
        sum += value(i);
        ++count;
    }
    if (count == 0) return 0.0;
    const double mean = sum / static_cast<double>(count);
    double sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!region(i)) continue;
        const double d = value(i) - mean;
        sq += d * d;
    }
    const double sigma = count > 1 ? std::sqrt(sq / static_cast<double>(count - 1)) : 0.0;
    return 2.0 * mean / (mean * mean + 1.0 + sigma + kEps);
}

double s_object(const ProbabilityMap& pred, const BinaryMask& gt) {
    const std::size_t n = gt.size();
    const double o_fg = object_score(
        n, [&](std::size_t i) { return static_cast<double>(pred[i]); },
        [&](std::size_t i) { return is_fg(gt, i); });
    const double o_bg = object_score(
        n, [&](std::size_t i) { return 1.0 - static_cast<double>(pred[i]); },
        [&](std::size_t i) { return !is_fg(gt, i); });
    const double u = foreground_fraction(gt);
    return u * o_fg + (1.0 - u) * o_bg;
}

// SSIM-style similarity over the block [y0,y1) x [x0,x1).
double block_ssim(const ProbabilityMap& pred, const BinaryMask& gt, int y0, int y1, int x0, int x1) {
    const long n = static_cast<long>(y1 - y0) * (x1 - x0);
    if (n <= 0) return 0.0;
    double sx = 0, sy = 0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            sx += pred.at(y, x);
            sy += gt.at(y, x) != 0 ? 1.0 : 0.0;
        }
    }
    const double mx = sx / static_cast<double>(n);
    const double my = sy / static_cast<double>(n);
    double vx = 0, vy = 0, cxy = 0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const double dx = pred.at(y, x) - mx;
            const double dy = (gt.at(y, x) != 0 ? 1.0 : 0.0) - my;
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
    }
    const double denom = static_cast<double>(n - 1) + kEps;
    vx /= denom;
    vy /= denom;
    cxy /= denom;
    const double alpha = 4.0 * mx * my * cxy;
    const double beta = (mx * mx + my * my) * (vx + vy);
    if (alpha != 0.0) return alpha / (beta + kEps);
    if (beta == 0.0) return 1.0;
    return 0.0;
}

double s_region(const ProbabilityMap& pred, const BinaryMask& gt) {
    const int h = gt.height();
    const int w = gt.width();
    double total = 0, sum_x = 0, sum_y = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (gt.at(y, x) == 0) continue;
            total += 1;
            sum_x += x + 1;
            sum_y += y + 1;
        }
    }
    // 1-based centroid = number of columns/rows in the left/top blocks
    const int cx = static_cast<int>(std::lround(sum_x / total));
    const int cy = static_cast<int>(std::lround(sum_y / total));
    const double area = static_cast<double>(h) * w;
    const double w1 = static_cast<double>(cx) * cy / area;
    const double w2 = static_cast<double>(w - cx) * cy / area;
    const double w3 = static_cast<double>(cx) * (h - cy) / area;
    const double w4 = 1.0 - w1 - w2 - w3;
    return w1 * block_ssim(pred, gt, 0, cy, 0, cx) + w2 * block_ssim(pred, gt, 0, cy, cx, w) +
           w3 * block_ssim(pred, gt, cy, h, 0, cx) + w4 * block_ssim(pred, gt, cy, h, cx, w);
}

// 7x7 Gaussian, sigma 5, normalised to unit sum.
std::array<double, 49> gaussian_kernel() {
    std::array<double, 49> k{};
    double max_v = 0, sum = 0;
    for (int dy = -3; dy <= 3; ++dy) {
        for (int dx = -3; dx <= 3; ++dx) {
            const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * 25.0));
            k[(dy + 3) * 7 + (dx + 3)] = v;
            max_v = std::max(max_v, v);
        }
    }
    for (double& v : k) {
        if (v < kEps * max_v) v = 0;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

struct NearestForeground {
    std::vector<std::size_t> index;  // nearest foreground pixel (row-major), ties -> smallest index
    std::vector<double> distance;
};

// Exact Euclidean nearest-foreground search. Only foreground pixels with a background
// 4-neighbour can be nearest to a background pixel, so the scan runs over those,
// bucketed by row and visited in order of increasing row distance.
NearestForeground nearest_foreground(const BinaryMask& gt) {
    const int h = gt.height();
    const int w = gt.width();
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (gt.at(y, x) == 0) continue;
            const bool boundary = (y > 0 && gt.at(y - 1, x) == 0) || (y + 1 < h && gt.at(y + 1, x) == 0) ||
                                  (x > 0 && gt.at(y, x - 1) == 0) || (x + 1 < w && gt.at(y, x + 1) == 0);
            if (boundary) rows[static_cast<std::size_t>(y)].push_back(x);
        }
    }
    NearestForeground out;
    out.index.assign(gt.size(), 0);
    out.distance.assign(gt.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (gt[i] != 0) {
                out.index[i] = i;
                continue;
            }
            long best_d2 = std::numeric_limits<long>::max();
            std::size_t best_i = 0;
            for (int d = 0; d < h; ++d) {
                if (static_cast<long>(d) * d > best_d2) break;
                for (int side = 0; side < (d == 0 ? 1 : 2); ++side) {
                    const int ry = side == 0 ? y - d : y + d;
                    if (ry < 0 || ry >= h) continue;
                    const long dy2 = static_cast<long>(ry - y) * (ry - y);
                    for (int rx : rows[static_cast<std::size_t>(ry)]) {
                        const long d2 = dy2 + static_cast<long>(rx - x) * (rx - x);
                        const std::size_t ri = static_cast<std::size_t>(ry) * w + rx;
                        if (d2 < best_d2 || (d2 == best_d2 && ri < best_i)) {
                            best_d2 = d2;
                            best_i = ri;
                        }
                    }
                }
            }
            out.index[i] = best_i;
            out.distance[i] = std::sqrt(static_cast<double>(best_d2));
        }
    }
    return out;
}

// Number of thresholds k/255 (k = 0..255) that `p` reaches, minus one; -1 if none.
int threshold_level(float p) {
    const double v = p;
    if (!(v >= 0.0)) return -1;
    int level = std::clamp(static_cast<int>(std::floor(v * 255.0)), 0, 255);
    while (level < 255 && v >= (level + 1) / 255.0) ++level;
    while (level >= 0 && v < level / 255.0) --level;
    return level;
}

double enhanced(double a, double b) {
    const double align = 2.0 * a * b / (a * a + b * b + kEps);
    return (align + 1.0) * (align + 1.0) / 4.0;
}

}  // namespace

DiceIou dice_iou(const ProbabilityMap& prediction, const BinaryMask& gt, float threshold) {
    require_same_shape(prediction, gt, "dice_iou");
    std::size_t p = 0, g = 0, inter = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool pi = prediction[i] >= threshold;
        const bool gi = gt[i] != 0;
        p += pi;
        g += gi;
        inter += pi && gi;
    }
    if (p + g == 0) return {1.0, 1.0};
    const double dice = 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
    const double iou = static_cast<double>(inter) / static_cast<double>(p + g - inter);
    return {dice, iou};
}

double mae(const ProbabilityMap& prediction, const BinaryMask& gt) {
    require_same_shape(prediction, gt, "mae");
    if (gt.size() == 0) throw ValidationError("mae: empty map");
    double sum = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        sum += std::abs(static_cast<double>(prediction[i]) - (gt[i] != 0 ? 1.0 : 0.0));
    }
    return sum / static_cast<double>(gt.size());
}

double s_measure(const ProbabilityMap& prediction, const BinaryMask& gt, double alpha) {
    require_same_shape(prediction, gt, "s_measure");
    if (gt.size() == 0) throw ValidationError("s_measure: empty map");
    const double fg = foreground_fraction(gt);
    if (fg == 0.0) return 1.0 - mean_of(prediction);
    if (fg == 1.0) return mean_of(prediction);
    const double q = alpha * s_object(prediction, gt) + (1.0 - alpha) * s_region(prediction, gt);
    return std::max(q, 0.0);
}

double weighted_f(const ProbabilityMap& prediction, const BinaryMask& gt) {
    require_same_shape(prediction, gt, "weighted_f");
    const int h = gt.height();
    const int w = gt.width();
    const std::size_t n = gt.size();
    std::size_t fg_count = 0;
    for (std::size_t i = 0; i < n; ++i) fg_count += is_fg(gt, i) ? 1 : 0;
    if (fg_count == 0) return 0.0;

    std::vector<double> error(n);
    for (std::size_t i = 0; i < n; ++i) {
        error[i] = std::abs(static_cast<double>(prediction[i]) - (is_fg(gt, i) ? 1.0 : 0.0));
    }
    const auto nearest = nearest_foreground(gt);
    std::vector<double> propagated(n);
    for (std::size_t i = 0; i < n; ++i) propagated[i] = error[nearest.index[i]];

    static const auto kernel = gaussian_kernel();
    double tp_weighted = 0, fp_weighted = 0, fg_error = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            double value = error[i];
            if (is_fg(gt, i)) {
                double filtered = 0;
                for (int dy = -3; dy <= 3; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= h) continue;
                    for (int dx = -3; dx <= 3; ++dx) {
                        const int xx = x + dx;
                        if (xx < 0 || xx >= w) continue;
                        filtered += kernel[(dy + 3) * 7 + (dx + 3)] *
                                    propagated[static_cast<std::size_t>(yy) * w + xx];
                    }
                }
                if (filtered < value) value = filtered;
                fg_error += value;
            } else {
                const double importance =
                    2.0 - std::exp(std::log(0.5) / 5.0 * nearest.distance[i]);
                fp_weighted += value * importance;
            }
        }
    }
    tp_weighted = static_cast<double>(fg_count) - fg_error;
    const double recall = 1.0 - fg_error / static_cast<double>(fg_count);
    const double precision = tp_weighted / (kEps + tp_weighted + fp_weighted);
    return 2.0 * recall * precision / (kEps + recall + precision);
}

double e_measure_max(const ProbabilityMap& prediction, const BinaryMask& gt) {
    require_same_shape(prediction, gt, "e_measure_max");
    const std::size_t n = gt.size();
    if (n == 0) throw ValidationError("e_measure_max: empty map");
    std::array<std::size_t, 256> hist_fg{};
    std::array<std::size_t, 256> hist_bg{};
    std::size_t gt_fg = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const bool g = is_fg(gt, i);
        gt_fg += g ? 1 : 0;
        const int level = threshold_level(prediction[i]);
        if (level < 0) continue;
        (g ? hist_fg : hist_bg)[static_cast<std::size_t>(level)] += 1;
    }
    const double total = static_cast<double>(n);
    double best = -1.0;
    std::size_t tp = 0, fp = 0;
    for (int k = 255; k >= 0; --k) {
        tp += hist_fg[static_cast<std::size_t>(k)];
        fp += hist_bg[static_cast<std::size_t>(k)];
        const std::size_t pred_fg = tp + fp;
        double sum = 0;
        if (gt_fg == 0) {
            sum = static_cast<double>(n - pred_fg);
        } else if (gt_fg == n) {
            sum = static_cast<double>(pred_fg);
        } else {
            const double mp = static_cast<double>(pred_fg) / total;
            const double mg = static_cast<double>(gt_fg) / total;
            const std::size_t fn = gt_fg - tp;
            const std::size_t tn = n - pred_fg - fn;
            sum = static_cast<double>(tp) * enhanced(1.0 - mp, 1.0 - mg) +
                  static_cast<double>(fp) * enhanced(1.0 - mp, -mg) +
                  static_cast<double>(fn) * enhanced(-mp, 1.0 - mg) +
                  static_cast<double>(tn) * enhanced(-mp, -mg);
        }
        best = std::max(best, sum / total);
    }
    return best;
}

ImageScores score_image(const ProbabilityMap& prediction, const BinaryMask& gt) {
    require_same_shape(prediction, gt, "score_image");
    const auto di = dice_iou(prediction, gt);
    return ImageScores{di.dice,
                       di.iou,
                       s_measure(prediction, gt),
                       weighted_f(prediction, gt),
                       e_measure_max(prediction, gt),
                       mae(prediction, gt)};
}

MetricReport aggregate(std::span<const ImageScores> scores) {
    if (scores.empty()) throw ValidationError("cannot evaluate an empty image list");
    MetricReport r;
    for (const auto& s : scores) {
        r.mdice += s.dice;
        r.miou += s.iou;
        r.s_measure += s.s_measure;
        r.wf_measure += s.wf_measure;
        r.e_measure_max += s.e_measure_max;
        r.mae += s.mae;
    }
    const double n = static_cast<double>(scores.size());
    r.mdice /= n;
    r.miou /= n;
    r.s_measure /= n;
    r.wf_measure /= n;
    r.e_measure_max /= n;
    r.mae /= n;
    r.n_images = static_cast<int>(scores.size());
    return r;
}

MetricReport evaluate_dataset(std::span<const EvalPair> pairs) {
    std::vector<ImageScores> scores;
    scores.reserve(pairs.size());
    for (const auto& [pred, gt] : pairs) scores.push_back(score_image(pred, gt));
    return aggregate(scores);
}

namespace {
std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}
}  // namespace

std::string report_csv(const MetricReport& r, const std::string& name) {
    return "name,n_images,mDice,mIoU,S_alpha,F_beta_w,E_phi_max,MAE\n" + name + "," +
           std::to_string(r.n_images) + "," + fmt6(r.mdice) + "," + fmt6(r.miou) + "," +
           fmt6(r.s_measure) + "," + fmt6(r.wf_measure) + "," + fmt6(r.e_measure_max) + "," +
           fmt6(r.mae) + "\n";
}

std::string report_markdown(const MetricReport& r, const std::string& name) {
    return "| Dataset | Images | mDice | mIoU | S_alpha | F_beta^w | E_phi^max | MAE |\n"
           "|---|---|---|---|---|---|---|---|\n| " +
           name + " | " + std::to_string(r.n_images) + " | " + fmt6(r.mdice) + " | " +
           fmt6(r.miou) + " | " + fmt6(r.s_measure) + " | " + fmt6(r.wf_measure) + " | " +
           fmt6(r.e_measure_max) + " | " + fmt6(r.mae) + " |\n";
}

}  // namespace scribbleseg::metrics
