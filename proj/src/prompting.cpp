#include "scribbleseg/prompting.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <string>

namespace scribbleseg {

std::ostream& operator<<(std::ostream& os, const Box& box) {
    return os << "Box(" << box.x0 << "," << box.y0 << "," << box.x1 << "," << box.y1 << ")";
}

Box intersect(const Box& a, const Box& b) noexcept {
    return Box{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1),
               std::min(a.y1, b.y1)};
}

namespace {

template <typename Pred>
std::optional<Box> tight_box(int height, int width, Pred&& selected) {
    int x0 = INT_MAX, y0 = INT_MAX, x1 = INT_MIN, y1 = INT_MIN;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            if (!selected(y, x)) continue;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x + 1);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y + 1);
        }
    }
    if (x0 == INT_MAX) return std::nullopt;
    return Box{x0, y0, x1, y1};
}

}  // namespace

Box scribble_to_box(const ScribbleMap& scribble) {
    auto box = tight_box(scribble.height(), scribble.width(),
                         [&](int y, int x) { return scribble.at(y, x) == kForeground; });
    if (!box) throw ValidationError("scribble has no foreground pixel; cannot build a prompt box");
    return *box;
}

std::optional<Box> prediction_to_box(const ProbabilityMap& probability, float threshold) {
    return tight_box(probability.height(), probability.width(),
                     [&](int y, int x) { return probability.at(y, x) >= threshold; });
}

Box augment_box(const Box& box, int margin, int width, int height) {
    return Box{std::clamp(box.x0 - margin, 0, width), std::clamp(box.y0 - margin, 0, height),
               std::clamp(box.x1 + margin, 0, width), std::clamp(box.y1 + margin, 0, height)};
}

int scale_margin(int margin_at_reference, int working_size, int reference_size) {
    if (reference_size <= 0) throw ValidationError("reference size must be positive");
    return static_cast<int>(std::lround(static_cast<double>(margin_at_reference) * working_size /
                                        reference_size));
}

PromptSource parse_prompt_source(std::string_view text) {
    if (text == "intersection") return PromptSource::Intersection;
    if (text == "box1") return PromptSource::Box1;
    if (text == "box2") return PromptSource::Box2;
    throw ValidationError("unknown prompt source '" + std::string(text) +
                          "' (expected intersection, box1 or box2)");
}

std::string_view to_string(PromptSource source) noexcept {
    switch (source) {
        case PromptSource::Intersection: return "intersection";
        case PromptSource::Box1: return "box1";
        case PromptSource::Box2: return "box2";
    }
    return "intersection";
}

std::string_view to_string(PromptOrigin origin) noexcept {
    switch (origin) {
        case PromptOrigin::Intersection: return "intersection";
        case PromptOrigin::Fallback: return "fallback";
        case PromptOrigin::Scribble: return "scribble";
        case PromptOrigin::Prediction: return "prediction";
    }
    return "fallback";
}

PromptBox make_prompt_box(const ScribbleMap& scribble, const ProbabilityMap& probability, int margin,
                          float threshold) {
    require_same_shape(scribble, probability, "make_prompt_box");
    const Box augmented =
        augment_box(scribble_to_box(scribble), margin, scribble.width(), scribble.height());
    const auto predicted = prediction_to_box(probability, threshold);
    if (!predicted) return {augmented, PromptOrigin::Fallback};
    const Box overlap = intersect(augmented, *predicted);
    if (overlap.empty()) return {augmented, PromptOrigin::Fallback};
    return {overlap, PromptOrigin::Intersection};
}

PromptBox make_prompt(PromptSource source, const ScribbleMap& scribble,
                      const ProbabilityMap& probability, int margin, float threshold) {
    switch (source) {
        case PromptSource::Intersection:
            return make_prompt_box(scribble, probability, margin, threshold);
        case PromptSource::Box1:
            return {scribble_to_box(scribble), PromptOrigin::Scribble};
        case PromptSource::Box2: {
            require_same_shape(scribble, probability, "make_prompt");
            if (auto predicted = prediction_to_box(probability, threshold)) {
                return {*predicted, PromptOrigin::Prediction};
            }
            return {augment_box(scribble_to_box(scribble), margin, scribble.width(),
                                scribble.height()),
                    PromptOrigin::Fallback};
        }
    }
    throw ValidationError("unknown prompt source");
}

double mask_scribble_agreement(const BinaryMask& mask, const ScribbleMap& scribble) {
    require_same_shape(mask, scribble, "mask_scribble_agreement");
    std::size_t labelled = 0;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < scribble.size(); ++i) {
        const auto label = scribble[i];
        if (label == kForeground) {
            ++labelled;
            agree += mask[i] != 0 ? 1 : 0;
        } else if (label == kBackground) {
            ++labelled;
            agree += mask[i] == 0 ? 1 : 0;
        }
    }
    if (labelled == 0) throw ValidationError("scribble has no labelled pixel");
    return static_cast<double>(agree) / static_cast<double>(labelled);
}

std::vector<std::uint8_t> build_indicator(std::span<const BinaryMask> masks,
                                          std::span<const ScribbleMap> scribbles, double tau) {
    if (masks.size() != scribbles.size()) {
        throw ValidationError("build_indicator: " + std::to_string(masks.size()) + " masks but " +
                              std::to_string(scribbles.size()) + " scribbles");
    }
    std::vector<std::uint8_t> indicator(masks.size(), 0);
    for (std::size_t k = 0; k < masks.size(); ++k) {
        indicator[k] = mask_scribble_agreement(masks[k], scribbles[k]) >= tau ? 1 : 0;
    }
    return indicator;
}

BinaryMask box_mask(const Box& box, int height, int width) {
    BinaryMask mask(height, width, 0);
    for (int y = std::max(0, box.y0); y < std::min(height, box.y1); ++y) {
        for (int x = std::max(0, box.x0); x < std::min(width, box.x1); ++x) mask.at(y, x) = 1;
    }
    return mask;
}

}  // namespace scribbleseg
