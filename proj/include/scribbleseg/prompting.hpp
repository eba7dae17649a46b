#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

#include "scribbleseg/grid.hpp"

namespace scribbleseg {

/// Axis-aligned pixel rectangle [x0, x1) x [y0, y1).
struct Box {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const noexcept { return x1 - x0; }
    int height() const noexcept { return y1 - y0; }
    long area() const noexcept { return empty() ? 0L : static_cast<long>(width()) * height(); }
    bool empty() const noexcept { return x1 <= x0 || y1 <= y0; }
    bool contains(int x, int y) const noexcept { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool contains(const Box& other) const noexcept {
        return other.x0 >= x0 && other.y0 >= y0 && other.x1 <= x1 && other.y1 <= y1;
    }
    /// Non-empty and inside a width x height image.
    bool valid_in(int width, int height) const noexcept {
        return 0 <= x0 && x0 < x1 && x1 <= width && 0 <= y0 && y0 < y1 && y1 <= height;
    }

    friend bool operator==(const Box&, const Box&) = default;
};

std::ostream& operator<<(std::ostream& os, const Box& box);

/// Intersection of two boxes; may be empty.
Box intersect(const Box& a, const Box& b) noexcept;

/// Tight box around the foreground-labelled pixels of a scribble.
/// Throws ValidationError when the scribble has no foreground pixel.
Box scribble_to_box(const ScribbleMap& scribble);

/// Tight box around pixels with probability >= threshold, or nullopt if none pass.
std::optional<Box> prediction_to_box(const ProbabilityMap& probability, float threshold = 0.5F);

/// Grows a box by `margin` pixels on every side, clamped to [0,width] x [0,height].
Box augment_box(const Box& box, int margin, int width, int height);

/// Scales a margin expressed at the 320-pixel reference resolution to `working_size`.
int scale_margin(int margin_at_reference, int working_size, int reference_size = 320);

enum class PromptSource { Intersection, Box1, Box2 };
enum class PromptOrigin { Intersection, Fallback, Scribble, Prediction };

PromptSource parse_prompt_source(std::string_view text);
std::string_view to_string(PromptSource source) noexcept;
std::string_view to_string(PromptOrigin origin) noexcept;

struct PromptBox {
    Box box;
    PromptOrigin origin = PromptOrigin::Intersection;
};

/// Augmented scribble box intersected with the prediction box. Falls back to the
/// augmented scribble box when the prediction box is absent or the overlap is empty.
PromptBox make_prompt_box(const ScribbleMap& scribble, const ProbabilityMap& probability, int margin,
                          float threshold = 0.5F);

/// Prompt for one of the ablation variants. `Box1` uses the raw scribble box and
/// `Box2` the prediction box (falling back to the augmented scribble box when absent).
PromptBox make_prompt(PromptSource source, const ScribbleMap& scribble,
                      const ProbabilityMap& probability, int margin, float threshold = 0.5F);

/// Fraction of labelled scribble pixels on which the mask agrees with the label
/// (foreground -> 1, background -> 0). Throws when nothing is labelled.
double mask_scribble_agreement(const BinaryMask& mask, const ScribbleMap& scribble);

/// o_k = 1 iff agreement(mask_k, scribble_k) >= tau.
std::vector<std::uint8_t> build_indicator(std::span<const BinaryMask> masks,
                                          std::span<const ScribbleMap> scribbles, double tau = 0.5);

/// Mask that is 1 inside the box and 0 elsewhere.
BinaryMask box_mask(const Box& box, int height, int width);

}  // namespace scribbleseg
