#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scribbleseg/error.hpp"

namespace scribbleseg {

/// Dense row-major 2-D array with value semantics. Used for every per-pixel
/// map that lives outside the autograd graph (scribbles, masks, probabilities).
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width),
          data_(static_cast<std::size_t>(checked_area(height, width)), fill) {}
    Grid(int height, int width, std::vector<T> data)
        : height_(height), width_(width), data_(std::move(data)) {
        if (data_.size() != static_cast<std::size_t>(checked_area(height, width))) {
            throw ValidationError("grid data size does not match " + std::to_string(height) + "x" +
                                  std::to_string(width));
        }
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& at(int y, int x) { return data_[index(y, x)]; }
    const T& at(int y, int x) const { return data_[index(y, x)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }

    bool same_shape(const auto& other) const noexcept {
        return height_ == other.height() && width_ == other.width();
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    static int checked_area(int height, int width) {
        if (height < 0 || width < 0) throw ValidationError("grid dimensions must be non-negative");
        return height * width;
    }
    std::size_t index(int y, int x) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

/// Scribble label values, stored as-is in indexed scribble files.
enum class Label : std::uint8_t { Unlabeled = 0, Foreground = 1, Background = 2 };

using ScribbleMap = Grid<std::uint8_t>;  // values are Label
using BinaryMask = Grid<std::uint8_t>;   // values are 0 or 1
using ProbabilityMap = Grid<float>;      // values in [0, 1]

inline constexpr std::uint8_t kUnlabeled = static_cast<std::uint8_t>(Label::Unlabeled);
inline constexpr std::uint8_t kForeground = static_cast<std::uint8_t>(Label::Foreground);
inline constexpr std::uint8_t kBackground = static_cast<std::uint8_t>(Label::Background);

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
    if (a.height() != b.height() || a.width() != b.width()) {
        throw ValidationError(std::string(what) + ": shape mismatch (" + std::to_string(a.height()) +
                              "x" + std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                              "x" + std::to_string(b.width()) + ")");
    }
}

}  // namespace scribbleseg
