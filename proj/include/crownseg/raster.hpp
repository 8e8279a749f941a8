#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace crownseg {

/// Row-major W x H plane.
template <typename T>
struct Grid {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(std::size_t w, std::size_t h, T fill = T{}) : width(w), height(h), data(w * h, fill) {}

    T& operator()(std::size_t x, std::size_t y) { return data[y * width + x]; }
    const T& operator()(std::size_t x, std::size_t y) const { return data[y * width + x]; }
    std::size_t size() const noexcept { return data.size(); }

    bool operator==(const Grid&) const = default;
};

/// Class ids per pixel, kUnlabeled (-1) outside the annotated set.
struct LabelMask : Grid<std::int32_t> {
    using Grid::Grid;
    bool operator==(const LabelMask&) const = default;
};

/// Crown instance ids per pixel: 0 background, k >= 1 crown k.
struct ItcMask : Grid<std::int32_t> {
    using Grid::Grid;
    bool operator==(const ItcMask&) const = default;
};

/// Real-valued plane; distance maps live in [0, 1].
struct DistanceMap : Grid<float> {
    using Grid::Grid;
    bool operator==(const DistanceMap&) const = default;
};

/// Band-sequential W x H x B cube (band, then row-major pixels).
struct Raster {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t bands = 0;
    std::vector<float> data;

    Raster() = default;
    Raster(std::size_t w, std::size_t h, std::size_t b, float fill = 0.0f)
        : width(w), height(h), bands(b), data(w * h * b, fill) {}

    float& at(std::size_t band, std::size_t x, std::size_t y) { return data[(band * height + y) * width + x]; }
    float at(std::size_t band, std::size_t x, std::size_t y) const { return data[(band * height + y) * width + x]; }

    bool operator==(const Raster&) const = default;
};

/// Class-sequential W x H x C probability volume.
struct ProbabilityVolume {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t classes = 0;
    std::vector<float> data;

    ProbabilityVolume() = default;
    ProbabilityVolume(std::size_t w, std::size_t h, std::size_t c, float fill = 0.0f)
        : width(w), height(h), classes(c), data(w * h * c, fill) {}

    float& at(std::size_t c, std::size_t x, std::size_t y) { return data[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t x, std::size_t y) const { return data[(c * height + y) * width + x]; }

    bool operator==(const ProbabilityVolume&) const = default;
};

/// Mirror index into [0, n) without repeating the edge sample (reflect-101).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) i += period;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}

} // namespace crownseg
