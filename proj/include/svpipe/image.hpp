#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace svpipe {

/// Row-major 2D raster.
template <class T>
struct Image2D {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Image2D() = default;
    Image2D(int r, int c, T fill = T{})
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}

    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] bool empty() const { return data.empty(); }

    T& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    bool operator==(const Image2D&) const = default;
};

using ImageF = Image2D<float>;
using Mask = Image2D<std::uint8_t>;

/// Number of non-zero pixels.
template <class T>
[[nodiscard]] std::size_t count_nonzero(const Image2D<T>& img) {
    std::size_t n = 0;
    for (const auto& v : img.data) n += (v != T{}) ? 1 : 0;
    return n;
}

}  // namespace svpipe
