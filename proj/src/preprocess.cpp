#include "svpipe/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "svpipe/error.hpp"

namespace svpipe {

namespace {

// Source coordinate of the centre of output pixel `o` when n_in -> n_out.
double source_coord(int o, int n_in, int n_out) {
    return (o + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
}

int nearest_index(int o, int n_in, int n_out) {
    const double s = source_coord(o, n_in, n_out);
    return std::clamp(static_cast<int>(std::ceil(s - 0.5)), 0, n_in - 1);
}

struct Tap {
    int i0, i1;
    double f;
};

Tap linear_tap(int o, int n_in, int n_out) {
    const double s = std::clamp(source_coord(o, n_in, n_out), 0.0, static_cast<double>(n_in - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, n_in - 1);
    return {i0, i1, s - i0};
}

}  // namespace

template <class T>
Image2D<T> resample(const Image2D<T>& img, int rows, int cols, Interp mode) {
    if (rows < 1 || cols < 1 || img.rows < 1 || img.cols < 1) throw ContractViolation("resample: empty image");
    if (rows == img.rows && cols == img.cols) return img;
    Image2D<T> out(rows, cols);
    if (mode == Interp::nearest) {
        std::vector<int> cx(static_cast<std::size_t>(cols));
        for (int c = 0; c < cols; ++c) cx[static_cast<std::size_t>(c)] = nearest_index(c, img.cols, cols);
        for (int r = 0; r < rows; ++r) {
            const int sr = nearest_index(r, img.rows, rows);
            for (int c = 0; c < cols; ++c) out.at(r, c) = img.at(sr, cx[static_cast<std::size_t>(c)]);
        }
        return out;
    }
    std::vector<Tap> tx(static_cast<std::size_t>(cols));
    for (int c = 0; c < cols; ++c) tx[static_cast<std::size_t>(c)] = linear_tap(c, img.cols, cols);
    for (int r = 0; r < rows; ++r) {
        const Tap ty = linear_tap(r, img.rows, rows);
        for (int c = 0; c < cols; ++c) {
            const Tap& t = tx[static_cast<std::size_t>(c)];
            const double a = img.at(ty.i0, t.i0), b = img.at(ty.i0, t.i1);
            const double d = img.at(ty.i1, t.i0), e = img.at(ty.i1, t.i1);
            const double top = a + t.f * (b - a), bot = d + t.f * (e - d);
            out.at(r, c) = static_cast<T>(top + ty.f * (bot - top));
        }
    }
    return out;
}

template <class T>
Image2D<T> to_original(const Image2D<T>& processed, const Provenance& p, Interp mode) {
    const Image2D<T> square = resample(processed, p.padded_side, p.padded_side, mode);
    Image2D<T> out(p.orig_rows, p.orig_cols);
    for (int r = 0; r < p.orig_rows; ++r)
        for (int c = 0; c < p.orig_cols; ++c) out.at(r, c) = square.at(r + p.pad_top, c + p.pad_left);
    return out;
}

template Image2D<float> resample(const Image2D<float>&, int, int, Interp);
template Image2D<std::uint8_t> resample(const Image2D<std::uint8_t>&, int, int, Interp);
template Image2D<float> to_original(const Image2D<float>&, const Provenance&, Interp);
template Image2D<std::uint8_t> to_original(const Image2D<std::uint8_t>&, const Provenance&, Interp);

ImageTensor pad_to_square(const ImageF& img) {
    if (img.rows < 1 || img.cols < 1) throw ContractViolation("pad_to_square: empty image");
    const int S = std::max(img.rows, img.cols);
    ImageTensor out;
    out.provenance.orig_rows = img.rows;
    out.provenance.orig_cols = img.cols;
    out.provenance.pad_top = (S - img.rows) / 2;
    out.provenance.pad_left = (S - img.cols) / 2;
    out.provenance.padded_side = S;
    out.image = ImageF(S, S, 0.0f);
    for (int r = 0; r < img.rows; ++r)
        std::copy_n(img.data.begin() + static_cast<std::ptrdiff_t>(r) * img.cols, img.cols,
                    out.image.data.begin() +
                        static_cast<std::ptrdiff_t>(r + out.provenance.pad_top) * S + out.provenance.pad_left);
    return out;
}

ImageTensor resize(const ImageTensor& img, int target, Interp mode) {
    if (img.image.rows != img.image.cols)
        throw ContractViolation("resize: image must be square, got " + std::to_string(img.image.rows) + "x" +
                                std::to_string(img.image.cols));
    if (target < 1) throw ContractViolation("resize: target must be positive");
    ImageTensor out;
    out.image = resample(img.image, target, target, mode);
    out.provenance = img.provenance;
    out.provenance.scale = img.provenance.scale * static_cast<double>(target) / img.image.rows;
    return out;
}

ImageTensor normalize_intensity(const ImageTensor& img) {
    ImageTensor out = img;
    if (img.image.empty()) return out;
    const auto [lo, hi] = std::minmax_element(img.image.data.begin(), img.image.data.end());
    const double mn = *lo, range = static_cast<double>(*hi) - mn;
    if (!(range > 0)) {
        std::fill(out.image.data.begin(), out.image.data.end(), 0.0f);
        return out;
    }
    for (auto& v : out.image.data) v = static_cast<float>((v - mn) / range);
    return out;
}

ImageTensor prepare_for_model(const ImageF& img, int target) {
    return normalize_intensity(resize(pad_to_square(img), target, Interp::bilinear));
}

}  // namespace svpipe
