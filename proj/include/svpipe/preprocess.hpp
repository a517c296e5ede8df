#pragma once

#include "svpipe/image.hpp"

namespace svpipe {

enum class Interp { bilinear, nearest };

/// Affine record mapping processed pixel coordinates back to the source image:
/// orig = processed / scale - pad. Coordinates are continuous, with pixel
/// (r, c) covering [r, r+1) x [c, c+1).
struct Provenance {
    int orig_rows = 0;
    int orig_cols = 0;
    int pad_top = 0;
    int pad_left = 0;
    /// Side of the zero-padded square.
    int padded_side = 0;
    /// Processed side / padded side.
    double scale = 1.0;

    [[nodiscard]] double to_original_row(double r) const { return r / scale - pad_top; }
    [[nodiscard]] double to_original_col(double c) const { return c / scale - pad_left; }
};

struct ImageTensor {
    ImageF image;
    Provenance provenance;
};

/// Centres `img` in a zero square of side max(rows, cols); odd padding puts
/// the extra pixel at the bottom/right.
ImageTensor pad_to_square(const ImageF& img);

/// Square resize to target x target. Bilinear uses half-pixel centres with
/// edge clamping; nearest picks the source pixel whose centre is closest,
/// rounding half down. Throws ContractViolation on non-square input.
ImageTensor resize(const ImageTensor& img, int target, Interp mode);

/// Per-image min-max scaling to [0, 1]; a constant image maps to zeros.
ImageTensor normalize_intensity(const ImageTensor& img);

/// pad_to_square, resize (bilinear), normalize_intensity.
ImageTensor prepare_for_model(const ImageF& img, int target);

/// Resizes an arbitrary raster with the same sampling rules as resize().
template <class T>
Image2D<T> resample(const Image2D<T>& img, int rows, int cols, Interp mode);

/// Maps a processed-resolution raster back onto the original pixel grid:
/// resample to the padded square, then drop the padding.
template <class T>
Image2D<T> to_original(const Image2D<T>& processed, const Provenance& p, Interp mode);

}  // namespace svpipe
