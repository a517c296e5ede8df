#pragma once

#include <array>
#include <vector>

#include <json.hpp>

#include "svpipe/image.hpp"
#include "svpipe/ingest.hpp"
#include "svpipe/nn/models.hpp"

namespace svpipe {

/// Square crop in original-image pixel coordinates.
struct BoundingBox {
    int row0 = 0;
    int col0 = 0;
    int side = 1;

    [[nodiscard]] int row1() const { return row0 + side; }  // exclusive
    [[nodiscard]] int col1() const { return col0 + side; }  // exclusive
    [[nodiscard]] bool contains(int r, int c) const { return r >= row0 && r < row1() && c >= col0 && c < col1(); }
    bool operator==(const BoundingBox&) const = default;
};

nlohmann::json to_json(const BoundingBox& b);
BoundingBox box_from_json(const nlohmann::json& j);

/// Foreground probability of the locator (channel 1) on the first frame of
/// every slice, mapped back to the original pixel grid by bilinear resampling.
std::vector<ImageF> predict_heart_probabilities(const nn::Network<float>& model, const CineStack& stack);

/// prob > threshold (strict).
Mask threshold_mask(const ImageF& prob, double threshold = 0.5);

/// predict_heart_probabilities followed by threshold_mask.
std::vector<Mask> predict_heart_masks(const nn::Network<float>& model, const CineStack& stack, double threshold = 0.5);

/// 4-connected component labels (1..n in raster order of first pixel, 0 for
/// background). Returns n.
int label_components_2d(const Mask& m, Image2D<int>& labels);

/// Keeps, per slice, the 4-connected components touching the pixelwise AND of
/// all slices; when that intersection is empty keeps only each slice's largest
/// component (earliest in raster order on ties).
std::vector<Mask> remove_islands(const std::vector<Mask>& masks);

/// Inclusive tight extent {row0, col0, row1, col1} of the union of masks.
/// Throws CropFailure ("no heart found") when the union is empty.
std::array<int, 4> union_extent(const std::vector<Mask>& masks);

/// Square of side max(h, w) centred on the extent, side scaled by `expansion`
/// and rounded up, translated into the image and clamped only when larger.
BoundingBox expand_extent(const std::array<int, 4>& extent, int rows, int cols, double expansion = 1.5);

/// union_extent followed by expand_extent.
BoundingBox compute_bounding_box(const std::vector<Mask>& masks, double expansion = 1.5);

/// Crops every frame of every slice; positions shift to the new pixel (0,0),
/// spacing and slice gap are unchanged. Throws ContractViolation when the box
/// leaves the image.
CineStack crop_stack(const CineStack& stack, const BoundingBox& box);

template <class T>
Image2D<T> crop_image(const Image2D<T>& img, const BoundingBox& box) {
    Image2D<T> out(box.side, box.side);
    for (int r = 0; r < box.side; ++r)
        for (int c = 0; c < box.side; ++c) out.at(r, c) = img.at(box.row0 + r, box.col0 + c);
    return out;
}

double box_iou(const BoundingBox& a, const BoundingBox& b);

}  // namespace svpipe
