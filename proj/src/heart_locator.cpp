#include "svpipe/heart_locator.hpp"

#include <algorithm>
#include <cmath>

#include "svpipe/error.hpp"
#include "svpipe/preprocess.hpp"

namespace svpipe {

nlohmann::json to_json(const BoundingBox& b) { return {{"row0", b.row0}, {"col0", b.col0}, {"side", b.side}}; }

BoundingBox box_from_json(const nlohmann::json& j) {
    return {j.at("row0").get<int>(), j.at("col0").get<int>(), j.at("side").get<int>()};
}

std::vector<ImageF> predict_heart_probabilities(const nn::Network<float>& model, const CineStack& stack) {
    const int size = model.spec().input_size;
    std::vector<ImageF> out;
    out.reserve(stack.slices.size());
    for (const auto& s : stack.slices) {
        if (s.frames.empty()) throw ContractViolation("predict_heart_masks: slice without frames");
        const auto prepared = prepare_for_model(s.frames.front(), size);
        nn::Tensor<float> x({1, size, size});
        std::copy(prepared.image.data.begin(), prepared.image.data.end(), x.data.begin());
        const auto y = model.predict(x);
        ImageF fg(size, size);
        const std::size_t plane = static_cast<std::size_t>(size) * size;
        std::copy_n(y.data.begin() + static_cast<std::ptrdiff_t>(plane), plane, fg.data.begin());
        out.push_back(to_original(fg, prepared.provenance, Interp::bilinear));
    }
    return out;
}

Mask threshold_mask(const ImageF& prob, double threshold) {
    Mask m(prob.rows, prob.cols);
    for (std::size_t i = 0; i < prob.data.size(); ++i) m.data[i] = static_cast<double>(prob.data[i]) > threshold ? 1 : 0;
    return m;
}

std::vector<Mask> predict_heart_masks(const nn::Network<float>& model, const CineStack& stack, double threshold) {
    std::vector<Mask> out;
    for (const auto& p : predict_heart_probabilities(model, stack)) out.push_back(threshold_mask(p, threshold));
    return out;
}

int label_components_2d(const Mask& m, Image2D<int>& labels) {
    labels = Image2D<int>(m.rows, m.cols, 0);
    int n = 0;
    std::vector<std::pair<int, int>> stack;
    for (int r0 = 0; r0 < m.rows; ++r0)
        for (int c0 = 0; c0 < m.cols; ++c0) {
            if (!m.at(r0, c0) || labels.at(r0, c0)) continue;
            ++n;
            labels.at(r0, c0) = n;
            stack.assign(1, {r0, c0});
            while (!stack.empty()) {
                const auto [r, c] = stack.back();
                stack.pop_back();
                const std::array<std::pair<int, int>, 4> nb{{{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}}};
                for (const auto& [rr, cc] : nb) {
                    if (rr < 0 || cc < 0 || rr >= m.rows || cc >= m.cols) continue;
                    if (!m.at(rr, cc) || labels.at(rr, cc)) continue;
                    labels.at(rr, cc) = n;
                    stack.emplace_back(rr, cc);
                }
            }
        }
    return n;
}

std::vector<Mask> remove_islands(const std::vector<Mask>& masks) {
    if (masks.empty()) return {};
    const int rows = masks.front().rows, cols = masks.front().cols;
    for (const auto& m : masks)
        if (m.rows != rows || m.cols != cols) throw ContractViolation("remove_islands: slice masks differ in shape");
    Mask k(rows, cols, 1);
    for (const auto& m : masks)
        for (std::size_t i = 0; i < k.data.size(); ++i) k.data[i] = k.data[i] && m.data[i];
    const bool k_empty = count_nonzero(k) == 0;

    std::vector<Mask> out;
    out.reserve(masks.size());
    Image2D<int> labels;
    for (const auto& m : masks) {
        const int n = label_components_2d(m, labels);
        std::vector<char> keep(static_cast<std::size_t>(n) + 1, 0);
        if (!k_empty) {
            for (std::size_t i = 0; i < k.data.size(); ++i)
                if (k.data[i]) keep[static_cast<std::size_t>(labels.data[i])] = 1;
        } else if (n > 0) {
            std::vector<std::size_t> size(static_cast<std::size_t>(n) + 1, 0);
            for (int l : labels.data) ++size[static_cast<std::size_t>(l)];
            std::size_t best = 1;
            for (std::size_t l = 2; l <= static_cast<std::size_t>(n); ++l)
                if (size[l] > size[best]) best = l;
            keep[best] = 1;
        }
        keep[0] = 0;
        Mask o(rows, cols, 0);
        for (std::size_t i = 0; i < o.data.size(); ++i) o.data[i] = keep[static_cast<std::size_t>(labels.data[i])] ? 1 : 0;
        out.push_back(std::move(o));
    }
    return out;
}

std::array<int, 4> union_extent(const std::vector<Mask>& masks) {
    std::array<int, 4> e{INT32_MAX, INT32_MAX, -1, -1};
    for (const auto& m : masks)
        for (int r = 0; r < m.rows; ++r)
            for (int c = 0; c < m.cols; ++c)
                if (m.at(r, c)) {
                    e[0] = std::min(e[0], r);
                    e[1] = std::min(e[1], c);
                    e[2] = std::max(e[2], r);
                    e[3] = std::max(e[3], c);
                }
    if (e[2] < 0) throw CropFailure("no heart found");
    return e;
}

namespace {

// Places an interval of length `len` centred at `centre` inside [0, limit).
int place(double centre, int len, int limit) {
    const int start = static_cast<int>(std::floor(centre - len / 2.0));
    return std::clamp(start, 0, std::max(0, limit - len));
}

}  // namespace

BoundingBox expand_extent(const std::array<int, 4>& e, int rows, int cols, double expansion) {
    if (rows < 1 || cols < 1) throw ContractViolation("expand_extent: empty image");
    if (e[0] > e[2] || e[1] > e[3]) throw ContractViolation("expand_extent: inverted extent");
    const int side = std::max(e[2] - e[0] + 1, e[3] - e[1] + 1);
    int expanded = static_cast<int>(std::ceil(expansion * side - 1e-9));
    expanded = std::min({std::max(expanded, 1), rows, cols});
    const double cr = (e[0] + e[2] + 1) / 2.0, cc = (e[1] + e[3] + 1) / 2.0;
    return {place(cr, expanded, rows), place(cc, expanded, cols), expanded};
}

BoundingBox compute_bounding_box(const std::vector<Mask>& masks, double expansion) {
    if (masks.empty()) throw CropFailure("no heart found");
    return expand_extent(union_extent(masks), masks.front().rows, masks.front().cols, expansion);
}

CineStack crop_stack(const CineStack& stack, const BoundingBox& box) {
    if (box.side < 1 || box.row0 < 0 || box.col0 < 0 || box.row1() > stack.rows() || box.col1() > stack.cols())
        throw ContractViolation("crop_stack: box outside image");
    CineStack out = stack;
    for (auto& s : out.slices) {
        for (auto& f : s.frames) f = crop_image(f, box);
        const Vec3 row_dir{s.orientation[0], s.orientation[1], s.orientation[2]};
        const Vec3 col_dir{s.orientation[3], s.orientation[4], s.orientation[5]};
        for (std::size_t k = 0; k < 3; ++k)
            s.position[k] += box.row0 * s.pixel_spacing[0] * col_dir[k] + box.col0 * s.pixel_spacing[1] * row_dir[k];
        s.rows = box.side;
        s.cols = box.side;
    }
    return out;
}

double box_iou(const BoundingBox& a, const BoundingBox& b) {
    const long ih = std::max(0, std::min(a.row1(), b.row1()) - std::max(a.row0, b.row0));
    const long iw = std::max(0, std::min(a.col1(), b.col1()) - std::max(a.col0, b.col0));
    const long inter = ih * iw;
    const long uni = static_cast<long>(a.side) * a.side + static_cast<long>(b.side) * b.side - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace svpipe
