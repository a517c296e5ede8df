#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "svpipe/error.hpp"
#include "svpipe/preprocess.hpp"

namespace {

using svpipe::ImageF;
using svpipe::ImageTensor;
using svpipe::Interp;

ImageF random_image(std::mt19937_64& rng, int rows, int cols, float lo = 0, float hi = 1000) {
    ImageF img(rows, cols);
    std::uniform_real_distribution<float> u(lo, hi);
    for (auto& v : img.data) v = u(rng);
    return img;
}

TEST(PadToSquare, SquareInputUnchanged) {
    std::mt19937_64 rng(1);
    const ImageF img = random_image(rng, 100, 100);
    const auto t = svpipe::pad_to_square(img);
    EXPECT_EQ(t.image, img);
    EXPECT_EQ(t.provenance.pad_top, 0);
    EXPECT_EQ(t.provenance.pad_left, 0);
}

TEST(PadToSquare, CentresLandscapeImage) {
    ImageF img(192, 256, 1.0f);
    const auto t = svpipe::pad_to_square(img);
    ASSERT_EQ(t.image.rows, 256);
    ASSERT_EQ(t.image.cols, 256);
    EXPECT_EQ(t.provenance.pad_top, 32);
    for (int r = 0; r < 256; ++r) EXPECT_EQ(t.image.at(r, 100), (r >= 32 && r < 224) ? 1.0f : 0.0f) << r;
}

TEST(PadToSquare, OddPaddingGoesRight) {
    ImageF img(5, 4, 2.0f);
    const auto t = svpipe::pad_to_square(img);
    EXPECT_EQ(t.image.cols, 5);
    EXPECT_EQ(t.provenance.pad_left, 0);
    for (int r = 0; r < 5; ++r) {
        EXPECT_EQ(t.image.at(r, 0), 2.0f);
        EXPECT_EQ(t.image.at(r, 4), 0.0f);
    }
    ImageF tall(3, 6, 1.0f);
    EXPECT_EQ(svpipe::pad_to_square(tall).provenance.pad_top, 1);
}

TEST(PadToSquare, PreservesValuesAndSum) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 200; ++t) {
        const int rows = 1 + static_cast<int>(rng() % 40), cols = 1 + static_cast<int>(rng() % 40);
        const ImageF img = random_image(rng, rows, cols);
        const auto out = svpipe::pad_to_square(img);
        double a = 0, b = 0;
        for (float v : img.data) a += v;
        for (float v : out.image.data) b += v;
        EXPECT_DOUBLE_EQ(a, b);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                ASSERT_EQ(out.image.at(r + out.provenance.pad_top, c + out.provenance.pad_left), img.at(r, c));
    }
}

TEST(Resize, IdentityAndConstant) {
    std::mt19937_64 rng(3);
    const auto sq = svpipe::pad_to_square(random_image(rng, 64, 64));
    EXPECT_EQ(svpipe::resize(sq, 64, Interp::bilinear).image, sq.image);
    EXPECT_EQ(svpipe::resize(sq, 64, Interp::nearest).image, sq.image);
    const auto flat = svpipe::pad_to_square(ImageF(37, 37, 5.5f));
    for (int target : {1, 16, 37, 80, 128})
        for (auto mode : {Interp::bilinear, Interp::nearest})
            for (float v : svpipe::resize(flat, target, mode).image.data) ASSERT_EQ(v, 5.5f);
}

TEST(Resize, NonSquareRejected) {
    ImageTensor t{ImageF(3, 4), {}};
    EXPECT_THROW(svpipe::resize(t, 8, Interp::bilinear), svpipe::ContractViolation);
}

TEST(Resize, NearestIntroducesNoNewLabels) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 200; ++t) {
        const int side = 1 + static_cast<int>(rng() % 50);
        ImageF img(side, side);
        for (auto& v : img.data) v = static_cast<float>(rng() % 3);
        const int target = 1 + static_cast<int>(rng() % 100);
        const auto out = svpipe::resize(svpipe::pad_to_square(img), target, Interp::nearest);
        const std::set<float> before(img.data.begin(), img.data.end());
        for (float v : out.image.data) ASSERT_TRUE(before.count(v)) << v;
    }
}

TEST(Resize, NearestRoundsHalfDown) {
    // 2 -> 4: output centres at source 0.25 and 0.75 of pixel pairs; 4 -> 2:
    // centres at 0.5 and 2.5, which round down to 0 and 2.
    ImageF img(4, 4);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) img.at(r, c) = static_cast<float>(r * 4 + c);
    const auto out = svpipe::resize(svpipe::pad_to_square(img), 2, Interp::nearest);
    EXPECT_EQ(out.image.data, (std::vector<float>{0, 2, 8, 10}));
}

TEST(Normalize, MinMaxScaling) {
    ImageTensor t{ImageF(1, 3), {}};
    t.image.data = {200, 700, 1200};
    EXPECT_EQ(svpipe::normalize_intensity(t).image.data, (std::vector<float>{0.0f, 0.5f, 1.0f}));
    ImageTensor flat{ImageF(2, 2, 7.0f), {}};
    for (float v : svpipe::normalize_intensity(flat).image.data) EXPECT_EQ(v, 0.0f);
    ImageTensor unit{ImageF(1, 3), {}};
    unit.image.data = {0.0f, 0.25f, 1.0f};
    EXPECT_EQ(svpipe::normalize_intensity(unit).image, unit.image);
}

TEST(Provenance, RecordsScaleAndPadding) {
    const auto t = svpipe::prepare_for_model(ImageF(192, 256, 1.0f), 128);
    EXPECT_DOUBLE_EQ(t.provenance.scale, 0.5);
    EXPECT_EQ(t.provenance.pad_top, 32);
    EXPECT_DOUBLE_EQ(t.provenance.to_original_row(16.0), 0.0);
    EXPECT_DOUBLE_EQ(t.provenance.to_original_col(64.0), 128.0);
}

// A bright rectangle is located in processed coordinates and the box mapped
// back. Upsampling loses nothing, so the box must enclose the rectangle;
// downsampling can skip source rows between sample centres, so edges may move
// inward by at most one processed-pixel footprint. Both directions are bounded
// by that footprint plus one pixel.
TEST(Provenance, InverseBoxMappingContainsAnatomy) {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 300; ++t) {
        const int rows = 20 + static_cast<int>(rng() % 200), cols = 20 + static_cast<int>(rng() % 200);
        const int r0 = static_cast<int>(rng() % (rows - 4)), c0 = static_cast<int>(rng() % (cols - 4));
        const int r1 = r0 + 1 + static_cast<int>(rng() % (rows - r0 - 1));
        const int c1 = c0 + 1 + static_cast<int>(rng() % (cols - c0 - 1));
        ImageF img(rows, cols, 0.0f);
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) img.at(r, c) = 1.0f;
        const int target = 64 + static_cast<int>(rng() % 200);
        const auto p = svpipe::prepare_for_model(img, target);
        int pr0 = target, pr1 = -1, pc0 = target, pc1 = -1;
        for (int r = 0; r < target; ++r)
            for (int c = 0; c < target; ++c)
                if (p.image.at(r, c) > 0) {
                    pr0 = std::min(pr0, r);
                    pr1 = std::max(pr1, r);
                    pc0 = std::min(pc0, c);
                    pc1 = std::max(pc1, c);
                }
        ASSERT_GE(pr1, 0);
        const auto& pv = p.provenance;
        const double or0 = pv.to_original_row(pr0), or1 = pv.to_original_row(pr1 + 1);
        const double oc0 = pv.to_original_col(pc0), oc1 = pv.to_original_col(pc1 + 1);
        const double inward = pv.scale >= 1 ? 1e-9 : 1.0 / pv.scale;
        const double outward = 1.0 / pv.scale + 1.0;
        EXPECT_LE(or0, r0 + inward);
        EXPECT_GE(or1, r1 + 1 - inward);
        EXPECT_LE(oc0, c0 + inward);
        EXPECT_GE(oc1, c1 + 1 - inward);
        EXPECT_GE(or0, r0 - outward);
        EXPECT_LE(or1, r1 + 1 + outward);
        EXPECT_GE(oc0, c0 - outward);
        EXPECT_LE(oc1, c1 + 1 + outward);
    }
}

TEST(Provenance, ToOriginalRestoresMaskAtEqualSize) {
    std::mt19937_64 rng(7);
    svpipe::Mask m(30, 50);
    for (auto& v : m.data) v = static_cast<std::uint8_t>(rng() % 2);
    ImageF f(30, 50);
    for (std::size_t i = 0; i < f.size(); ++i) f.data[i] = m.data[i];
    const auto sq = svpipe::pad_to_square(f);
    svpipe::Mask processed(sq.image.rows, sq.image.cols);
    for (std::size_t i = 0; i < processed.size(); ++i) processed.data[i] = static_cast<std::uint8_t>(sq.image.data[i]);
    EXPECT_EQ(svpipe::to_original(processed, sq.provenance, Interp::nearest), m);
}

}  // namespace
