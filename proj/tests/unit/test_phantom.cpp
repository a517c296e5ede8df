#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include <gtest/gtest.h>

#include "dicom_builders.hpp"
#include "svpipe/error.hpp"
#include "svpipe/phantom.hpp"

namespace {

namespace ph = svpipe::phantom;
using std::numbers::pi;

ph::PhantomSpec small_spec(std::uint64_t seed = 3) {
    ph::PhantomSpec s;
    s.seed = seed;
    s.image_size = 64;
    s.pixel_spacing_mm = 6.0;
    s.phases = 10;
    s.slices = 6;
    s.distractor_slices = 6;
    return s;
}

std::string slurp(const svtest::fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Blood volume of one phase from the truth masks (mL).
double voxel_blood_ml(const ph::PhantomSpec& s, int phase) {
    const ph::Anatomy a(s);
    const auto plan = ph::plan_exam(s);
    double n = 0;
    for (const auto& sp : plan.series) {
        if (sp.role != ph::SeriesRole::sax) continue;
        for (const auto& pl : sp.planes) {
            const auto m = ph::render_labels(a, pl, phase);
            for (auto v : m.data) n += v == svpipe::kBloodPool ? 1 : 0;
        }
    }
    return n * s.pixel_spacing_mm * s.pixel_spacing_mm * s.slice_gap_mm / 1000.0;
}

TEST(PhantomSpec, DefaultsAreValid) { EXPECT_NO_THROW(ph::PhantomSpec{}.validate()); }

TEST(PhantomSpec, RejectsInvalidFields) {
    auto bad = [](auto mutate) {
        ph::PhantomSpec s;
        mutate(s);
        return s;
    };
    EXPECT_THROW(bad([](auto& s) { s.slices = 5; }).validate(), svpipe::ContractViolation);
    EXPECT_THROW(bad([](auto& s) { s.phases = 9; }).validate(), svpipe::ContractViolation);
    EXPECT_THROW(bad([](auto& s) { s.ed_radius_mm = 0; }).validate(), svpipe::ContractViolation);
    EXPECT_THROW(bad([](auto& s) { s.es_radius_fraction = 1.2; }).validate(), svpipe::ContractViolation);
    EXPECT_THROW(bad([](auto& s) { s.heart_offset_mm = {170, 0}; }).validate(), svpipe::ContractViolation);
    EXPECT_THROW(bad([](auto& s) { s.distractor_max_angle_deg = 95; }).validate(), svpipe::ContractViolation);
    EXPECT_THROW(bad([](auto& s) { s.noise = -1; }).validate(), svpipe::ContractViolation);
}

TEST(PhantomSpec, JsonRoundTripAndUnknownKeys) {
    const auto s = ph::randomized_spec(77);
    const nlohmann::json j = s;
    const auto back = j.get<ph::PhantomSpec>();
    EXPECT_EQ(nlohmann::json(back), j);
    EXPECT_THROW(nlohmann::json({{"slcies", 8}}).get<ph::PhantomSpec>(), svpipe::ContractViolation);
    EXPECT_THROW(nlohmann::json({{"slices", "eight"}}).get<ph::PhantomSpec>(), svpipe::ContractViolation);
    const auto partial = nlohmann::json({{"seed", 9}, {"slices", 10}}).get<ph::PhantomSpec>();
    EXPECT_EQ(partial.slices, 10);
    EXPECT_EQ(partial.phases, ph::PhantomSpec{}.phases);
}

TEST(PhantomSpec, RandomizedSpecsAreValidAndSeeded) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto s = ph::randomized_spec(seed);
        EXPECT_NO_THROW(s.validate());
        EXPECT_EQ(nlohmann::json(s), nlohmann::json(ph::randomized_spec(seed)));
    }
    EXPECT_NE(nlohmann::json(ph::randomized_spec(1)), nlohmann::json(ph::randomized_spec(2)));
}

TEST(AnalyticVolumes, ConstantRadiusCylinder) {
    ph::PhantomSpec s;
    s.apex_taper_fraction = 0;
    s.es_radius_fraction = 1.0;
    const auto v = ph::analytic_volumes(s);
    const double want = s.slices * pi * s.ed_radius_mm * s.ed_radius_mm * s.slice_gap_mm / 1000.0;
    for (double b : v.blood_ml) EXPECT_NEAR(b, want, 1e-12 * want);
    EXPECT_EQ(v.ed_phase, 0);
    EXPECT_EQ(v.es_phase, 0);
}

TEST(AnalyticVolumes, DoublingRadiusQuadruplesVolume) {
    ph::PhantomSpec s;
    const auto v1 = ph::analytic_volumes(s);
    s.ed_radius_mm *= 2;
    s.myo_thickness_mm = 1;
    const auto v2 = ph::analytic_volumes(s);
    for (std::size_t t = 0; t < v1.blood_ml.size(); ++t) EXPECT_NEAR(v2.blood_ml[t], 4 * v1.blood_ml[t], 1e-9);
}

TEST(AnalyticVolumes, EndDiastoleAtZeroEndSystoleAtHalfCycle) {
    for (int phases : {10, 16, 20, 25}) {
        ph::PhantomSpec s;
        s.phases = phases;
        const auto v = ph::analytic_volumes(s);
        EXPECT_EQ(v.ed_phase, 0);
        EXPECT_EQ(v.es_phase, phases / 2);  // odd N ties at floor(N/2) and ceil(N/2)
        EXPECT_LT(v.esv_ml, v.edv_ml);
        EXPECT_NEAR(v.sv_ml, v.edv_ml - v.esv_ml, 1e-12);
        EXPECT_NEAR(v.mass_g, v.myo_ed_ml * 1.05, 1e-12);
    }
}

TEST(AnalyticVolumes, MatchesIndependentSliceSum) {
    // Oracle: direct per-slice closed form with the taper written out.
    const auto s = ph::randomized_spec(5);
    const auto v = ph::analytic_volumes(s);
    const double length = s.slices * s.slice_gap_mm, taper_len = s.apex_taper_fraction * length;
    for (int t = 0; t < s.phases; ++t) {
        const double k = 1 - (1 - s.es_radius_fraction) * (1 - std::cos(2 * pi * t / s.phases)) / 2;
        double sum = 0;
        for (int i = 0; i < s.slices; ++i) {
            const double z = (i + 0.5) * s.slice_gap_mm;
            double g = 1;
            if (z > length - taper_len) {
                const double u = (z - (length - taper_len)) / taper_len;
                g = std::sqrt(1 - u * u);
            }
            sum += pi * std::pow(s.ed_radius_mm * g * k, 2) * s.slice_gap_mm;
        }
        EXPECT_NEAR(v.blood_ml[static_cast<std::size_t>(t)], sum / 1000, 1e-9);
    }
}

TEST(PhantomTruth, VoxelizedVolumeWithinThreePercentAndConverges) {
    ph::PhantomSpec s;
    s.distractor_count = 0;
    const auto v = ph::analytic_volumes(s);
    ph::PhantomSpec fine = s;
    fine.image_size = 512;
    fine.pixel_spacing_mm = 0.75;
    for (int phase : {v.ed_phase, v.es_phase}) {
        const double want = v.blood_ml[static_cast<std::size_t>(phase)];
        EXPECT_LE(std::abs(voxel_blood_ml(s, phase) - want) / want, 0.03) << phase;
        EXPECT_LE(std::abs(voxel_blood_ml(fine, phase) - want) / want, 0.015) << phase;
    }
}

TEST(PhantomTruth, MyocardiumSurroundsBloodPool) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto s = ph::randomized_spec(seed, small_spec());
        s.image_size = 128;
        s.pixel_spacing_mm = 3.0;
        const auto truth = ph::make_truth(ph::plan_exam(s), ph::Anatomy(s));
        const auto& L = truth.labels;
        for (int p = 0; p < L.phases; ++p)
            for (int sl = 0; sl < L.slices; ++sl)
                for (int r = 1; r + 1 < L.rows; ++r)
                    for (int c = 1; c + 1 < L.cols; ++c) {
                        if (L.at(p, sl, r, c) != svpipe::kBloodPool) continue;
                        for (auto [dr, dc] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}})
                            ASSERT_NE(L.at(p, sl, r + dr, c + dc), svpipe::kBackground)
                                << seed << " " << p << " " << sl;
                    }
    }
}

TEST(PhantomTruth, HeartExtentCoversEveryPhase) {
    const auto s = small_spec();
    const auto truth = ph::make_truth(ph::plan_exam(s), ph::Anatomy(s));
    ASSERT_EQ(truth.heart_extent.size(), static_cast<std::size_t>(s.slices));
    for (int sl = 0; sl < s.slices; ++sl) {
        const auto e = truth.heart_extent[static_cast<std::size_t>(sl)];
        ASSERT_GE(e[0], 0);
        for (int p = 0; p < s.phases; ++p)
            for (int r = 0; r < s.image_size; ++r)
                for (int c = 0; c < s.image_size; ++c)
                    if (truth.labels.at(p, sl, r, c)) {
                        EXPECT_TRUE(r >= e[0] && r <= e[2] && c >= e[1] && c <= e[3]);
                    }
    }
}

TEST(PhantomPlan, DistractorsSitAtRequestedAngles) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto s = ph::randomized_spec(seed);
        s.distractor_count = 4;
        const ph::Anatomy a(s);
        const auto plan = ph::plan_exam(s);
        int distractors = 0;
        for (const auto& sp : plan.series) {
            if (sp.role != ph::SeriesRole::distractor) continue;
            ++distractors;
            const auto n = sp.planes[0].normal();
            const double angle = std::acos(std::min(1.0, std::abs(svpipe::dot(n, a.axis())))) * 180 / pi;
            EXPECT_GE(angle, s.distractor_min_angle_deg - 1e-6);
            EXPECT_LE(angle, s.distractor_max_angle_deg + 1e-6);
        }
        EXPECT_EQ(distractors, 4);
    }
}

TEST(PhantomPlan, ShortAxisNormalIsTheLongAxis) {
    const auto s = ph::randomized_spec(12);
    const ph::Anatomy a(s);
    for (const auto& sp : ph::plan_exam(s).series) {
        if (sp.role != ph::SeriesRole::sax) continue;
        for (const auto& pl : sp.planes) {
            const auto n = pl.normal();
            for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(n[k], a.axis()[k], 1e-12);
        }
    }
}

TEST(PhantomExam, SameSeedGivesIdenticalFiles) {
    const auto d1 = svtest::scratch_dir("phantom_det1"), d2 = svtest::scratch_dir("phantom_det2");
    ph::generate_phantom_exam(small_spec(), d1);
    ph::generate_phantom_exam(small_spec(), d2);
    std::vector<svtest::fs::path> files;
    for (const auto& e : svtest::fs::recursive_directory_iterator(d1))
        if (e.is_regular_file()) files.push_back(svtest::fs::relative(e.path(), d1));
    std::size_t n2 = 0;
    for (const auto& e : svtest::fs::recursive_directory_iterator(d2)) n2 += e.is_regular_file() ? 1 : 0;
    ASSERT_EQ(files.size(), n2);
    for (const auto& f : files) EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
    svtest::fs::remove_all(d1);
    svtest::fs::remove_all(d2);
}

TEST(PhantomExam, TruthFilesRoundTrip) {
    const auto dir = svtest::scratch_dir("phantom_truth");
    const auto truth = ph::generate_phantom_exam(small_spec(8), dir);
    const auto back = ph::load_truth(dir);
    EXPECT_EQ(back.exam_id, truth.exam_id);
    EXPECT_EQ(back.labels, truth.labels);
    EXPECT_EQ(back.heart_extent, truth.heart_extent);
    EXPECT_EQ(back.volumes.blood_ml, truth.volumes.blood_ml);
    EXPECT_EQ(back.partition.size(), truth.partition.size());
    EXPECT_EQ(ph::truth_to_json(back), ph::truth_to_json(truth));
    svtest::fs::remove_all(dir);
}

TEST(PhantomExam, RenderedPixelsMatchStoredDicom) {
    const auto s = small_spec(4);
    const auto dir = svtest::scratch_dir("phantom_pixels");
    ph::generate_phantom_exam(s, dir);
    const auto parsed = svpipe::parse_exam_directory(dir);
    const ph::Anatomy a(s);
    const auto plan = ph::plan_exam(s);
    int checked = 0;
    for (const auto& img : parsed.images) {
        for (std::size_t si = 0; si < plan.series.size(); ++si) {
            if (plan.series[si].series_uid != img.series_uid) continue;
            const auto& sp = plan.series[si];
            const auto plane = static_cast<std::size_t>((img.instance_number - 1) / sp.frames);
            const int frame = static_cast<int>((img.instance_number - 1) % sp.frames);
            EXPECT_EQ(ph::render_image(a, plan, si, plane, frame), img.pixels);
            ++checked;
        }
    }
    EXPECT_EQ(checked, static_cast<int>(parsed.images.size()));
    svtest::fs::remove_all(dir);
}

TEST(LabelVolumeIo, RoundTripAndRejectsCorruption) {
    const auto dir = svtest::scratch_dir("svlv");
    svpipe::LabelVolume v(2, 3, 4, 5);
    v.pixel_spacing = {1.25, 1.5};
    v.slice_gap = 7.5;
    for (std::size_t i = 0; i < v.labels.size(); ++i) v.labels[i] = static_cast<std::uint8_t>(i % 3);
    svpipe::write_label_volume(dir / "a.svlv", v);
    EXPECT_EQ(svpipe::read_label_volume(dir / "a.svlv"), v);
    std::string bytes = slurp(dir / "a.svlv");
    std::ofstream(dir / "short.svlv", std::ios::binary) << bytes.substr(0, bytes.size() - 1);
    EXPECT_THROW(svpipe::read_label_volume(dir / "short.svlv"), svpipe::Error);
    bytes.back() = 7;
    std::ofstream(dir / "bad.svlv", std::ios::binary) << bytes;
    EXPECT_THROW(svpipe::read_label_volume(dir / "bad.svlv"), svpipe::Error);
    std::ofstream(dir / "magic.svlv", std::ios::binary) << "XXXX" << bytes.substr(4);
    EXPECT_THROW(svpipe::read_label_volume(dir / "magic.svlv"), svpipe::Error);
    svtest::fs::remove_all(dir);
}

}  // namespace
