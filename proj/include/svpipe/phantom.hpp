#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "svpipe/image.hpp"
#include "svpipe/ingest.hpp"
#include "svpipe/label_volume.hpp"

namespace svpipe::phantom {

/// Synthetic cine exam: a tapered cylindrical ventricle along a tilted long
/// axis, imaged by one short-axis stack plus off-axis distractor stacks.
struct PhantomSpec {
    std::uint64_t seed = 1;
    /// Defaults to "phantom-<seed>" when empty.
    std::string exam_id;
    int image_size = 256;
    double pixel_spacing_mm = 1.5;
    double slice_gap_mm = 8.0;
    int slices = 8;
    int phases = 20;
    /// Blood-pool radius at end-diastole in the untapered basal region.
    double ed_radius_mm = 24.0;
    /// Radius at end-systole as a fraction of the end-diastolic radius.
    double es_radius_fraction = 0.7;
    double myo_thickness_mm = 8.0;
    /// Fraction of the long axis occupied by the hemi-ellipsoidal apex taper (0 = cylinder).
    double apex_taper_fraction = 0.4;
    /// Heart centre in the short-axis image relative to the image centre (row, col).
    std::array<double, 2> heart_offset_mm{0.0, 0.0};
    double axis_tilt_deg = 35.0;
    double axis_azimuth_deg = 30.0;
    double inplane_rotation_deg = 0.0;
    int distractor_count = 2;
    double distractor_min_angle_deg = 50.0;
    double distractor_max_angle_deg = 90.0;
    int distractor_slices = 7;
    double distractor_gap_mm = 8.0;
    /// Gaussian noise standard deviation relative to the blood-pool intensity scale.
    double noise = 0.02;
    double bsa_m2 = 1.6;
    bool stomach = true;
    bool localizer = true;
    /// Write each short-axis slice as its own series.
    bool sax_series_per_slice = false;
    bool trigger_times = true;

    /// Throws ContractViolation when the spec cannot produce a valid exam.
    void validate() const;
    [[nodiscard]] std::string resolved_exam_id() const;
    [[nodiscard]] double long_axis_mm() const { return slices * slice_gap_mm; }
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, PhantomSpec& s);

/// Spec with anatomy, pose and acquisition drawn from plausible ranges;
/// image size, spacing and feature switches are taken from `base`.
PhantomSpec randomized_spec(std::uint64_t seed, const PhantomSpec& base = {});

/// Multiplier on the end-diastolic radius at `phase`:
/// 1 − (1 − f)(1 − cos(2π·phase/N))/2, maximal at 0 and minimal at N/2.
double radius_factor(const PhantomSpec& s, int phase);
/// Radius multiplier along the long axis (1 in the basal region, hemi-ellipse
/// toward the apex, 0 outside the ventricle).
double taper(const PhantomSpec& s, double z_mm);
/// Depth of each short-axis slice centre along the long axis from the base.
std::vector<double> slice_depths(const PhantomSpec& s);

struct AnalyticVolumes {
    std::vector<double> blood_ml;
    double myo_ed_ml = 0;
    int ed_phase = 0;
    int es_phase = 0;
    double edv_ml = 0;
    double esv_ml = 0;
    double sv_ml = 0;
    double ef = 0;
    double mass_g = 0;
};

/// Closed-form stack volumes: Σ_slices π r² · gap for the blood pool and
/// the ring area · gap for the myocardium; mass uses 1.05 g/mL.
AnalyticVolumes analytic_volumes(const PhantomSpec& s);

/// Image plane in patient coordinates; `origin` is the centre of pixel (0,0).
struct Plane {
    Vec3 origin{};
    Vec3 row_dir{};  // direction of increasing column index
    Vec3 col_dir{};  // direction of increasing row index
    int rows = 0;
    int cols = 0;
    double spacing = 1.0;

    [[nodiscard]] Vec3 point(double r, double c) const;
    [[nodiscard]] Vec3 normal() const { return cross(row_dir, col_dir); }
};

/// Tissue model evaluated at patient-space points.
class Anatomy {
public:
    explicit Anatomy(const PhantomSpec& s);

    /// Label at a point for the given phase: 0 background, 1 blood, 2 myocardium.
    [[nodiscard]] std::uint8_t label_at(const Vec3& p, int phase) const;
    /// Noise-free intensity in [0, 1] with one-pixel soft edges.
    [[nodiscard]] double intensity_at(const Vec3& p, int phase) const;

    [[nodiscard]] const Vec3& base_centre() const { return base_; }
    [[nodiscard]] const Vec3& axis() const { return axis_; }
    /// Unit vectors completing a right-handed frame with the axis.
    [[nodiscard]] const Vec3& sax_row_dir() const { return row_; }
    [[nodiscard]] const Vec3& sax_col_dir() const { return col_; }

private:
    struct Radii {
        double blood = 0;
        double outer = 0;
    };
    [[nodiscard]] Radii radii(double z, int phase) const;

    PhantomSpec spec_;
    Vec3 base_{}, axis_{}, row_{}, col_{};
    Vec3 stomach_centre_{};
    double stomach_radius_ = 0;
    std::vector<double> phase_factor_;
};

enum class SeriesRole { sax, distractor, localizer };
std::string to_string(SeriesRole r);

struct SeriesPlan {
    std::string series_uid;
    int series_number = 0;
    std::string description;
    SeriesRole role = SeriesRole::sax;
    std::vector<Plane> planes;
    int frames = 1;
    std::optional<double> spacing_between_slices;
};

struct ExamPlan {
    PhantomSpec spec;
    std::string study_uid;
    std::vector<SeriesPlan> series;
};

ExamPlan plan_exam(const PhantomSpec& s);

/// Rendered pixel values exactly as stored in the DICOM file (12-bit integers).
ImageF render_image(const Anatomy& a, const ExamPlan& plan, std::size_t series, std::size_t plane, int frame);
/// Truth labels sampled at pixel centres.
Mask render_labels(const Anatomy& a, const Plane& plane, int frame);

/// One stack the generator declares, slices in ascending normal order.
struct DeclaredStack {
    SeriesRole role = SeriesRole::sax;
    std::vector<std::string> series_uids;
    std::vector<Vec3> positions;
    int frames = 0;
};

struct PhantomTruth {
    std::string exam_id;
    double bsa_m2 = 0;
    std::vector<std::string> sax_series_uids;
    AnalyticVolumes volumes;
    /// Per short-axis slice, inclusive heart extent over all phases
    /// {row0, col0, row1, col1}; all −1 when the heart misses the slice.
    std::vector<std::array<int, 4>> heart_extent;
    std::vector<DeclaredStack> partition;
    /// Short-axis truth labels, slices ordered along the stack normal.
    LabelVolume labels;
};

/// Truth metadata only; labels travel in the companion label-volume file.
nlohmann::json truth_to_json(const PhantomTruth& t);
PhantomTruth truth_from_json(const nlohmann::json& j);

PhantomTruth make_truth(const ExamPlan& plan, const Anatomy& a);

/// Writes `<exam_dir>/dicom/*.dcm`, `metadata.json`, `truth.json` and
/// `truth_labels.svlv`. Output is a pure function of the spec.
PhantomTruth generate_phantom_exam(const PhantomSpec& s, const std::filesystem::path& exam_dir);

/// Reads `truth.json` and `truth_labels.svlv` from an exam directory or a truth.json path.
PhantomTruth load_truth(const std::filesystem::path& path);

inline constexpr double kMyocardialDensity = 1.05;

}  // namespace svpipe::phantom
