#include "svpipe/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "svpipe/dicom_io.hpp"
#include "svpipe/error.hpp"
#include "svpipe/hash.hpp"

namespace svpipe::phantom {

namespace fs = std::filesystem;
using std::numbers::pi;

namespace {

constexpr double kRrIntervalMs = 800.0;
constexpr double kStoredScale = 4000.0;
constexpr double kStoredMax = 4095.0;

constexpr double kAir = 0.02;
constexpr double kTissue = 0.42;
constexpr double kMyo = 0.18;
constexpr double kBlood = 0.90;
constexpr double kStomach = 0.72;

Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 scale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
Vec3 unit(const Vec3& a) { return scale(a, 1.0 / std::sqrt(dot(a, a))); }
double rad(double deg) { return deg * pi / 180.0; }

// Unit vector perpendicular to `a`, deterministic in `a`.
Vec3 perpendicular(const Vec3& a) {
    const Vec3 ref = std::abs(a[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    return unit(sub(ref, scale(a, dot(ref, a))));
}

Vec3 rotate_in_plane(const Vec3& x0, const Vec3& y0, double angle) {
    return add(scale(x0, std::cos(angle)), scale(y0, std::sin(angle)));
}

// 0 inside, 1 outside, linear across one pixel around the boundary.
double edge_weight(double signed_distance, double width) {
    return std::clamp(0.5 - signed_distance / width, 0.0, 1.0);
}

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit_draw(rng); }

std::uint64_t key_hash(std::uint64_t seed, const std::string& key) {
    Fnv1a64 h;
    h.update(&seed, sizeof seed);
    h.update(key);
    return h.digest();
}

std::string make_uid(std::uint64_t seed, const std::string& key) {
    return "2.25." + std::to_string(key_hash(seed, key));
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) throw Error("failed to write " + path.string());
}

}  // namespace

void PhantomSpec::validate() const {
    auto fail = [](const std::string& m) { throw ContractViolation("phantom spec: " + m); };
    if (image_size < 32) fail("image_size must be >= 32");
    if (!(pixel_spacing_mm > 0) || !(slice_gap_mm > 0)) fail("pixel spacing and slice gap must be positive");
    if (slices < kMinStackSlices) fail("slices must be >= 6");
    if (phases < kMinCineFrames) fail("phases must be >= 10");
    if (!(ed_radius_mm > 0)) fail("ed_radius_mm must be positive");
    if (!(es_radius_fraction > 0 && es_radius_fraction <= 1)) fail("es_radius_fraction must lie in (0,1]");
    if (!(myo_thickness_mm > 0)) fail("myo_thickness_mm must be positive");
    if (!(apex_taper_fraction >= 0 && apex_taper_fraction <= 1)) fail("apex_taper_fraction must lie in [0,1]");
    // Taper must leave every slice centre inside the ventricle (r > 0).
    const double taper_len = apex_taper_fraction * long_axis_mm();
    if (taper_len > 0 && !(taper_len > 0.5 * slice_gap_mm)) fail("apex taper shorter than half a slice gap");
    if (distractor_count < 0 || distractor_count > 6) fail("distractor_count must lie in [0,6]");
    if (distractor_count > 0 && distractor_slices < 1) fail("distractor_slices must be >= 1");
    if (!(distractor_gap_mm > 0)) fail("distractor_gap_mm must be positive");
    if (!(distractor_min_angle_deg >= 0 && distractor_min_angle_deg <= distractor_max_angle_deg &&
          distractor_max_angle_deg <= 90))
        fail("distractor angles must satisfy 0 <= min <= max <= 90");
    if (!(noise >= 0)) fail("noise must be non-negative");
    if (!(bsa_m2 > 0)) fail("bsa_m2 must be positive");
    const double half_fov = 0.5 * image_size * pixel_spacing_mm;
    const double outer = ed_radius_mm + myo_thickness_mm;
    if (std::abs(heart_offset_mm[0]) + outer >= half_fov || std::abs(heart_offset_mm[1]) + outer >= half_fov)
        fail("heart does not fit inside the field of view");
}

std::string PhantomSpec::resolved_exam_id() const {
    return exam_id.empty() ? "phantom-" + std::to_string(seed) : exam_id;
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
    j = nlohmann::json{{"seed", s.seed},
                       {"exam_id", s.resolved_exam_id()},
                       {"image_size", s.image_size},
                       {"pixel_spacing_mm", s.pixel_spacing_mm},
                       {"slice_gap_mm", s.slice_gap_mm},
                       {"slices", s.slices},
                       {"phases", s.phases},
                       {"ed_radius_mm", s.ed_radius_mm},
                       {"es_radius_fraction", s.es_radius_fraction},
                       {"myo_thickness_mm", s.myo_thickness_mm},
                       {"apex_taper_fraction", s.apex_taper_fraction},
                       {"heart_offset_mm", s.heart_offset_mm},
                       {"axis_tilt_deg", s.axis_tilt_deg},
                       {"axis_azimuth_deg", s.axis_azimuth_deg},
                       {"inplane_rotation_deg", s.inplane_rotation_deg},
                       {"distractor_count", s.distractor_count},
                       {"distractor_min_angle_deg", s.distractor_min_angle_deg},
                       {"distractor_max_angle_deg", s.distractor_max_angle_deg},
                       {"distractor_slices", s.distractor_slices},
                       {"distractor_gap_mm", s.distractor_gap_mm},
                       {"noise", s.noise},
                       {"bsa_m2", s.bsa_m2},
                       {"stomach", s.stomach},
                       {"localizer", s.localizer},
                       {"sax_series_per_slice", s.sax_series_per_slice},
                       {"trigger_times", s.trigger_times}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
    if (!j.is_object()) throw ContractViolation("phantom spec must be a JSON object");
    nlohmann::json defaults = PhantomSpec{};
    for (const auto& [key, value] : j.items())
        if (!defaults.contains(key)) throw ContractViolation("phantom spec: unknown key '" + key + "'");
    auto take = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception& e) {
            throw ContractViolation(std::string("phantom spec: bad value for '") + key + "': " + e.what());
        }
    };
    take("seed", s.seed);
    take("exam_id", s.exam_id);
    take("image_size", s.image_size);
    take("pixel_spacing_mm", s.pixel_spacing_mm);
    take("slice_gap_mm", s.slice_gap_mm);
    take("slices", s.slices);
    take("phases", s.phases);
    take("ed_radius_mm", s.ed_radius_mm);
    take("es_radius_fraction", s.es_radius_fraction);
    take("myo_thickness_mm", s.myo_thickness_mm);
    take("apex_taper_fraction", s.apex_taper_fraction);
    take("heart_offset_mm", s.heart_offset_mm);
    take("axis_tilt_deg", s.axis_tilt_deg);
    take("axis_azimuth_deg", s.axis_azimuth_deg);
    take("inplane_rotation_deg", s.inplane_rotation_deg);
    take("distractor_count", s.distractor_count);
    take("distractor_min_angle_deg", s.distractor_min_angle_deg);
    take("distractor_max_angle_deg", s.distractor_max_angle_deg);
    take("distractor_slices", s.distractor_slices);
    take("distractor_gap_mm", s.distractor_gap_mm);
    take("noise", s.noise);
    take("bsa_m2", s.bsa_m2);
    take("stomach", s.stomach);
    take("localizer", s.localizer);
    take("sax_series_per_slice", s.sax_series_per_slice);
    take("trigger_times", s.trigger_times);
}

PhantomSpec randomized_spec(std::uint64_t seed, const PhantomSpec& base) {
    std::mt19937_64 rng(seed ^ 0x5ee6'd1ce'0fa7'7a11ULL);
    PhantomSpec s = base;
    s.seed = seed;
    s.exam_id.clear();
    const double fov_scale = base.image_size * base.pixel_spacing_mm / 384.0;
    s.slices = 7 + static_cast<int>(rng() % 5);
    s.phases = 2 * (8 + static_cast<int>(rng() % 5));
    s.slice_gap_mm = uniform(rng, 7.0, 9.5);
    s.ed_radius_mm = uniform(rng, 20.0, 28.0) * std::min(1.0, fov_scale);
    s.es_radius_fraction = uniform(rng, 0.6, 0.8);
    s.myo_thickness_mm = uniform(rng, 6.0, 9.0) * std::min(1.0, fov_scale);
    s.apex_taper_fraction = uniform(rng, 0.3, 0.5);
    const double max_offset = 40.0 * fov_scale;
    s.heart_offset_mm = {uniform(rng, -max_offset, max_offset), uniform(rng, -max_offset, max_offset)};
    s.axis_tilt_deg = uniform(rng, 20.0, 60.0);
    s.axis_azimuth_deg = uniform(rng, 0.0, 360.0);
    s.inplane_rotation_deg = uniform(rng, 0.0, 360.0);
    s.distractor_slices = 6 + static_cast<int>(rng() % 4);
    s.distractor_gap_mm = uniform(rng, 6.0, 10.0);
    s.noise = uniform(rng, 0.01, 0.04);
    s.bsa_m2 = uniform(rng, 1.2, 2.2);
    s.validate();
    return s;
}

double radius_factor(const PhantomSpec& s, int phase) {
    const double c = std::cos(2.0 * pi * phase / s.phases);
    return 1.0 - (1.0 - s.es_radius_fraction) * (1.0 - c) / 2.0;
}

double taper(const PhantomSpec& s, double z) {
    const double length = s.long_axis_mm();
    if (z < 0 || z > length) return 0.0;
    const double taper_len = s.apex_taper_fraction * length;
    const double z0 = length - taper_len;
    if (z <= z0 || taper_len <= 0) return 1.0;
    const double u = (z - z0) / taper_len;
    return std::sqrt(std::max(0.0, 1.0 - u * u));
}

std::vector<double> slice_depths(const PhantomSpec& s) {
    std::vector<double> z;
    for (int i = 0; i < s.slices; ++i) z.push_back((i + 0.5) * s.slice_gap_mm);
    return z;
}

AnalyticVolumes analytic_volumes(const PhantomSpec& s) {
    s.validate();
    AnalyticVolumes v;
    const auto depths = slice_depths(s);
    for (int t = 0; t < s.phases; ++t) {
        double total = 0;
        for (double z : depths) {
            const double r = s.ed_radius_mm * radius_factor(s, t) * taper(s, z);
            total += pi * r * r * s.slice_gap_mm;
        }
        v.blood_ml.push_back(total / 1000.0);
    }
    double myo = 0;
    for (double z : depths) {
        const double r = s.ed_radius_mm * taper(s, z);
        const double outer = r + s.myo_thickness_mm;
        myo += pi * (outer * outer - r * r) * s.slice_gap_mm;
    }
    v.myo_ed_ml = myo / 1000.0;
    // Earliest phase wins ties within a relative 1e-9 band.
    const double vmax = *std::max_element(v.blood_ml.begin(), v.blood_ml.end());
    const double vmin = *std::min_element(v.blood_ml.begin(), v.blood_ml.end());
    const double band = 1e-9 * vmax;
    v.ed_phase = static_cast<int>(std::find_if(v.blood_ml.begin(), v.blood_ml.end(),
                                               [&](double b) { return b >= vmax - band; }) -
                                  v.blood_ml.begin());
    v.es_phase = static_cast<int>(std::find_if(v.blood_ml.begin(), v.blood_ml.end(),
                                               [&](double b) { return b <= vmin + band; }) -
                                  v.blood_ml.begin());
    v.edv_ml = v.blood_ml[static_cast<std::size_t>(v.ed_phase)];
    v.esv_ml = v.blood_ml[static_cast<std::size_t>(v.es_phase)];
    v.sv_ml = v.edv_ml - v.esv_ml;
    v.ef = v.sv_ml / v.edv_ml;
    v.mass_g = v.myo_ed_ml * kMyocardialDensity;
    return v;
}

Vec3 Plane::point(double r, double c) const {
    return add(origin, add(scale(row_dir, c * spacing), scale(col_dir, r * spacing)));
}

Anatomy::Anatomy(const PhantomSpec& s) : spec_(s) {
    s.validate();
    const double tilt = rad(s.axis_tilt_deg), az = rad(s.axis_azimuth_deg);
    axis_ = {std::sin(tilt) * std::cos(az), std::sin(tilt) * std::sin(az), std::cos(tilt)};
    base_ = Vec3{25.0, -15.0, 10.0};
    base_ = sub(base_, scale(axis_, 0.5 * s.long_axis_mm()));
    const Vec3 x0 = perpendicular(axis_);
    const Vec3 y0 = cross(axis_, x0);
    row_ = rotate_in_plane(x0, y0, rad(s.inplane_rotation_deg));
    col_ = cross(axis_, row_);
    // Beside the apex, far enough from the axis to stay a separate blob.
    stomach_radius_ = s.stomach ? 0.9 * (s.ed_radius_mm + s.myo_thickness_mm) : 0.0;
    const double lateral = 2.4 * (s.ed_radius_mm + s.myo_thickness_mm);
    stomach_centre_ = add(base_, add(scale(axis_, 0.85 * s.long_axis_mm()), scale(col_, lateral)));
    for (int t = 0; t < s.phases; ++t) phase_factor_.push_back(radius_factor(s, t));
}

Anatomy::Radii Anatomy::radii(double z, int phase) const {
    const double g = taper(spec_, z);
    if (g <= 0) return {};
    const double r_ed = spec_.ed_radius_mm * g;
    const double ring_area = (r_ed + spec_.myo_thickness_mm) * (r_ed + spec_.myo_thickness_mm) - r_ed * r_ed;
    const double blood = r_ed * phase_factor_[static_cast<std::size_t>(phase)];
    // Myocardial ring keeps its area as the cavity contracts.
    return {blood, std::sqrt(blood * blood + ring_area)};
}

std::uint8_t Anatomy::label_at(const Vec3& p, int phase) const {
    const Vec3 v = sub(p, base_);
    const double z = dot(v, axis_);
    if (z < 0 || z > spec_.long_axis_mm()) return kBackground;
    const Vec3 q = sub(v, scale(axis_, z));
    const double rho = std::sqrt(dot(q, q));
    const Radii r = radii(z, phase);
    if (rho < r.blood) return kBloodPool;
    if (rho < r.outer) return kMyocardium;
    return kBackground;
}

double Anatomy::intensity_at(const Vec3& p, int phase) const {
    const double w = spec_.pixel_spacing_mm;
    // Elliptic-cylinder body along the scanner z axis.
    const double body_rho = std::sqrt((p[0] / 170.0) * (p[0] / 170.0) + (p[1] / 120.0) * (p[1] / 120.0));
    double value = kAir + (kTissue - kAir) * edge_weight((body_rho - 1.0) * 140.0, w);
    if (stomach_radius_ > 0) {
        const Vec3 d = sub(p, stomach_centre_);
        value += (kStomach - value) * edge_weight(std::sqrt(dot(d, d)) - stomach_radius_, w);
    }
    const Vec3 v = sub(p, base_);
    const double z = dot(v, axis_);
    if (z < 0 || z > spec_.long_axis_mm()) return value;
    const Vec3 q = sub(v, scale(axis_, z));
    const double rho = std::sqrt(dot(q, q));
    const Radii r = radii(z, phase);
    value += (kMyo - value) * edge_weight(rho - r.outer, w);
    value += (kBlood - value) * edge_weight(rho - r.blood, w);
    return value;
}

std::string to_string(SeriesRole r) {
    switch (r) {
        case SeriesRole::sax: return "sax";
        case SeriesRole::distractor: return "distractor";
        case SeriesRole::localizer: return "localizer";
    }
    return "unknown";
}

ExamPlan plan_exam(const PhantomSpec& s) {
    s.validate();
    const Anatomy anatomy(s);
    ExamPlan plan;
    plan.spec = s;
    plan.study_uid = make_uid(s.seed, "study");
    const int n = s.image_size;
    const double half = 0.5 * (n - 1) * s.pixel_spacing_mm;
    const Vec3& a = anatomy.axis();
    const Vec3& x = anatomy.sax_row_dir();
    const Vec3& y = anatomy.sax_col_dir();
    int series_number = 1;

    auto make_plane = [&](const Vec3& centre, const Vec3& row_dir, const Vec3& col_dir) {
        Plane p;
        p.row_dir = row_dir;
        p.col_dir = col_dir;
        p.rows = p.cols = n;
        p.spacing = s.pixel_spacing_mm;
        p.origin = sub(centre, add(scale(row_dir, half), scale(col_dir, half)));
        return p;
    };

    if (s.localizer) {
        SeriesPlan loc;
        loc.series_uid = make_uid(s.seed, "series/localizer");
        loc.series_number = series_number++;
        loc.description = "localizer";
        loc.role = SeriesRole::localizer;
        const Vec3 mid = add(anatomy.base_centre(), scale(a, 0.5 * s.long_axis_mm()));
        loc.planes.push_back(make_plane(mid, {1, 0, 0}, {0, 1, 0}));
        loc.planes.push_back(make_plane(mid, {1, 0, 0}, {0, 0, -1}));
        loc.planes.push_back(make_plane(mid, {0, 1, 0}, {0, 0, -1}));
        plan.series.push_back(std::move(loc));
    }

    // Short-axis planes: heart centre at the image centre plus the offset.
    std::vector<Plane> sax_planes;
    for (double z : slice_depths(s)) {
        const Vec3 heart = add(anatomy.base_centre(), scale(a, z));
        const Vec3 centre = sub(heart, add(scale(x, s.heart_offset_mm[1]), scale(y, s.heart_offset_mm[0])));
        sax_planes.push_back(make_plane(centre, x, y));
    }
    if (s.sax_series_per_slice) {
        for (std::size_t i = 0; i < sax_planes.size(); ++i) {
            SeriesPlan sp;
            sp.series_uid = make_uid(s.seed, "series/sax/" + std::to_string(i));
            sp.series_number = series_number++;
            sp.description = "cine sa slice " + std::to_string(i + 1);
            sp.role = SeriesRole::sax;
            sp.planes = {sax_planes[i]};
            sp.frames = s.phases;
            plan.series.push_back(std::move(sp));
        }
    } else {
        SeriesPlan sp;
        sp.series_uid = make_uid(s.seed, "series/sax");
        sp.series_number = series_number++;
        sp.description = "cine sa";
        sp.role = SeriesRole::sax;
        sp.planes = sax_planes;
        sp.frames = s.phases;
        sp.spacing_between_slices = s.slice_gap_mm;
        plan.series.push_back(std::move(sp));
    }

    std::mt19937_64 rng(key_hash(s.seed, "distractors"));
    const Vec3 mid = add(anatomy.base_centre(), scale(a, 0.5 * s.long_axis_mm()));
    for (int d = 0; d < s.distractor_count; ++d) {
        const double angle = rad(uniform(rng, s.distractor_min_angle_deg, s.distractor_max_angle_deg));
        const double azimuth = uniform(rng, 0.0, 2.0 * pi);
        const Vec3 w = rotate_in_plane(x, y, azimuth);
        const Vec3 normal = unit(add(scale(a, std::cos(angle)), scale(w, std::sin(angle))));
        const Vec3 px0 = perpendicular(normal);
        const Vec3 py0 = cross(normal, px0);
        const Vec3 row_dir = rotate_in_plane(px0, py0, uniform(rng, 0.0, 2.0 * pi));
        const Vec3 col_dir = cross(normal, row_dir);
        const double off_r = uniform(rng, -0.5, 0.5) * s.ed_radius_mm, off_c = uniform(rng, -0.5, 0.5) * s.ed_radius_mm;
        SeriesPlan sp;
        sp.series_uid = make_uid(s.seed, "series/distractor/" + std::to_string(d));
        sp.series_number = series_number++;
        sp.description = "cine off-axis " + std::to_string(d + 1);
        sp.role = SeriesRole::distractor;
        sp.frames = s.phases;
        sp.spacing_between_slices = s.distractor_gap_mm;
        for (int k = 0; k < s.distractor_slices; ++k) {
            const double along = (k - 0.5 * (s.distractor_slices - 1)) * s.distractor_gap_mm;
            const Vec3 centre =
                sub(add(mid, scale(normal, along)), add(scale(row_dir, off_c), scale(col_dir, off_r)));
            sp.planes.push_back(make_plane(centre, row_dir, col_dir));
        }
        plan.series.push_back(std::move(sp));
    }
    return plan;
}

ImageF render_image(const Anatomy& a, const ExamPlan& plan, std::size_t series, std::size_t plane, int frame) {
    const SeriesPlan& sp = plan.series.at(series);
    const Plane& pl = sp.planes.at(plane);
    const int phase = sp.role == SeriesRole::localizer ? 0 : frame;
    std::mt19937_64 rng(
        key_hash(plan.spec.seed, sp.series_uid + "/" + std::to_string(plane) + "/" + std::to_string(frame)));
    ImageF img(pl.rows, pl.cols);
    const double sigma = plan.spec.noise;
    double spare = 0;
    bool have_spare = false;
    for (int r = 0; r < pl.rows; ++r) {
        for (int c = 0; c < pl.cols; ++c) {
            double v = a.intensity_at(pl.point(r, c), phase);
            if (sigma > 0) {
                // Box-Muller on 53-bit uniforms keeps the stream platform independent.
                double g;
                if (have_spare) {
                    g = spare;
                    have_spare = false;
                } else {
                    const double u1 = 1.0 - unit_draw(rng), u2 = unit_draw(rng);
                    const double m = std::sqrt(-2.0 * std::log(u1));
                    g = m * std::cos(2 * pi * u2);
                    spare = m * std::sin(2 * pi * u2);
                    have_spare = true;
                }
                v += sigma * g;
            }
            img.at(r, c) = static_cast<float>(std::clamp(std::round(v * kStoredScale), 0.0, kStoredMax));
        }
    }
    return img;
}

Mask render_labels(const Anatomy& a, const Plane& plane, int frame) {
    Mask m(plane.rows, plane.cols);
    for (int r = 0; r < plane.rows; ++r)
        for (int c = 0; c < plane.cols; ++c) m.at(r, c) = a.label_at(plane.point(r, c), frame);
    return m;
}

PhantomTruth make_truth(const ExamPlan& plan, const Anatomy& a) {
    const PhantomSpec& s = plan.spec;
    PhantomTruth t;
    t.exam_id = s.resolved_exam_id();
    t.bsa_m2 = s.bsa_m2;
    t.volumes = analytic_volumes(s);

    DeclaredStack sax;
    sax.role = SeriesRole::sax;
    sax.frames = s.phases;
    std::vector<const Plane*> sax_planes;
    for (const auto& sp : plan.series) {
        if (sp.role == SeriesRole::sax) {
            t.sax_series_uids.push_back(sp.series_uid);
            for (const auto& pl : sp.planes) {
                sax_planes.push_back(&pl);
                sax.series_uids.push_back(sp.series_uid);
                sax.positions.push_back(pl.origin);
            }
        } else if (sp.role == SeriesRole::distractor && static_cast<int>(sp.planes.size()) >= kMinStackSlices) {
            DeclaredStack d;
            d.role = SeriesRole::distractor;
            d.frames = sp.frames;
            for (const auto& pl : sp.planes) {
                d.series_uids.push_back(sp.series_uid);
                d.positions.push_back(pl.origin);
            }
            t.partition.push_back(std::move(d));
        }
    }
    t.partition.insert(t.partition.begin(), std::move(sax));

    t.labels = LabelVolume(s.phases, s.slices, s.image_size, s.image_size);
    t.labels.pixel_spacing = {s.pixel_spacing_mm, s.pixel_spacing_mm};
    t.labels.slice_gap = s.slice_gap_mm;
    t.heart_extent.assign(sax_planes.size(), {-1, -1, -1, -1});
    for (int p = 0; p < s.phases; ++p) {
        for (std::size_t k = 0; k < sax_planes.size(); ++k) {
            const Mask m = render_labels(a, *sax_planes[k], p);
            t.labels.set_plane(p, static_cast<int>(k), m);
            auto& e = t.heart_extent[k];
            for (int r = 0; r < m.rows; ++r)
                for (int c = 0; c < m.cols; ++c) {
                    if (!m.at(r, c)) continue;
                    if (e[0] < 0) e = {r, c, r, c};
                    e = {std::min(e[0], r), std::min(e[1], c), std::max(e[2], r), std::max(e[3], c)};
                }
        }
    }
    return t;
}

nlohmann::json truth_to_json(const PhantomTruth& t) {
    nlohmann::json partition = nlohmann::json::array();
    for (const auto& d : t.partition)
        partition.push_back({{"role", to_string(d.role)},
                             {"series_uids", d.series_uids},
                             {"positions", d.positions},
                             {"frames", d.frames}});
    const auto& v = t.volumes;
    return {{"version", 1},
            {"exam_id", t.exam_id},
            {"bsa_m2", t.bsa_m2},
            {"sax_series_uids", t.sax_series_uids},
            {"blood_volume_ml", v.blood_ml},
            {"myo_ed_ml", v.myo_ed_ml},
            {"ed_phase", v.ed_phase},
            {"es_phase", v.es_phase},
            {"edv_ml", v.edv_ml},
            {"esv_ml", v.esv_ml},
            {"sv_ml", v.sv_ml},
            {"ef", v.ef},
            {"mass_g", v.mass_g},
            {"heart_extent", t.heart_extent},
            {"partition", partition},
            {"labels_file", "truth_labels.svlv"}};
}

PhantomTruth truth_from_json(const nlohmann::json& j) {
    PhantomTruth t;
    try {
        t.exam_id = j.at("exam_id").get<std::string>();
        t.bsa_m2 = j.at("bsa_m2").get<double>();
        t.sax_series_uids = j.at("sax_series_uids").get<std::vector<std::string>>();
        auto& v = t.volumes;
        v.blood_ml = j.at("blood_volume_ml").get<std::vector<double>>();
        v.myo_ed_ml = j.at("myo_ed_ml").get<double>();
        v.ed_phase = j.at("ed_phase").get<int>();
        v.es_phase = j.at("es_phase").get<int>();
        v.edv_ml = j.at("edv_ml").get<double>();
        v.esv_ml = j.at("esv_ml").get<double>();
        v.sv_ml = j.at("sv_ml").get<double>();
        v.ef = j.at("ef").get<double>();
        v.mass_g = j.at("mass_g").get<double>();
        t.heart_extent = j.at("heart_extent").get<std::vector<std::array<int, 4>>>();
        for (const auto& d : j.at("partition")) {
            DeclaredStack ds;
            const auto role = d.at("role").get<std::string>();
            ds.role = role == "sax" ? SeriesRole::sax : SeriesRole::distractor;
            ds.series_uids = d.at("series_uids").get<std::vector<std::string>>();
            ds.positions = d.at("positions").get<std::vector<Vec3>>();
            ds.frames = d.at("frames").get<int>();
            t.partition.push_back(std::move(ds));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed truth JSON: ") + e.what());
    }
    return t;
}

PhantomTruth generate_phantom_exam(const PhantomSpec& s, const fs::path& exam_dir) {
    const ExamPlan plan = plan_exam(s);
    const Anatomy anatomy(s);
    const fs::path dicom_dir = exam_dir / "dicom";
    fs::create_directories(dicom_dir);
    namespace t = dicom::tags;
    const std::string exam_id = s.resolved_exam_id();

    for (std::size_t si = 0; si < plan.series.size(); ++si) {
        const SeriesPlan& sp = plan.series[si];
        for (std::size_t pi_ = 0; pi_ < sp.planes.size(); ++pi_) {
            const Plane& pl = sp.planes[pi_];
            for (int f = 0; f < sp.frames; ++f) {
                const ImageF img = render_image(anatomy, plan, si, pi_, f);
                std::vector<std::uint16_t> px(img.data.size());
                std::transform(img.data.begin(), img.data.end(), px.begin(),
                               [](float v) { return static_cast<std::uint16_t>(v); });
                const long instance = static_cast<long>(pi_) * sp.frames + f + 1;
                const std::string sop = make_uid(s.seed, sp.series_uid + "/" + std::to_string(instance));
                dicom::DataSet ds;
                ds.set_string(t::kSopClassUid, "UI", dicom::kMrImageStorage);
                ds.set_string(t::kSopInstanceUid, "UI", sop);
                ds.set_string(t::kModality, "CS", "MR");
                ds.set_string(t::kSeriesDescription, "LO", sp.description);
                ds.set_string(t::kPatientId, "LO", exam_id);
                ds.set_string(t::kStudyInstanceUid, "UI", plan.study_uid);
                ds.set_string(t::kSeriesInstanceUid, "UI", sp.series_uid);
                ds.set_integer_string(t::kSeriesNumber, sp.series_number);
                ds.set_integer_string(t::kInstanceNumber, instance);
                ds.set_decimals(t::kImagePosition, {pl.origin[0], pl.origin[1], pl.origin[2]});
                ds.set_decimals(t::kImageOrientation, {pl.row_dir[0], pl.row_dir[1], pl.row_dir[2], pl.col_dir[0],
                                                       pl.col_dir[1], pl.col_dir[2]});
                ds.set_decimals(t::kPixelSpacing, {pl.spacing, pl.spacing});
                if (sp.role != SeriesRole::localizer) {
                    ds.set_decimals(t::kSliceThickness, {sp.spacing_between_slices.value_or(s.slice_gap_mm)});
                    if (s.trigger_times) ds.set_decimals(t::kTriggerTime, {f * kRrIntervalMs / sp.frames});
                }
                if (sp.spacing_between_slices) ds.set_decimals(t::kSpacingBetweenSlices, {*sp.spacing_between_slices});
                ds.set_ushort(t::kSamplesPerPixel, 1);
                ds.set_string(t::kPhotometric, "CS", "MONOCHROME2");
                ds.set_ushort(t::kRows, static_cast<std::uint16_t>(pl.rows));
                ds.set_ushort(t::kColumns, static_cast<std::uint16_t>(pl.cols));
                ds.set_ushort(t::kBitsAllocated, 16);
                ds.set_ushort(t::kBitsStored, 12);
                ds.set_ushort(t::kHighBit, 11);
                ds.set_ushort(t::kPixelRepresentation, 0);
                ds.set_bytes(t::kPixelData, "OW", dicom::encode_u16(px));
                dicom::write_file(dicom_dir / ("IM_" + fnv1a64_hex(sop) + ".dcm"), ds);
            }
        }
    }

    PhantomTruth truth = make_truth(plan, anatomy);
    write_label_volume(exam_dir / "truth_labels.svlv", truth.labels);
    write_text(exam_dir / "truth.json", truth_to_json(truth).dump(2) + "\n");
    write_text(exam_dir / "metadata.json",
               nlohmann::json{{"exam_id", exam_id}, {"bsa_m2", s.bsa_m2}}.dump(2) + "\n");
    return truth;
}

PhantomTruth load_truth(const fs::path& path) {
    const fs::path json_path = fs::is_directory(path) ? path / "truth.json" : path;
    std::ifstream f(json_path);
    if (!f) throw Error("cannot open truth file " + json_path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed truth JSON " + json_path.string() + ": " + e.what());
    }
    PhantomTruth t = truth_from_json(j);
    t.labels = read_label_volume(json_path.parent_path() / j.value("labels_file", "truth_labels.svlv"));
    return t;
}

}  // namespace svpipe::phantom
