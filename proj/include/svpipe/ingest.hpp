#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "svpipe/image.hpp"

namespace svpipe {

using Vec3 = std::array<double, 3>;
/// Row direction cosines followed by column direction cosines.
using Orientation = std::array<double, 6>;

/// Header subset and pixels of one single-frame DICOM image.
struct DicomImageMeta {
    std::string file_id;
    std::string series_uid;
    std::string instance_uid;
    int rows = 0;
    int cols = 0;
    /// mm per pixel along (rows, cols).
    std::array<double, 2> pixel_spacing{};
    Orientation orientation{};
    Vec3 position{};
    std::optional<double> spacing_between_slices;
    std::optional<double> trigger_time;
    long instance_number = 0;
    /// Rank among the frames at this image's position (set by collect_cine_series).
    int temporal_index = 0;
    ImageF pixels;
};

struct ParseDiagnostics {
    int files_seen = 0;
    int not_dicom = 0;
    int corrupt = 0;
    int unsupported = 0;
    int missing_geometry = 0;
    std::vector<std::string> warnings;
};

struct ParsedExam {
    std::vector<DicomImageMeta> images;
    ParseDiagnostics diagnostics;
};

/// Reads every regular file below `dir` (recursively). Unreadable directories
/// throw IngestError; bad files are skipped and counted.
ParsedExam parse_exam_directory(const std::filesystem::path& dir, int workers = 1);

/// Checks header invariants (unit, orthogonal direction cosines, pixel size).
/// Returns an empty string when valid, else the reason.
std::string validate_geometry(const DicomImageMeta& m);

/// One spatial position of a cine series: frames ordered in time.
struct CineSlice {
    std::string series_uid;
    Vec3 position{};
    Orientation orientation{};
    std::array<double, 2> pixel_spacing{};
    int rows = 0;
    int cols = 0;
    std::optional<double> spacing_between_slices;
    std::vector<std::string> file_ids;
    std::vector<ImageF> frames;
};

struct CineSeries {
    std::string series_uid;
    std::vector<CineSlice> slices;
};

struct CollectDiagnostics {
    int non_cine_positions = 0;
    std::vector<std::string> rejected_series;
    std::vector<std::string> warnings;
};

inline constexpr int kMinCineFrames = 10;
inline constexpr int kMinStackSlices = 6;

/// Groups images by (series, position); positions with >= 10 frames become
/// cine slices ordered by trigger time (instance number when any frame lacks
/// one). A series with two frames sharing position and temporal key is
/// rejected whole.
std::vector<CineSeries> collect_cine_series(std::vector<DicomImageMeta> images,
                                            CollectDiagnostics* diagnostics = nullptr);

/// Parallel cine slices sharing geometry, ordered along the slice normal.
struct CineStack {
    std::string stack_id;
    std::vector<CineSlice> slices;
    std::array<double, 2> pixel_spacing{};
    double slice_gap = 0;
    Orientation orientation{};
    std::set<std::string> source_series;
    /// Signed distance of each slice along the normal, ascending.
    std::vector<double> offsets;

    [[nodiscard]] int slice_count() const { return static_cast<int>(slices.size()); }
    [[nodiscard]] int frame_count() const { return slices.empty() ? 0 : static_cast<int>(slices[0].frames.size()); }
    [[nodiscard]] int rows() const { return slices.empty() ? 0 : slices[0].rows; }
    [[nodiscard]] int cols() const { return slices.empty() ? 0 : slices[0].cols; }
    [[nodiscard]] Vec3 normal() const;
};

struct GroupingTolerances {
    double orientation = 1e-3;
    double pixel_spacing_mm = 1e-3;
    double gap_relative = 0.05;
    /// Positions closer than this along the normal are the same location.
    double same_position_mm = 0.01;
};

struct GroupingDiagnostics {
    int geometry_classes = 0;
    int candidate_runs = 0;
    int discarded_runs = 0;
    int discarded_slices = 0;
};

/// Merges cine slices (across series) into stacks; see README for the rules.
std::vector<CineStack> group_into_stacks(std::vector<CineSeries> cine, const GroupingTolerances& tol = {},
                                         GroupingDiagnostics* diagnostics = nullptr);

/// Post-hoc CineStack invariants; empty string when all hold.
std::string validate_stack(const CineStack& s, const GroupingTolerances& tol = {});

/// Stage-1 summary: stack ids, geometry, slice positions and frame counts.
nlohmann::json stack_manifest(const std::vector<CineStack>& stacks);

Vec3 cross(const Vec3& a, const Vec3& b);
double dot(const Vec3& a, const Vec3& b);

}  // namespace svpipe
