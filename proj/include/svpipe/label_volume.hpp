#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "svpipe/image.hpp"

namespace svpipe {

inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kBloodPool = 1;
inline constexpr std::uint8_t kMyocardium = 2;

/// Per-phase 3D label arrays over {0 background, 1 blood pool, 2 myocardium},
/// stored phase-major then slice, row, column.
struct LabelVolume {
    int phases = 0;
    int slices = 0;
    int rows = 0;
    int cols = 0;
    /// mm per pixel along (rows, cols).
    std::array<double, 2> pixel_spacing{1.0, 1.0};
    double slice_gap = 1.0;
    std::vector<std::uint8_t> labels;

    LabelVolume() = default;
    LabelVolume(int p, int s, int r, int c)
        : phases(p), slices(s), rows(r), cols(c),
          labels(static_cast<std::size_t>(p) * s * r * c, kBackground) {}

    [[nodiscard]] std::size_t slice_size() const { return static_cast<std::size_t>(rows) * cols; }
    [[nodiscard]] std::size_t phase_size() const { return slice_size() * slices; }
    [[nodiscard]] std::size_t index(int p, int s, int r, int c) const {
        return static_cast<std::size_t>(p) * phase_size() + static_cast<std::size_t>(s) * slice_size() +
               static_cast<std::size_t>(r) * cols + c;
    }
    std::uint8_t& at(int p, int s, int r, int c) { return labels[index(p, s, r, c)]; }
    [[nodiscard]] std::uint8_t at(int p, int s, int r, int c) const { return labels[index(p, s, r, c)]; }

    /// Voxel volume in mL.
    [[nodiscard]] double voxel_ml() const { return pixel_spacing[0] * pixel_spacing[1] * slice_gap / 1000.0; }

    /// Copy of one (phase, slice) plane.
    [[nodiscard]] Mask plane(int p, int s) const;
    void set_plane(int p, int s, const Mask& m);

    bool operator==(const LabelVolume&) const = default;
};

/// Throws ContractViolation when dimensions, geometry or label values are invalid.
void validate(const LabelVolume& v);

/// Binary "SVLV" file; see docs/label_volume_format.md.
void write_label_volume(const std::filesystem::path& path, const LabelVolume& v);
LabelVolume read_label_volume(const std::filesystem::path& path);

}  // namespace svpipe
