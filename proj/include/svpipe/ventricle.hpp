#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "svpipe/image.hpp"
#include "svpipe/ingest.hpp"
#include "svpipe/label_volume.hpp"
#include "svpipe/nn/models.hpp"

namespace svpipe {

inline constexpr double kDefaultMyocardialDensity = 1.05;  // g/mL

/// Per-pixel argmax of the 3-class segmenter on one image: class
/// probabilities are bilinearly resampled to the image grid before the
/// argmax (lowest class wins ties).
Mask segment_image(const nn::Network<float>& model, const ImageF& image);

/// Every slice and frame of the stack; geometry copied from the stack.
LabelVolume segment_stack(const nn::Network<float>& model, const CineStack& stack);

/// Per phase keeps only the largest 6-connected foreground component (labels
/// != 0, earliest in scan order on ties); labels inside it are unchanged.
LabelVolume largest_component_filter(const LabelVolume& vol);

enum class SliceRange { all, middle_five };
std::string to_string(SliceRange r);

struct VolumeTimeCurve {
    std::vector<double> volume_ml;
    /// Range actually used.
    SliceRange range = SliceRange::all;
    bool fallback = false;
    std::vector<std::string> warnings;
};

/// Blood-pool voxel count per phase within the range times voxel volume.
/// middle_five uses the central-slice rule and falls back to all slices (with
/// a warning) when the stack has fewer than five slices.
VolumeTimeCurve volume_time_curve(const LabelVolume& vol, SliceRange range);

/// Volume of `label` in one phase over all slices (mL).
double label_volume_ml(const LabelVolume& vol, int phase, std::uint8_t label);

struct PhaseDetection {
    int ed_phase = 0;
    int es_phase = 0;
    bool constant = false;
    std::vector<std::string> warnings;
};

/// ED = argmax, ES = argmin, earliest on ties. A constant curve yields
/// ED = ES = 0 with a warning. Throws ContractViolation on fewer than two phases.
PhaseDetection detect_phases(const VolumeTimeCurve& curve);

struct FunctionReport {
    double edv_ml = 0;
    double esv_ml = 0;
    double sv_ml = 0;
    double ef = 0;
    double mass_g = 0;
    int ed_phase = 0;
    int es_phase = 0;
    double bsa_m2 = 0;
    double edv_i = 0;
    double esv_i = 0;
    double sv_i = 0;
    double mass_i = 0;
    /// ESV exceeds EDV; values are reported unclamped.
    bool non_physiologic = false;
};

nlohmann::json to_json(const FunctionReport& r);
FunctionReport function_report_from_json(const nlohmann::json& j);

/// Clinical indices from explicit volumes. Throws EmptySegmentation when
/// edv is 0 and ContractViolation when bsa is not positive.
FunctionReport function_from_volumes(double edv_ml, double esv_ml, double myo_ed_ml, int ed_phase, int es_phase,
                                     double bsa_m2, double density = kDefaultMyocardialDensity);

/// EDV/ESV over all slices at the given phases, mass from myocardium at ED.
FunctionReport compute_function_report(const LabelVolume& vol, int ed_phase, int es_phase, double bsa_m2,
                                       double density = kDefaultMyocardialDensity);

}  // namespace svpipe
