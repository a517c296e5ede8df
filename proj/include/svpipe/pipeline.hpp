#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "svpipe/heart_locator.hpp"
#include "svpipe/ingest.hpp"
#include "svpipe/label_volume.hpp"
#include "svpipe/nn/models.hpp"
#include "svpipe/phantom.hpp"
#include "svpipe/ventricle.hpp"

namespace svpipe {

inline constexpr int kReportSchemaVersion = 1;

/// Every decision constant of the pipeline; echoed into each report.
struct PipelineConfig {
    double locator_threshold = 0.5;
    double box_expansion = 1.5;
    double myocardial_density = kDefaultMyocardialDensity;
    /// Used when the exam has no metadata.json with a bsa_m2 entry; indexed
    /// values are omitted when this is also absent.
    std::optional<double> default_bsa_m2;
    SliceRange phase_range = SliceRange::middle_five;
    GroupingTolerances tolerances;
    /// Threads for DICOM parsing within one exam.
    int parse_workers = 1;
    /// Write the predicted label volume next to the report.
    bool write_labels = true;

    void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
/// Missing keys keep defaults; unknown keys are rejected.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// The three trained networks, loaded once and shared read-only.
struct ModelBundle {
    std::unique_ptr<nn::Network<float>> classifier;
    std::unique_ptr<nn::Network<float>> locator;
    std::unique_ptr<nn::Network<float>> segmenter;
    /// Content hashes from the weight manifests.
    nlohmann::json hashes = nlohmann::json::object();
};

/// Reads `<dir>/{classifier,locator,segmenter}.json` (+ .bin). Throws
/// WeightsError on missing files, bad hashes or unsuitable architectures.
ModelBundle load_bundle(const std::filesystem::path& dir);
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);
/// Throws WeightsError when a network is missing or has the wrong shape of output.
void check_bundle(const ModelBundle& bundle);

enum class ExamStatus { ok, crop_fail, no_sax, empty_segmentation, error };
std::string to_string(ExamStatus s);

struct PipelineResult {
    nlohmann::json report;
    ExamStatus status = ExamStatus::error;
    /// Full-frame labels in the chosen stack's geometry (status ok only).
    std::optional<LabelVolume> labels;
};

/// Stages 1-4 on one exam directory. Stage failures yield a report with the
/// matching status; only programming errors propagate.
PipelineResult run_pipeline(const std::filesystem::path& exam_dir, const ModelBundle& models,
                            const PipelineConfig& config);

/// report.json and, when present and enabled, labels.svlv in `out_dir`.
void write_result(const PipelineResult& r, const std::filesystem::path& out_dir, const PipelineConfig& config);

/// Copy of a report without wall-clock fields, for determinism comparisons.
nlohmann::json strip_timings(nlohmann::json report);

/// Exam identifier: metadata.json "exam_id" if present, else the directory name.
std::string exam_id_for(const std::filesystem::path& exam_dir);

/// Agreement of one pipeline result with phantom truth: Dice/IoU at the true
/// ED and ES phases, box IoU and containment, volume and EF deltas. Throws
/// ContractViolation when label shapes differ.
nlohmann::json evaluate_exam(const nlohmann::json& report, const std::optional<LabelVolume>& predicted,
                             const phantom::PhantomTruth& truth);

/// Reads report.json (file or directory) and the labels file it names.
std::pair<nlohmann::json, std::optional<LabelVolume>> load_result(const std::filesystem::path& report_path);

}  // namespace svpipe
