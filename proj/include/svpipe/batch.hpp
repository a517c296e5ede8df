#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "svpipe/pipeline.hpp"

namespace svpipe {

struct BatchOptions {
    int workers = 1;
    /// Per-exam outputs go to `<out_dir>/<exam dir name>/`; nothing is written when empty.
    std::filesystem::path out_dir;
    /// exam_id -> human review rating, copied into the report as "review".
    std::map<std::string, std::string> review;
};

struct BatchResult {
    /// In sorted exam-directory order, independent of scheduling.
    std::vector<PipelineResult> results;
    std::vector<std::filesystem::path> exam_dirs;
    nlohmann::json summary;
    double wall_seconds = 0;
};

/// Immediate subdirectories of `root`, sorted by name. Throws ContractViolation
/// when there is none.
std::vector<std::filesystem::path> list_exam_dirs(const std::filesystem::path& root);

/// Runs every exam independently; a failing exam only affects its own report.
BatchResult run_batch(const std::filesystem::path& root, const ModelBundle& models, const PipelineConfig& config,
                      const BatchOptions& options = {});

/// Median, interquartile range and range of stage timings and image counts
/// over ok exams, laid out by stage, plus status counts over all exams.
nlohmann::json summarize_reports(const std::vector<nlohmann::json>& reports);

/// Tab-separated rendering of a summary in stage / variable / median (IQR) / range rows.
std::string summary_table(const nlohmann::json& summary);

/// CSV with header `exam_id,rating`.
std::map<std::string, std::string> read_review_csv(const std::filesystem::path& path);

}  // namespace svpipe
