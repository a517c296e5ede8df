#include "svpipe/batch.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "svpipe/error.hpp"
#include "svpipe/stats.hpp"

namespace svpipe {

namespace fs = std::filesystem;

std::vector<fs::path> list_exam_dirs(const fs::path& root) {
    if (!fs::is_directory(root)) throw ContractViolation("batch root is not a directory: " + root.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw ContractViolation("batch root contains no exam directories: " + root.string());
    return dirs;
}

BatchResult run_batch(const fs::path& root, const ModelBundle& models, const PipelineConfig& config,
                      const BatchOptions& options) {
    if (options.workers < 1) throw ContractViolation("workers must be >= 1");
    check_bundle(models);
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    BatchResult out;
    out.exam_dirs = list_exam_dirs(root);
    const std::size_t n = out.exam_dirs.size();
    out.results.resize(n);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            const auto& dir = out.exam_dirs[i];
            PipelineResult r;
            try {
                r = run_pipeline(dir, models, config);
            } catch (const std::exception& e) {
                r = PipelineResult{};
                r.report = {{"schema_version", kReportSchemaVersion},
                            {"exam_id", dir.filename().string()},
                            {"status", to_string(ExamStatus::error)},
                            {"message", e.what()}};
            }
            const auto id = r.report.value("exam_id", std::string());
            if (auto it = options.review.find(id); it != options.review.end()) r.report["review"] = it->second;
            if (!options.out_dir.empty()) {
                try {
                    write_result(r, options.out_dir / dir.filename(), config);
                } catch (const std::exception& e) {
                    r.status = ExamStatus::error;
                    r.report["status"] = to_string(ExamStatus::error);
                    r.report["message"] = std::string("cannot write outputs: ") + e.what();
                }
            }
            out.results[i] = std::move(r);
        }
    };
    const int threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(options.workers), n));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::vector<nlohmann::json> reports;
    for (const auto& r : out.results) reports.push_back(r.report);
    out.summary = summarize_reports(reports);
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.summary["wall_seconds"] = out.wall_seconds;
    out.summary["workers"] = options.workers;
    return out;
}

namespace {

struct Row {
    const char* stage;
    const char* variable;
    const char* key;
};

constexpr Row kRows[] = {
    {"1: Extract Cine Stacks", "Number of files", "files"},
    {"1: Extract Cine Stacks", "Number of series", "series"},
    {"1: Extract Cine Stacks", "Number of stacks", "stacks"},
    {"1: Extract Cine Stacks", "Time Taken (s)", "extract_s"},
    {"2: Identify SAX", "Number of images classified", "images_classified"},
    {"2: Identify SAX", "Time Taken (s)", "identify_s"},
    {"2: Identify SAX", "Time per image (s)", "identify_per_image_s"},
    {"3: Heart Localisation", "Number of images used for localisation", "images_localized"},
    {"3: Heart Localisation", "Time Taken (s)", "localise_s"},
    {"3: Heart Localisation", "Time per image (s)", "localise_per_image_s"},
    {"4: Ventricle Segmentation", "Number of images segmented", "images_segmented"},
    {"4: Ventricle Segmentation", "Time taken (s)", "segment_s"},
    {"4: Ventricle Segmentation", "Time per image (s)", "segment_per_image_s"},
    {"Total", "Total time taken (s)", "total_s"},
};

double per_image(const nlohmann::json& r, const char* timing, const char* count) {
    const double c = r.at("counts").at(count).get<double>();
    return c > 0 ? r.at("timings").at(timing).get<double>() / c : 0.0;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

}  // namespace

nlohmann::json summarize_reports(const std::vector<nlohmann::json>& reports) {
    nlohmann::json statuses = nlohmann::json::object();
    for (const auto s : {ExamStatus::ok, ExamStatus::crop_fail, ExamStatus::no_sax, ExamStatus::empty_segmentation,
                         ExamStatus::error})
        statuses[to_string(s)] = 0;
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : reports) {
        const auto status = r.value("status", std::string("error"));
        statuses[status] = statuses.value(status, 0) + 1;
        if (status != "ok") continue;
        const auto& c = r.at("counts");
        const auto& t = r.at("timings");
        for (const char* k : {"files", "series", "stacks", "images_classified", "images_localized", "images_segmented"})
            values[k].push_back(c.at(k).get<double>());
        for (const char* k : {"extract_s", "identify_s", "localise_s", "segment_s", "total_s"})
            values[k].push_back(t.at(k).get<double>());
        values["identify_per_image_s"].push_back(per_image(r, "identify_s", "images_classified"));
        values["localise_per_image_s"].push_back(per_image(r, "localise_s", "images_localized"));
        values["segment_per_image_s"].push_back(per_image(r, "segment_s", "images_segmented"));
    }
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : kRows) {
        nlohmann::json j{{"stage", row.stage}, {"variable", row.variable}, {"key", row.key}};
        const auto it = values.find(row.key);
        if (it != values.end() && !it->second.empty()) {
            const auto s = stats::summarize(it->second);
            j["median"] = s.median;
            j["q1"] = s.q1;
            j["q3"] = s.q3;
            j["min"] = s.min;
            j["max"] = s.max;
            j["n"] = s.n;
        } else {
            j["n"] = 0;
        }
        rows.push_back(j);
    }
    return {{"exams", reports.size()}, {"status_counts", statuses}, {"rows", rows}};
}

std::string summary_table(const nlohmann::json& summary) {
    std::ostringstream os;
    os << "Stage\tVariable\tMedian (IQR)\tRange\n";
    std::string last;
    for (const auto& r : summary.at("rows")) {
        const auto stage = r.at("stage").get<std::string>();
        os << (stage == last ? "" : stage) << '\t' << r.at("variable").get<std::string>() << '\t';
        last = stage;
        if (r.at("n").get<int>() == 0) {
            os << "-\t-\n";
            continue;
        }
        os << fmt(r.at("median")) << " (" << fmt(r.at("q1")) << " - " << fmt(r.at("q3")) << ")\t" << fmt(r.at("min"))
           << " - " << fmt(r.at("max")) << '\n';
    }
    os << "Status";
    for (const auto& [k, v] : summary.at("status_counts").items()) os << '\t' << k << '=' << v.get<int>();
    os << '\n';
    return os.str();
}

std::map<std::string, std::string> read_review_csv(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ContractViolation("cannot open review file " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    bool header = true;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            header = false;
            if (line.rfind("exam_id", 0) == 0) continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ContractViolation("review line without a comma: " + line);
        out[line.substr(0, comma)] = line.substr(comma + 1);
    }
    return out;
}

}  // namespace svpipe
