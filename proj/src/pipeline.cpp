#include "svpipe/pipeline.hpp"

#include <chrono>
#include <fstream>

#include "svpipe/error.hpp"
#include "svpipe/nn/weights.hpp"
#include "svpipe/sax_selection.hpp"
#include "svpipe/stats.hpp"

namespace svpipe {

namespace fs = std::filesystem;

void PipelineConfig::validate() const {
    if (!(locator_threshold >= 0 && locator_threshold < 1)) throw ContractViolation("locator_threshold must lie in [0,1)");
    if (!(box_expansion >= 1)) throw ContractViolation("box_expansion must be >= 1");
    if (!(myocardial_density > 0)) throw ContractViolation("myocardial_density must be positive");
    if (default_bsa_m2 && !(*default_bsa_m2 > 0)) throw ContractViolation("default_bsa_m2 must be positive");
    if (parse_workers < 1) throw ContractViolation("parse_workers must be >= 1");
    if (!(tolerances.gap_relative > 0) || !(tolerances.orientation > 0) || !(tolerances.pixel_spacing_mm > 0) ||
        !(tolerances.same_position_mm > 0))
        throw ContractViolation("grouping tolerances must be positive");
}

nlohmann::json to_json(const PipelineConfig& c) {
    return {{"locator_threshold", c.locator_threshold},
            {"box_expansion", c.box_expansion},
            {"myocardial_density", c.myocardial_density},
            {"default_bsa_m2", c.default_bsa_m2 ? nlohmann::json(*c.default_bsa_m2) : nlohmann::json(nullptr)},
            {"phase_range", to_string(c.phase_range)},
            {"tolerances",
             {{"orientation", c.tolerances.orientation},
              {"pixel_spacing_mm", c.tolerances.pixel_spacing_mm},
              {"gap_relative", c.tolerances.gap_relative},
              {"same_position_mm", c.tolerances.same_position_mm}}},
            {"parse_workers", c.parse_workers},
            {"write_labels", c.write_labels}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ContractViolation("pipeline config must be a JSON object");
    static const std::set<std::string> known{"locator_threshold", "box_expansion", "myocardial_density",
                                             "default_bsa_m2",    "phase_range",   "tolerances",
                                             "parse_workers",     "write_labels"};
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw ContractViolation("unknown pipeline config key: " + k);
    PipelineConfig c;
    try {
        c.locator_threshold = j.value("locator_threshold", c.locator_threshold);
        c.box_expansion = j.value("box_expansion", c.box_expansion);
        c.myocardial_density = j.value("myocardial_density", c.myocardial_density);
        if (j.contains("default_bsa_m2") && !j.at("default_bsa_m2").is_null())
            c.default_bsa_m2 = j.at("default_bsa_m2").get<double>();
        if (j.contains("phase_range")) {
            const auto r = j.at("phase_range").get<std::string>();
            if (r == "all") c.phase_range = SliceRange::all;
            else if (r == "middle_five") c.phase_range = SliceRange::middle_five;
            else throw ContractViolation("phase_range must be 'all' or 'middle_five'");
        }
        if (j.contains("tolerances")) {
            const auto& t = j.at("tolerances");
            for (const auto& [k, v] : t.items())
                if (k != "orientation" && k != "pixel_spacing_mm" && k != "gap_relative" && k != "same_position_mm")
                    throw ContractViolation("unknown tolerance key: " + k);
            c.tolerances.orientation = t.value("orientation", c.tolerances.orientation);
            c.tolerances.pixel_spacing_mm = t.value("pixel_spacing_mm", c.tolerances.pixel_spacing_mm);
            c.tolerances.gap_relative = t.value("gap_relative", c.tolerances.gap_relative);
            c.tolerances.same_position_mm = t.value("same_position_mm", c.tolerances.same_position_mm);
        }
        c.parse_workers = j.value("parse_workers", c.parse_workers);
        c.write_labels = j.value("write_labels", c.write_labels);
    } catch (const nlohmann::json::exception& e) {
        throw ContractViolation(std::string("pipeline config: ") + e.what());
    }
    c.validate();
    return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ContractViolation("cannot open config " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ContractViolation("malformed config " + path.string() + ": " + e.what());
    }
    return pipeline_config_from_json(j);
}

namespace {

std::string manifest_hash(const fs::path& manifest) {
    std::ifstream f(manifest);
    nlohmann::json j;
    f >> j;
    return j.at("hash").get<std::string>();
}

}  // namespace

void check_bundle(const ModelBundle& b) {
    if (!b.classifier || !b.locator || !b.segmenter) throw WeightsError("weights bundle is missing a model");
    if (b.classifier->spec().architecture != nn::Architecture::sax_classifier)
        throw WeightsError("classifier weights are not a sax_classifier network");
    if (b.locator->spec().architecture != nn::Architecture::unet3plus || b.locator->spec().out_classes != 2)
        throw WeightsError("locator weights must be a 2-class unet3plus network");
    if (b.segmenter->spec().architecture != nn::Architecture::unet3plus || b.segmenter->spec().out_classes != 3)
        throw WeightsError("segmenter weights must be a 3-class unet3plus network");
    for (const auto* n : {b.classifier.get(), b.locator.get(), b.segmenter.get()})
        if (n->spec().in_channels != 1) throw WeightsError("all networks must take a single input channel");
}

ModelBundle load_bundle(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw WeightsError("weights bundle directory not found: " + dir.string());
    ModelBundle b;
    try {
        for (const char* name : {"classifier", "locator", "segmenter"}) {
            const auto manifest = dir / (std::string(name) + ".json");
            auto net = nn::load_weights<float>(manifest);
            b.hashes[name] = manifest_hash(manifest);
            if (std::string(name) == "classifier") b.classifier = std::move(net);
            else if (std::string(name) == "locator") b.locator = std::move(net);
            else b.segmenter = std::move(net);
        }
    } catch (const WeightsError&) {
        throw;
    } catch (const std::exception& e) {
        throw WeightsError("cannot load weights bundle " + dir.string() + ": " + e.what());
    }
    check_bundle(b);
    return b;
}

void save_bundle(const ModelBundle& b, const fs::path& dir) {
    check_bundle(b);
    fs::create_directories(dir);
    nn::save_weights(*b.classifier, dir / "classifier.json");
    nn::save_weights(*b.locator, dir / "locator.json");
    nn::save_weights(*b.segmenter, dir / "segmenter.json");
}

std::string to_string(ExamStatus s) {
    switch (s) {
        case ExamStatus::ok: return "ok";
        case ExamStatus::crop_fail: return "crop_fail";
        case ExamStatus::no_sax: return "no_sax";
        case ExamStatus::empty_segmentation: return "empty_segmentation";
        case ExamStatus::error: return "error";
    }
    return "error";
}

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t) {
    return std::chrono::duration<double>(clock_type::now() - t).count();
}

std::optional<nlohmann::json> read_metadata(const fs::path& exam_dir) {
    const auto p = exam_dir / "metadata.json";
    if (!fs::is_regular_file(p)) return std::nullopt;
    std::ifstream f(p);
    try {
        nlohmann::json j;
        f >> j;
        if (j.is_object()) return j;
    } catch (const nlohmann::json::exception&) {
    }
    return std::nullopt;
}

LabelVolume paste_full_frame(const LabelVolume& crop, const BoundingBox& box, int rows, int cols) {
    LabelVolume full(crop.phases, crop.slices, rows, cols);
    full.pixel_spacing = crop.pixel_spacing;
    full.slice_gap = crop.slice_gap;
    for (int p = 0; p < crop.phases; ++p)
        for (int s = 0; s < crop.slices; ++s)
            for (int r = 0; r < crop.rows; ++r)
                for (int c = 0; c < crop.cols; ++c) full.at(p, s, box.row0 + r, box.col0 + c) = crop.at(p, s, r, c);
    return full;
}

}  // namespace

std::string exam_id_for(const fs::path& exam_dir) {
    if (const auto m = read_metadata(exam_dir); m && m->contains("exam_id") && m->at("exam_id").is_string())
        return m->at("exam_id").get<std::string>();
    auto p = exam_dir;
    if (!p.has_filename()) p = p.parent_path();
    return p.filename().string();
}

PipelineResult run_pipeline(const fs::path& exam_dir, const ModelBundle& models, const PipelineConfig& config) {
    const auto t_start = clock_type::now();
    PipelineResult res;
    auto& rep = res.report;
    rep["schema_version"] = kReportSchemaVersion;
    rep["exam_id"] = exam_id_for(exam_dir);
    rep["config"] = to_json(config);
    rep["weights"] = models.hashes;
    nlohmann::json timings{{"extract_s", 0.0}, {"identify_s", 0.0}, {"localise_s", 0.0}, {"segment_s", 0.0}};
    nlohmann::json counts{{"files", 0},
                          {"dicom_images", 0},
                          {"series", 0},
                          {"cine_series", 0},
                          {"stacks", 0},
                          {"images_classified", 0},
                          {"images_localized", 0},
                          {"images_segmented", 0}};
    nlohmann::json flags{{"non_physiologic", false}, {"middle_five_fallback", false}, {"constant_curve", false}};
    nlohmann::json warnings = nlohmann::json::array();
    res.status = ExamStatus::ok;

    auto finish = [&](ExamStatus status, const std::string& message) {
        res.status = status;
        rep["status"] = to_string(status);
        if (!message.empty()) rep["message"] = message;
        rep["timings"] = timings;
        rep["timings"]["total_s"] = seconds_since(t_start);
        rep["counts"] = counts;
        rep["flags"] = flags;
        rep["warnings"] = warnings;
        return res;
    };

    try {
        // Stage 1: extraction and stack grouping.
        auto t = clock_type::now();
        auto parsed = parse_exam_directory(exam_dir, config.parse_workers);
        counts["files"] = parsed.diagnostics.files_seen;
        counts["dicom_images"] = parsed.images.size();
        std::set<std::string> series;
        for (const auto& im : parsed.images) series.insert(im.series_uid);
        counts["series"] = series.size();
        rep["ingest"] = {{"not_dicom", parsed.diagnostics.not_dicom},
                         {"corrupt", parsed.diagnostics.corrupt},
                         {"unsupported", parsed.diagnostics.unsupported},
                         {"missing_geometry", parsed.diagnostics.missing_geometry}};
        for (const auto& w : parsed.diagnostics.warnings) warnings.push_back(w);
        CollectDiagnostics cd;
        auto cine = collect_cine_series(std::move(parsed.images), &cd);
        counts["cine_series"] = cine.size();
        rep["ingest"]["non_cine_positions"] = cd.non_cine_positions;
        rep["ingest"]["rejected_series"] = cd.rejected_series;
        for (const auto& w : cd.warnings) warnings.push_back(w);
        GroupingDiagnostics gd;
        auto stacks = group_into_stacks(std::move(cine), config.tolerances, &gd);
        counts["stacks"] = stacks.size();
        rep["ingest"]["discarded_runs"] = gd.discarded_runs;
        rep["ingest"]["discarded_slices"] = gd.discarded_slices;
        rep["stacks"] = stack_manifest(stacks);
        timings["extract_s"] = seconds_since(t);
        if (stacks.empty()) return finish(ExamStatus::no_sax, "no cine stacks");

        // Stage 2: short-axis identification.
        t = clock_type::now();
        const auto sel = select_sax_stack(stacks, *models.classifier);
        counts["images_classified"] = sel.images_classified;
        rep["selection"] = to_json(sel);
        const CineStack& sax = stacks[sel.chosen_index];
        rep["sax_stack"] = {{"stack_id", sax.stack_id},
                            {"source_series", sax.source_series},
                            {"slices", sax.slice_count()},
                            {"frames", sax.frame_count()},
                            {"rows", sax.rows()},
                            {"cols", sax.cols()},
                            {"pixel_spacing_mm", sax.pixel_spacing},
                            {"slice_gap_mm", sax.slice_gap}};
        timings["identify_s"] = seconds_since(t);

        // Stage 3: heart localisation and cropping.
        t = clock_type::now();
        const auto masks = remove_islands(predict_heart_masks(*models.locator, sax, config.locator_threshold));
        counts["images_localized"] = masks.size();
        BoundingBox box;
        try {
            box = compute_bounding_box(masks, config.box_expansion);
        } catch (const CropFailure& e) {
            timings["localise_s"] = seconds_since(t);
            return finish(ExamStatus::crop_fail, e.what());
        }
        rep["bounding_box"] = to_json(box);
        const CineStack cropped = crop_stack(sax, box);
        timings["localise_s"] = seconds_since(t);

        // Stage 4: segmentation and clinical indices.
        t = clock_type::now();
        const LabelVolume vol = largest_component_filter(segment_stack(*models.segmenter, cropped));
        counts["images_segmented"] = vol.phases * vol.slices;
        const auto restricted = volume_time_curve(vol, config.phase_range);
        const auto all = volume_time_curve(vol, SliceRange::all);
        const auto phases = detect_phases(restricted);
        flags["middle_five_fallback"] = restricted.fallback;
        flags["constant_curve"] = phases.constant;
        for (const auto& w : restricted.warnings) warnings.push_back(w);
        for (const auto& w : phases.warnings) warnings.push_back(w);
        rep["volume_curve"] = {{"range", to_string(restricted.range)},
                               {"restricted_ml", restricted.volume_ml},
                               {"all_slices_ml", all.volume_ml}};

        std::optional<double> bsa;
        std::string bsa_source = "none";
        if (const auto m = read_metadata(exam_dir); m && m->contains("bsa_m2") && m->at("bsa_m2").is_number()) {
            bsa = m->at("bsa_m2").get<double>();
            bsa_source = "metadata";
        } else if (config.default_bsa_m2) {
            bsa = config.default_bsa_m2;
            bsa_source = "config";
        }
        if (bsa && !(*bsa > 0)) {
            warnings.push_back("non-positive bsa_m2 ignored");
            bsa.reset();
            bsa_source = "none";
        }
        FunctionReport fr;
        try {
            fr = compute_function_report(vol, phases.ed_phase, phases.es_phase, bsa.value_or(1.0),
                                         config.myocardial_density);
        } catch (const EmptySegmentation& e) {
            timings["segment_s"] = seconds_since(t);
            return finish(ExamStatus::empty_segmentation, e.what());
        }
        auto fj = to_json(fr);
        if (!bsa) {
            for (const char* k : {"bsa_m2", "edv_i_ml_m2", "esv_i_ml_m2", "sv_i_ml_m2", "mass_i_g_m2"}) fj[k] = nullptr;
            warnings.push_back("no body surface area available; indexed values omitted");
        }
        fj["bsa_source"] = bsa_source;
        rep["function"] = fj;
        flags["non_physiologic"] = fr.non_physiologic;
        res.labels = paste_full_frame(vol, box, sax.rows(), sax.cols());
        timings["segment_s"] = seconds_since(t);
        return finish(ExamStatus::ok, "");
    } catch (const IngestError& e) {
        return finish(ExamStatus::error, e.what());
    } catch (const ContractViolation& e) {
        return finish(ExamStatus::error, e.what());
    }
}

void write_result(const PipelineResult& r, const fs::path& out_dir, const PipelineConfig& config) {
    fs::create_directories(out_dir);
    nlohmann::json rep = r.report;
    if (r.labels && config.write_labels) {
        write_label_volume(out_dir / "labels.svlv", *r.labels);
        rep["labels_file"] = "labels.svlv";
    }
    std::ofstream f(out_dir / "report.json");
    f << rep.dump(2) << "\n";
    if (!f) throw Error("cannot write report to " + out_dir.string());
}

nlohmann::json strip_timings(nlohmann::json report) {
    report.erase("timings");
    return report;
}

std::pair<nlohmann::json, std::optional<LabelVolume>> load_result(const fs::path& report_path) {
    const fs::path file = fs::is_directory(report_path) ? report_path / "report.json" : report_path;
    std::ifstream f(file);
    if (!f) throw ContractViolation("cannot open report " + file.string());
    nlohmann::json rep;
    try {
        f >> rep;
    } catch (const nlohmann::json::exception& e) {
        throw ContractViolation("malformed report " + file.string() + ": " + e.what());
    }
    std::optional<LabelVolume> labels;
    if (rep.contains("labels_file")) labels = read_label_volume(file.parent_path() / rep.at("labels_file").get<std::string>());
    return {rep, labels};
}

namespace {

std::vector<std::uint8_t> class_mask(const LabelVolume& v, int phase, std::uint8_t label) {
    std::vector<std::uint8_t> m(v.phase_size());
    const auto* b = v.labels.data() + v.index(phase, 0, 0, 0);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = b[i] == label ? 1 : 0;
    return m;
}

}  // namespace

nlohmann::json evaluate_exam(const nlohmann::json& report, const std::optional<LabelVolume>& predicted,
                             const phantom::PhantomTruth& truth) {
    nlohmann::json m;
    m["exam_id"] = truth.exam_id;
    m["status"] = report.value("status", "error");
    bool sax_correct = false;
    if (report.contains("sax_stack")) {
        const auto src = report.at("sax_stack").at("source_series").get<std::vector<std::string>>();
        sax_correct = !src.empty();
        for (const auto& s : src)
            sax_correct = sax_correct && std::find(truth.sax_series_uids.begin(), truth.sax_series_uids.end(), s) !=
                                             truth.sax_series_uids.end();
    }
    m["sax_correct"] = sax_correct;

    const double expansion = report.contains("config") ? report.at("config").value("box_expansion", 1.5) : 1.5;
    std::vector<Mask> first;
    for (int s = 0; s < truth.labels.slices; ++s) first.push_back(truth.labels.plane(0, s));
    const BoundingBox truth_box = compute_bounding_box(first, expansion);
    m["truth_box"] = to_json(truth_box);
    if (report.contains("bounding_box") && sax_correct) {
        const BoundingBox box = box_from_json(report.at("bounding_box"));
        m["box_iou"] = box_iou(box, truth_box);
        bool contains = true;
        for (const auto& e : truth.heart_extent) {
            if (e[0] < 0) continue;
            contains = contains && box.contains(e[0], e[1]) && box.contains(e[2], e[3]);
        }
        m["box_contains_heart"] = contains;
    }

    if (predicted) {
        const auto& p = *predicted;
        const auto& t = truth.labels;
        if (p.phases != t.phases || p.slices != t.slices || p.rows != t.rows || p.cols != t.cols)
            throw ContractViolation("predicted labels (" + std::to_string(p.phases) + "x" + std::to_string(p.slices) +
                                    "x" + std::to_string(p.rows) + "x" + std::to_string(p.cols) +
                                    ") do not match truth (" + std::to_string(t.phases) + "x" +
                                    std::to_string(t.slices) + "x" + std::to_string(t.rows) + "x" +
                                    std::to_string(t.cols) + ")");
        const int ed = truth.volumes.ed_phase, es = truth.volumes.es_phase;
        for (const auto& [name, phase] : {std::pair{"ed", ed}, std::pair{"es", es}}) {
            for (const auto& [cname, label] : {std::pair{"blood", kBloodPool}, std::pair{"myo", kMyocardium}}) {
                const auto a = class_mask(p, phase, label), b = class_mask(t, phase, label);
                m[std::string("dice_") + cname + "_" + name] = stats::dice(a, b);
                m[std::string("iou_") + cname + "_" + name] = stats::iou(a, b);
            }
        }
    }

    const auto& v = truth.volumes;
    m["truth"] = {{"edv_ml", v.edv_ml}, {"esv_ml", v.esv_ml}, {"sv_ml", v.sv_ml}, {"ef", v.ef}, {"mass_g", v.mass_g},
                  {"ed_phase", v.ed_phase}, {"es_phase", v.es_phase}};
    if (report.contains("function")) {
        const auto& f = report.at("function");
        const double edv = f.at("edv_ml").get<double>(), esv = f.at("esv_ml").get<double>();
        const double ef = f.at("ef").get<double>(), mass = f.at("mass_g").get<double>();
        m["predicted"] = {{"edv_ml", edv}, {"esv_ml", esv}, {"sv_ml", f.at("sv_ml")}, {"ef", ef}, {"mass_g", mass},
                          {"ed_phase", f.at("ed_phase")}, {"es_phase", f.at("es_phase")}};
        m["delta"] = {{"edv_ml", edv - v.edv_ml},
                      {"esv_ml", esv - v.esv_ml},
                      {"ef", ef - v.ef},
                      {"mass_g", mass - v.mass_g},
                      {"edv_rel", (edv - v.edv_ml) / v.edv_ml},
                      {"esv_rel", (esv - v.esv_ml) / v.esv_ml}};
    }
    return m;
}

}  // namespace svpipe
