#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "svpipe/batch.hpp"
#include "svpipe/error.hpp"
#include "svpipe/nn/weights.hpp"
#include "svpipe/phantom.hpp"
#include "svpipe/pipeline.hpp"
#include "svpipe/stats.hpp"
#include "svpipe/training_data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace svpipe;

namespace {

struct Common {
    std::string weights;
    std::string config;
    std::string out;
    int workers = 1;
    std::optional<std::uint64_t> seed;
};

json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw ContractViolation("cannot open " + p.string());
    try {
        json j;
        f >> j;
        return j;
    } catch (const json::exception& e) {
        throw ContractViolation("malformed JSON in " + p.string() + ": " + e.what());
    }
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p);
    f << text;
    if (!f) throw Error("cannot write " + p.string());
}

PipelineConfig config_of(const Common& c) {
    PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : load_pipeline_config(c.config);
    return cfg;
}

ModelBundle bundle_of(const Common& c) {
    if (c.weights.empty()) throw WeightsError("--weights <bundle dir> is required");
    return load_bundle(c.weights);
}

int cmd_run(const std::string& exam, const Common& c) {
    const auto cfg = config_of(c);
    const auto models = bundle_of(c);
    const auto r = run_pipeline(exam, models, cfg);
    if (!c.out.empty()) write_result(r, c.out, cfg);
    std::cout << r.report.dump(2) << "\n";
    return 0;
}

int cmd_batch(const std::string& root, const Common& c, const std::string& review) {
    const auto cfg = config_of(c);
    const auto models = bundle_of(c);
    BatchOptions opt;
    opt.workers = c.workers;
    opt.out_dir = c.out;
    if (!review.empty()) opt.review = read_review_csv(review);
    const auto res = run_batch(root, models, cfg, opt);
    const auto table = summary_table(res.summary);
    if (!c.out.empty()) {
        write_text(fs::path(c.out) / "summary.json", res.summary.dump(2) + "\n");
        write_text(fs::path(c.out) / "summary.tsv", table);
    }
    for (std::size_t i = 0; i < res.results.size(); ++i)
        std::cerr << res.exam_dirs[i].filename().string() << ": " << to_string(res.results[i].status) << "\n";
    std::cout << table;
    return 0;
}

/// Paired (predicted, truth) values for agreement statistics.
json aggregate_metrics(const std::vector<json>& metrics) {
    json agg;
    for (const char* k : {"dice_blood_ed", "dice_blood_es", "dice_myo_ed", "dice_myo_es", "iou_blood_ed",
                          "iou_blood_es", "iou_myo_ed", "iou_myo_es", "box_iou"}) {
        std::vector<double> v;
        for (const auto& m : metrics)
            if (m.contains(k)) v.push_back(m.at(k).get<double>());
        if (v.empty()) continue;
        const auto s = stats::summarize(v);
        agg[k] = {{"median", s.median}, {"q1", s.q1}, {"q3", s.q3}, {"min", s.min}, {"max", s.max}, {"n", s.n}};
    }
    int sax = 0;
    for (const auto& m : metrics) sax += m.value("sax_correct", false) ? 1 : 0;
    agg["sax_correct"] = sax;
    agg["exams"] = metrics.size();
    for (const char* k : {"edv_ml", "esv_ml", "ef", "mass_g"}) {
        std::vector<stats::Pair> pairs;
        for (const auto& m : metrics)
            if (m.contains("predicted"))
                pairs.emplace_back(m.at("predicted").at(k).get<double>(), m.at("truth").at(k).get<double>());
        if (pairs.size() < 2) continue;
        const auto a = stats::agreement(pairs);
        agg["agreement"][k] = {{"bias", a.bias},           {"loa_low", a.loa_low},
                               {"loa_high", a.loa_high},   {"pearson_r", a.pearson_defined ? json(a.pearson_r) : json()},
                               {"t_stat", a.t_stat},       {"p_value", a.t_test_defined ? json(a.p_value) : json()},
                               {"n", a.n}};
    }
    return agg;
}

int cmd_eval(const std::string& report, const std::string& truth, const Common& c) {
    json out;
    const fs::path rp(report), tp(truth);
    if (rp.extension() == ".svlv" && tp.extension() == ".svlv") {
        const auto a = read_label_volume(rp), b = read_label_volume(tp);
        if (a.phases != b.phases || a.slices != b.slices || a.rows != b.rows || a.cols != b.cols)
            throw ContractViolation("label volume shapes differ");
        for (const auto& [name, label] : {std::pair{"blood", kBloodPool}, std::pair{"myo", kMyocardium}}) {
            std::vector<std::uint8_t> x(a.labels.size()), y(b.labels.size());
            for (std::size_t i = 0; i < x.size(); ++i) {
                x[i] = a.labels[i] == label;
                y[i] = b.labels[i] == label;
            }
            out[std::string("dice_") + name] = stats::dice(x, y);
            out[std::string("iou_") + name] = stats::iou(x, y);
        }
    } else if (fs::is_directory(rp) && !fs::exists(rp / "report.json")) {
        // Batch output tree against a tree of phantom exams with matching names.
        std::vector<json> metrics;
        json per_exam = json::array();
        for (const auto& d : list_exam_dirs(rp)) {
            json m;
            try {
                const auto [rep, labels] = load_result(d);
                m = evaluate_exam(rep, labels, phantom::load_truth(tp / d.filename()));
                metrics.push_back(m);
            } catch (const std::exception& e) {
                m = {{"exam", d.filename().string()}, {"excluded", e.what()}};
            }
            per_exam.push_back(m);
        }
        out = {{"exams", per_exam}, {"aggregate", aggregate_metrics(metrics)}};
    } else {
        const auto [rep, labels] = load_result(rp);
        out = evaluate_exam(rep, labels, phantom::load_truth(tp));
    }
    if (!c.out.empty()) write_text(c.out, out.dump(2) + "\n");
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_phantom(const std::string& spec_path, const Common& c) {
    if (c.out.empty()) throw ContractViolation("--out <dir> is required");
    const json j = read_json(spec_path);
    if (j.contains("count") || j.contains("specs")) {
        auto specs = training::dataset_from_json(j);
        for (const auto& s : specs) {
            const auto dir = fs::path(c.out) / s.resolved_exam_id();
            phantom::generate_phantom_exam(s, dir);
            std::cout << dir.string() << "\n";
        }
        return 0;
    }
    phantom::PhantomSpec spec;
    try {
        spec = j.get<phantom::PhantomSpec>();
    } catch (const json::exception& e) {
        throw ContractViolation(std::string("phantom spec: ") + e.what());
    }
    if (c.seed) spec = phantom::randomized_spec(*c.seed, spec);
    spec.validate();
    const auto truth = phantom::generate_phantom_exam(spec, c.out);
    std::cout << truth_to_json(truth).dump(2) << "\n";
    return 0;
}

int cmd_train(const std::string& dataset, const std::string& kind_name, const Common& c) {
    if (c.out.empty()) throw ContractViolation("--out <dir> is required");
    const auto specs = training::dataset_from_json(read_json(dataset));
    const json recipes = c.config.empty() ? json::object() : read_json(c.config);
    std::vector<training::ModelKind> kinds;
    if (kind_name == "all")
        kinds = {training::ModelKind::classifier, training::ModelKind::locator, training::ModelKind::segmenter};
    else
        kinds = {training::model_kind_from_string(kind_name)};
    fs::create_directories(c.out);
    for (const auto kind : kinds) {
        const auto name = training::to_string(kind);
        auto recipe = training::recipe_from_json(kind, recipes.value(name, json::object()));
        if (c.seed) recipe.train.seed = *c.seed;
        std::cerr << "training " << name << " on " << specs.size() << " phantoms\n";
        auto tm = training::train_model(kind, specs, recipe, [&](const nn::EpochReport& e) {
            std::cerr << "  epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss
                      << "\n";
        });
        nn::save_weights(*tm.network, fs::path(c.out) / (name + ".json"));
        json log{{"model", name},
                 {"recipe", training::recipe_to_json(recipe)},
                 {"samples", tm.samples},
                 {"data_seconds", tm.data_seconds},
                 {"train_seconds", tm.train_seconds},
                 {"train_loss", tm.result.train_loss},
                 {"val_loss", tm.result.val_loss}};
        write_text(fs::path(c.out) / (name + "_training.json"), log.dump(2) + "\n");
    }
    return 0;
}

std::vector<stats::Pair> read_pairs_csv(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw ContractViolation("cannot open " + p.string());
    std::vector<stats::Pair> out;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ContractViolation("expected x,y per line: " + line);
        try {
            out.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
        } catch (const std::invalid_argument&) {
            if (out.empty()) continue;  // header
            throw ContractViolation("non-numeric value in line: " + line);
        }
    }
    return out;
}

int cmd_stats(const std::string& csv, const std::string& title, const std::string& units, const Common& c) {
    const auto pairs = read_pairs_csv(csv);
    const auto a = stats::agreement(pairs);
    json out{{"n", a.n},
             {"bias", a.bias},
             {"loa_low", a.loa_low},
             {"loa_high", a.loa_high},
             {"pearson_r", a.pearson_defined ? json(a.pearson_r) : json()},
             {"t_stat", a.t_test_defined ? json(a.t_stat) : json()},
             {"p_value", a.t_test_defined ? json(a.p_value) : json()}};
    if (!c.out.empty()) {
        fs::create_directories(c.out);
        write_text(fs::path(c.out) / "agreement.json", out.dump(2) + "\n");
        write_text(fs::path(c.out) / "scatter.svg", stats::scatter_svg(pairs, title, "method A", "method B"));
        write_text(fs::path(c.out) / "bland_altman.svg", stats::bland_altman_svg(pairs, title, units));
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Short-axis cine ventricle segmentation pipeline"};
    app.require_subcommand(1);
    Common c;
    std::uint64_t seed = 0;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--weights", c.weights, "weights bundle directory");
        sub->add_option("--config", c.config, "JSON config file");
        sub->add_option("--out", c.out, "output path");
        sub->add_option("--workers", c.workers, "concurrent exams")->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed, "random seed");
    };

    std::string exam, root, report, truth, spec, dataset, kind, review, csv, title = "Agreement", units = "";
    auto* run = app.add_subcommand("run", "process one exam directory");
    run->add_option("exam_dir", exam)->required();
    add_common(run);
    auto* batch = app.add_subcommand("batch", "process every exam directory under a root");
    batch->add_option("root", root)->required();
    batch->add_option("--review", review, "CSV of exam_id,rating annotations");
    add_common(batch);
    auto* eval = app.add_subcommand("eval", "compare pipeline output with phantom truth");
    eval->add_option("report", report, "report.json, output dir, batch output root or .svlv")->required();
    eval->add_option("truth", truth, "exam dir, truth.json, phantom root or .svlv")->required();
    add_common(eval);
    auto* ph = app.add_subcommand("phantom", "generate phantom exams");
    ph->add_option("spec", spec, "phantom spec or dataset JSON")->required();
    add_common(ph);
    auto* train = app.add_subcommand("train", "train a model on phantoms");
    train->add_option("dataset", dataset, "dataset JSON")->required();
    train->add_option("model_kind", kind, "classifier, locator, segmenter or all")->required();
    add_common(train);
    auto* st = app.add_subcommand("stats", "agreement statistics of paired measurements");
    st->add_option("pairs", csv, "CSV with x,y per line")->required();
    st->add_option("--title", title);
    st->add_option("--units", units);
    add_common(st);

    CLI11_PARSE(app, argc, argv);
    for (auto* sub : app.get_subcommands())
        if (sub->count("--seed")) c.seed = seed;

    try {
        if (*run) return cmd_run(exam, c);
        if (*batch) return cmd_batch(root, c, review);
        if (*eval) return cmd_eval(report, truth, c);
        if (*ph) return cmd_phantom(spec, c);
        if (*train) return cmd_train(dataset, kind, c);
        if (*st) return cmd_stats(csv, title, units, c);
    } catch (const std::exception& e) {
        std::cerr << "svpipe: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
