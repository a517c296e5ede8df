// End-to-end acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "component_oracle.hpp"
#include "dicom_builders.hpp"
#include "gradcheck.hpp"
#include "stats_oracle.hpp"
#include "svpipe/batch.hpp"
#include "svpipe/error.hpp"
#include "svpipe/heart_locator.hpp"
#include "svpipe/ingest.hpp"
#include "svpipe/nn/losses.hpp"
#include "svpipe/phantom.hpp"
#include "svpipe/pipeline.hpp"
#include "svpipe/sax_selection.hpp"
#include "svpipe/stats.hpp"
#include "svpipe/training_data.hpp"
#include "svpipe/ventricle.hpp"

namespace {

namespace fs = std::filesystem;
namespace ph = svpipe::phantom;
namespace tr = svpipe::training;
namespace st = svpipe::stats;
using nlohmann::json;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------- criterion 4

double soft_dice_oracle(const svtest::Tensor& pred, const svtest::Tensor& onehot) {
    const int C = pred.dim(0);
    const std::size_t N = pred.size() / static_cast<std::size_t>(C);
    double total = 0;
    for (int c = 1; c < C; ++c) {
        double inter = 0, sp = 0, sg = 0;
        for (std::size_t i = 0; i < N; ++i) {
            inter += pred[c * N + i] * onehot[c * N + i];
            sp += pred[c * N + i];
            sg += onehot[c * N + i];
        }
        total += 1.0 - (2 * inter + 2 * svpipe::nn::kOverlapEps) / (sp + sg + 2 * svpipe::nn::kOverlapEps);
    }
    return total / (C - 1);
}

Outcome gradients() {
    const auto suite = svtest::run_gradient_suite(20, 4242);
    double worst = 0;
    std::string worst_name;
    std::set<std::string> losses;
    int min_trials = 1 << 30;
    for (const auto& e : suite) {
        if (e.worst > worst) {
            worst = e.worst;
            worst_name = e.name;
        }
        if (e.name.find("loss") != std::string::npos) losses.insert(e.name);
        min_trials = std::min(min_trials, e.trials);
    }
    std::mt19937_64 rng(77);
    double dice_gap = 0;
    for (int t = 0; t < 100; ++t) {
        const int C = 2 + t % 3;
        const auto pred = svtest::random_probabilities(rng, C, 5, 6);
        const auto onehot = svpipe::nn::one_hot(svtest::random_labels(rng, C, 5, 6), C);
        dice_gap = std::max(dice_gap,
                            std::abs(svpipe::nn::tversky_loss(pred, onehot, 0.5, 0.5).loss - soft_dice_oracle(pred, onehot)));
    }
    const bool pass = worst < 1e-4 && min_trials >= 20 && losses.size() == 3 && dice_gap <= 1e-9;
    return {pass, std::to_string(suite.size()) + " layer/loss checks x " + std::to_string(min_trials) +
                      " trials, worst rel err " + fmt("%.2e", worst) + " (" + worst_name +
                      "); tversky(0.5,0.5) vs soft dice max gap " + fmt("%.1e", dice_gap) + " on 100 inputs"};
}

// ---------------------------------------------------------------- criterion 5

Outcome oracles() {
    std::mt19937_64 rng(5151);
    int lcc_bad = 0, island_bad = 0;
    double identity_gap = 0;
    std::uniform_int_distribution<int> phases(1, 2), dim(1, 7), dim2(1, 14), count(1, 6), coin(0, 1);
    for (int t = 0; t < 1000; ++t) {
        const auto v = svtest::random_label_volume(rng, phases(rng), dim(rng), dim(rng), dim(rng));
        if (!(svpipe::largest_component_filter(v) == svtest::oracle_largest_component(v))) ++lcc_bad;
    }
    for (int t = 0; t < 1000; ++t) {
        const int rows = dim2(rng), cols = dim2(rng), n = count(rng);
        const bool shared = coin(rng) == 1;
        std::vector<svpipe::Mask> masks;
        for (int s = 0; s < n; ++s) {
            auto m = svtest::random_mask(rng, rows, cols);
            if (shared) m.at(rows / 2, cols / 2) = 1;
            masks.push_back(std::move(m));
        }
        if (!(svpipe::remove_islands(masks) == svtest::oracle_remove_islands(masks))) ++island_bad;
    }
    for (int t = 0; t < 1000; ++t) {
        const int rows = dim2(rng), cols = dim2(rng);
        const auto a = svtest::random_mask(rng, rows, cols), b = svtest::random_mask(rng, rows, cols);
        const double d = st::dice(a, b), j = st::iou(a, b);
        identity_gap = std::max(identity_gap, std::abs(d - 2 * j / (1 + j)));
    }
    const bool pass = lcc_bad == 0 && island_bad == 0 && identity_gap <= 1e-12;
    return {pass, "3D largest-component mismatches " + std::to_string(lcc_bad) + "/1000, 2D island mismatches " +
                      std::to_string(island_bad) + "/1000, max |dice-2iou/(1+iou)| " + fmt("%.1e", identity_gap)};
}

// ---------------------------------------------------------------- criterion 7

std::vector<st::Pair> pairs_of(const json& c) {
    std::vector<st::Pair> p;
    const auto x = c.at("x").get<std::vector<double>>(), y = c.at("y").get<std::vector<double>>();
    for (std::size_t i = 0; i < x.size(); ++i) p.emplace_back(x[i], y[i]);
    return p;
}

template <class F>
bool throws_stats_error(F f) {
    try {
        f();
    } catch (const svpipe::StatsError&) {
        return true;
    }
    return false;
}

Outcome statistics() {
    const auto fx = svtest::load_stats_oracle();
    int cases = 0, bad = 0;
    auto check = [&](double got, double want) {
        if (!svtest::close_to(got, want, 1e-8)) ++bad;
    };
    for (const auto& c : fx.at("paired")) {
        ++cases;
        const auto p = pairs_of(c);
        const auto ba = st::bland_altman(p);
        check(ba.bias, c.at("bias"));
        check(ba.sd, c.at("sd"));
        check(ba.loa_low, c.at("loa_low"));
        check(ba.loa_high, c.at("loa_high"));
        const auto t = st::paired_t_test(p);
        check(t.t_stat, c.at("t_stat"));
        check(t.p_value, c.at("p_value"));
        if (!c.at("pearson_r").is_null()) check(st::pearson_r(p), c.at("pearson_r"));
    }
    for (const auto& c : fx.at("chi_squared")) {
        ++cases;
        const auto r = st::chi_squared(c.at("table").get<std::vector<std::vector<double>>>());
        check(r.chi2, c.at("chi2"));
        check(r.p_value, c.at("p_value"));
        if (r.dof != c.at("dof").get<int>()) ++bad;
    }
    for (const auto& c : fx.at("incomplete_beta")) ++cases, check(st::incomplete_beta(c.at("a"), c.at("b"), c.at("x")), c.at("value"));
    for (const auto& c : fx.at("gamma_p")) ++cases, check(st::gamma_p(c.at("a"), c.at("x")), c.at("value"));
    for (const auto& c : fx.at("gamma_q")) ++cases, check(st::gamma_q(c.at("a"), c.at("x")), c.at("value"));
    for (const auto& c : fx.at("student_t")) ++cases, check(st::student_t_two_sided_p(c.at("t"), c.at("dof")), c.at("value"));

    // Identity and degenerate examples.
    int degenerate_bad = 0;
    auto expect = [&](bool ok) { degenerate_bad += ok ? 0 : 1; };
    const auto same = st::bland_altman({{3, 3}, {5, 5}, {7, 7}});
    expect(same.bias == 0 && same.loa_low == 0 && same.loa_high == 0);
    const auto pm = st::bland_altman({{1, 0}, {0, 1}});
    expect(pm.bias == 0 && std::abs(pm.sd - std::sqrt(2.0)) < 1e-15 && std::abs(pm.loa_high - 2.772) < 5e-4 &&
           std::abs(pm.loa_low + 2.772) < 5e-4);
    const auto off = st::bland_altman({{10, 5}, {20, 15}, {8, 3}});
    expect(off.bias == 5 && off.loa_low == 5 && off.loa_high == 5);
    const auto sym = st::paired_t_test({{1, 0}, {0, 1}, {2, 0}, {0, 2}});
    expect(sym.t_stat == 0 && sym.p_value == 1);
    expect(throws_stats_error([] { st::paired_t_test({{2, 1}, {3, 2}}); }));
    std::vector<st::Pair> up, down;
    for (int i = 0; i < 10; ++i) up.emplace_back(i, 2.0 * i + 1), down.emplace_back(i, -i);
    expect(std::abs(st::pearson_r(up) - 1) < 1e-15 && std::abs(st::pearson_r(down) + 1) < 1e-15);
    const auto indep = st::chi_squared({{2, 4, 6}, {3, 6, 9}});
    expect(std::abs(indep.chi2) < 1e-12 && std::abs(indep.p_value - 1) < 1e-12);
    expect(std::abs(st::chi_squared({{10, 20}, {20, 10}}).chi2 - 20.0 / 3.0) < 1e-12);
    expect(throws_stats_error([] { st::chi_squared({{1, 2, 3}}); }));
    svpipe::Mask a(10, 20), b(10, 20);
    for (int i = 0; i < 100; ++i) a.data[static_cast<std::size_t>(i)] = 1;
    for (int i = 50; i < 150; ++i) b.data[static_cast<std::size_t>(i)] = 1;
    expect(st::dice(a, a) == 1 && st::dice(a, b) == 0.5 && std::abs(st::iou(a, b) - 1.0 / 3.0) < 1e-15);

    const bool pass = cases >= 20 && bad == 0 && degenerate_bad == 0;
    return {pass, std::to_string(cases) + " oracle fixture cases, " + std::to_string(bad) +
                      " values off by more than 1e-8, " + std::to_string(degenerate_bad) +
                      " identity/degenerate examples failed"};
}

// ---------------------------------------------------------------- criterion 8

std::vector<std::string> fingerprint(const std::vector<svpipe::CineStack>& stacks) {
    std::vector<std::string> out;
    for (const auto& s : stacks) {
        std::string f = s.stack_id;
        for (const auto& sl : s.slices) f += "|" + sl.series_uid + ":" + sl.file_ids.front();
        out.push_back(f);
    }
    return out;
}

bool declared_match(const ph::DeclaredStack& want, const svpipe::CineStack& got) {
    if (static_cast<int>(want.positions.size()) != got.slice_count() || want.frames != got.frame_count()) return false;
    for (std::size_t i = 0; i < want.positions.size(); ++i) {
        if (want.series_uids[i] != got.slices[i].series_uid) return false;
        for (std::size_t k = 0; k < 3; ++k)
            if (std::abs(want.positions[i][k] - got.slices[i].position[k]) > 0.01) return false;
    }
    return true;
}

Outcome grouping(const fs::path& work) {
    std::vector<std::string> failures;
    std::vector<svpipe::DicomImageMeta> images;
    for (const auto& [uid, frames] : {std::pair{"nine", 9}, std::pair{"ten", 10}})
        for (int f = 0; f < frames; ++f) images.push_back(svtest::make_meta(uid, {0, 0, 0}, 100 + f, 40.0 * f));
    const auto cine = svpipe::collect_cine_series(images);
    if (cine.size() != 1 || cine[0].series_uid != "ten") failures.push_back("frame-count boundary");
    if (!svpipe::group_into_stacks({svtest::axial_series("a", 5, 8)}).empty() ||
        svpipe::group_into_stacks({svtest::axial_series("a", 6, 8)}).size() != 1)
        failures.push_back("slice-count boundary");

    std::vector<svpipe::CineSeries> mixed{svtest::axial_series("a", 8, 8), svtest::axial_series("b", 7, 8, 10, 100)};
    for (int i = 0; i < 6; ++i) {
        svpipe::CineSeries one{"single-" + std::to_string(i), {}};
        one.slices.push_back(svtest::make_cine_slice(one.series_uid, {8.0 * i, 5, 0}, 10, {0, 1, 0, 0, 0, 1}));
        mixed.push_back(one);
    }
    const auto reference = fingerprint(svpipe::group_into_stacks(mixed));
    std::mt19937_64 rng(88);
    int perm_bad = 0;
    for (int t = 0; t < 50; ++t) {
        auto shuffled = mixed;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        for (auto& s : shuffled) std::shuffle(s.slices.begin(), s.slices.end(), rng);
        if (fingerprint(svpipe::group_into_stacks(shuffled)) != reference) ++perm_bad;
    }
    if (reference.size() != 3 || perm_bad) failures.push_back("permutation invariance");

    int roundtrip_ok = 0;
    for (int t = 0; t < 25; ++t) {
        ph::PhantomSpec base;
        base.image_size = 64;
        base.pixel_spacing_mm = 6.0;
        base.distractor_count = t % 4;
        base.sax_series_per_slice = t % 2 == 0;
        base.trigger_times = t % 3 != 0;
        base.localizer = t % 5 != 0;
        const auto spec = ph::randomized_spec(8000 + static_cast<std::uint64_t>(t), base);
        const auto dir = work / "grouping" / std::to_string(t);
        fs::remove_all(dir);
        const auto truth = ph::generate_phantom_exam(spec, dir);
        auto parsed = svpipe::parse_exam_directory(dir);
        const auto stacks = svpipe::group_into_stacks(svpipe::collect_cine_series(std::move(parsed.images)));
        bool ok = stacks.size() == truth.partition.size();
        for (const auto& want : truth.partition)
            ok = ok && std::count_if(stacks.begin(), stacks.end(),
                                     [&](const svpipe::CineStack& s) { return declared_match(want, s); }) == 1;
        roundtrip_ok += ok ? 1 : 0;
        fs::remove_all(dir);
    }
    if (roundtrip_ok != 25) failures.push_back("phantom partition round trip");
    std::string detail = "9/10 frames, 5/6 slices, 50 permutations (" + std::to_string(perm_bad) +
                         " differ), phantom partitions recovered " + std::to_string(roundtrip_ok) + "/25";
    for (const auto& f : failures) detail += "; failed: " + f;
    return {failures.empty(), detail};
}

// ---------------------------------------------------------------- criteria 1, 6, 9

struct HeldOut {
    std::vector<json> metrics;  // per exam, in batch order
    std::vector<std::string> eval_errors;
};

HeldOut evaluate_batch(const svpipe::BatchResult& batch, const fs::path& exams_root) {
    HeldOut h;
    for (std::size_t i = 0; i < batch.results.size(); ++i) {
        const auto& r = batch.results[i];
        try {
            const auto truth = ph::load_truth(exams_root / batch.exam_dirs[i].filename());
            h.metrics.push_back(svpipe::evaluate_exam(r.report, r.labels, truth));
        } catch (const std::exception& e) {
            h.metrics.push_back(json{{"status", r.report.value("status", "error")}, {"eval_error", e.what()}});
            h.eval_errors.push_back(batch.exam_dirs[i].filename().string() + ": " + e.what());
        }
    }
    return h;
}

// Exams without a metric count as 0 so failures lower the median.
double median_metric(const std::vector<json>& metrics, const char* key) {
    std::vector<double> v;
    for (const auto& m : metrics) v.push_back(m.contains(key) ? m.at(key).get<double>() : 0.0);
    return st::median(v);
}

struct EndToEnd {
    Outcome c1, c6_phantom, c9;
    svpipe::ModelBundle models;
};

EndToEnd train_and_evaluate(const fs::path& work) {
    EndToEnd out;
    const auto t0 = Clock::now();
    const auto specs = tr::dataset_specs(1, 40);
    std::ostringstream train_log;
    for (auto kind : {tr::ModelKind::classifier, tr::ModelKind::locator, tr::ModelKind::segmenter}) {
        const auto tk = Clock::now();
        auto tm = tr::train_model(kind, specs, tr::default_recipe(kind));
        train_log << tr::to_string(kind) << " " << fmt("%.0fs", since(tk)) << " ";
        std::printf("  trained %s on %zu samples in %.0f s (final val loss %.4f)\n", tr::to_string(kind).c_str(),
                    tm.samples, since(tk), tm.result.val_loss.empty() ? -1.0 : tm.result.val_loss.back());
        std::fflush(stdout);
        if (kind == tr::ModelKind::classifier) out.models.classifier = std::move(tm.network);
        else if (kind == tr::ModelKind::locator) out.models.locator = std::move(tm.network);
        else out.models.segmenter = std::move(tm.network);
    }
    const double train_s = since(t0);
    svpipe::save_bundle(out.models, work / "weights");
    out.models = svpipe::load_bundle(work / "weights");

    const auto eval_t = Clock::now();
    const auto exams = work / "heldout";
    fs::remove_all(exams);
    for (int i = 0; i < 10; ++i) {
        const auto spec = ph::randomized_spec(1001 + static_cast<std::uint64_t>(i));
        ph::generate_phantom_exam(spec, exams / spec.resolved_exam_id());
    }
    const svpipe::PipelineConfig config;
    svpipe::BatchOptions opt;
    opt.out_dir = work / "run1";
    fs::remove_all(opt.out_dir);
    const auto run1 = svpipe::run_batch(exams, out.models, config, opt);
    const auto held = evaluate_batch(run1, exams);
    const double eval_s = since(eval_t);
    const double total_s = train_s + eval_s;
    std::printf("  held-out batch: %.1f s wall; train %.0f s + eval %.0f s\n", run1.wall_seconds, train_s, eval_s);
    std::fflush(stdout);

    json per_exam = json::array();
    for (const auto& m : held.metrics) per_exam.push_back(m);
    std::ofstream(work / "heldout_metrics.json") << per_exam.dump(2) << "\n";
    std::ofstream(work / "heldout_summary.tsv") << svpipe::summary_table(run1.summary);

    const double be = median_metric(held.metrics, "dice_blood_ed"), bs = median_metric(held.metrics, "dice_blood_es");
    const double me = median_metric(held.metrics, "dice_myo_ed"), ms = median_metric(held.metrics, "dice_myo_es");
    const bool c1 = be >= 0.85 && bs >= 0.85 && me >= 0.70 && ms >= 0.70 && total_s <= 1200;
    out.c1 = {c1, "median Dice blood ED " + fmt("%.3f", be) + " ES " + fmt("%.3f", bs) + ", myocardium ED " +
                      fmt("%.3f", me) + " ES " + fmt("%.3f", ms) + " over 10 held-out phantoms; train+eval " +
                      fmt("%.0f", total_s) + " s of 1200 (" + train_log.str() + "eval " + fmt("%.0fs", eval_s) + ")"};
    for (const auto& e : held.eval_errors) out.c1.detail += "; " + e;

    int within = 0;
    double worst_vol = 0, worst_ef = 0;
    for (const auto& m : held.metrics) {
        if (!m.contains("delta")) continue;
        const auto& d = m.at("delta");
        const double ev = std::max(std::abs(d.at("edv_rel").get<double>()), std::abs(d.at("esv_rel").get<double>()));
        const double ef = std::abs(d.at("ef").get<double>());
        worst_vol = std::max(worst_vol, ev);
        worst_ef = std::max(worst_ef, ef);
        within += (ev <= 0.05 && ef <= 0.05) ? 1 : 0;
    }
    out.c6_phantom = {within == 10, "end-to-end phantom volumes within 5% and EF within 0.05 on " +
                                        std::to_string(within) + "/10 exams (worst volume error " +
                                        fmt("%.2f%%", 100 * worst_vol) + ", worst EF error " + fmt("%.3f", worst_ef) +
                                        ")"};

    opt.out_dir = work / "run2";
    fs::remove_all(opt.out_dir);
    const auto run2 = svpipe::run_batch(exams, out.models, config, opt);
    int identical = 0;
    for (std::size_t i = 0; i < run1.results.size(); ++i) {
        const auto name = run1.exam_dirs[i].filename();
        const bool same_report = svpipe::strip_timings(run1.results[i].report).dump() ==
                                 svpipe::strip_timings(run2.results[i].report).dump();
        const auto l1 = work / "run1" / name / "labels.svlv", l2 = work / "run2" / name / "labels.svlv";
        const bool same_labels = fs::exists(l1) == fs::exists(l2) && (!fs::exists(l1) || slurp(l1) == slurp(l2));
        identical += (same_report && same_labels) ? 1 : 0;
    }
    int ok = 0;
    for (const auto& r : run1.results) ok += r.status == svpipe::ExamStatus::ok ? 1 : 0;
    const bool c9 = run1.results.size() == 10 && run1.wall_seconds <= 300 && run2.wall_seconds <= 300 && identical == 10;
    out.c9 = {c9, "10-exam batch " + fmt("%.1f", run1.wall_seconds) + " s and " + fmt("%.1f", run2.wall_seconds) +
                      " s (limit 300), " + std::to_string(ok) + "/10 ok, " + std::to_string(identical) +
                      "/10 reports and label files identical excluding timings"};
    return out;
}

Outcome arithmetic(const Outcome& phantom_part) {
    std::vector<std::string> failures;
    const auto r = svpipe::function_from_volumes(150, 60, 100, 0, 8, 1.5);
    if (!(r.sv_ml == 90.0 && r.ef == 0.6)) failures.push_back("SV/EF");
    if (!(r.mass_g == 105.0 && svpipe::kDefaultMyocardialDensity == 1.05)) failures.push_back("mass");
    svpipe::LabelVolume v(1, 10, 10, 10);
    std::fill(v.labels.begin(), v.labels.end(), svpipe::kBloodPool);
    v.pixel_spacing = {1.5, 1.5};
    v.slice_gap = 8.0;
    const double ml = svpipe::label_volume_ml(v, 0, svpipe::kBloodPool);
    if (ml != 18.0) failures.push_back("voxel volume");
    std::string detail = "SV " + fmt("%g", r.sv_ml) + " EF " + fmt("%g", r.ef) + ", 1000 voxels " + fmt("%g", ml) +
                         " mL, 100 mL myocardium " + fmt("%g", r.mass_g) + " g; " + phantom_part.detail;
    for (const auto& f : failures) detail += "; failed: " + f;
    return {failures.empty() && phantom_part.pass, detail};
}

// ---------------------------------------------------------------- criteria 2, 3

struct SelectionAndLocation {
    Outcome c2, c3;
};

SelectionAndLocation selection_and_location(const fs::path& work, const svpipe::ModelBundle& models) {
    int exams_ok = 0, slices_ok = 0, slices = 0, contained = 0;
    std::vector<double> ious;
    std::vector<std::string> misses;
    const auto dir = work / "selection_exam";
    for (int i = 0; i < 50; ++i) {
        ph::PhantomSpec base;
        base.distractor_count = 2;
        const auto spec = ph::randomized_spec(2001 + static_cast<std::uint64_t>(i), base);
        fs::remove_all(dir);
        const auto truth = ph::generate_phantom_exam(spec, dir);
        auto parsed = svpipe::parse_exam_directory(dir);
        const auto stacks = svpipe::group_into_stacks(svpipe::collect_cine_series(std::move(parsed.images)));
        const std::set<std::string> sax_uids(truth.sax_series_uids.begin(), truth.sax_series_uids.end());
        auto is_sax = [&](const svpipe::CineStack& s) {
            return std::all_of(s.source_series.begin(), s.source_series.end(),
                               [&](const std::string& u) { return sax_uids.count(u) > 0; });
        };
        const auto sel = svpipe::select_sax_stack(stacks, *models.classifier);
        std::vector<std::pair<double, bool>> probs;
        for (const auto& score : sel.scores) {
            const auto it = std::find_if(stacks.begin(), stacks.end(),
                                         [&](const svpipe::CineStack& s) { return s.stack_id == score.stack_id; });
            for (double p : score.slice_probs) probs.emplace_back(p, is_sax(*it));
        }
        const auto pm = svpipe::per_slice_metrics(probs);
        slices += pm.tp + pm.fp + pm.fn + pm.tn;
        slices_ok += pm.tp + pm.tn;
        const auto& chosen = stacks[sel.chosen_index];
        const bool correct = stacks.size() == 3 && is_sax(chosen);
        exams_ok += correct ? 1 : 0;
        if (!correct) misses.push_back(spec.resolved_exam_id());

        const auto sax_it = std::find_if(stacks.begin(), stacks.end(), is_sax);
        const auto& sax = sax_it != stacks.end() ? *sax_it : chosen;
        const auto masks = svpipe::remove_islands(svpipe::predict_heart_masks(*models.locator, sax, 0.5));
        try {
            const auto box = svpipe::compute_bounding_box(masks, 1.5);
            const auto truth_box = tr::truth_box(truth);
            ious.push_back(svpipe::box_iou(box, truth_box));
            bool inside = true;
            for (const auto& e : truth.heart_extent)
                if (e[0] >= 0) inside = inside && box.contains(e[0], e[1]) && box.contains(e[2], e[3]);
            contained += inside ? 1 : 0;
        } catch (const svpipe::CropFailure&) {
            ious.push_back(0.0);
        }
    }
    fs::remove_all(dir);
    const double acc = slices ? static_cast<double>(slices_ok) / slices : 0.0;
    SelectionAndLocation out;
    out.c2 = {exams_ok == 50 && acc >= 0.95, "SAX stack chosen in " + std::to_string(exams_ok) +
                                                 "/50 exams, per-slice accuracy " + fmt("%.4f", acc) + " over " +
                                                 std::to_string(slices) + " central slices"};
    for (const auto& m : misses) out.c2.detail += "; missed " + m;
    const double med = st::median(ious);
    out.c3 = {contained >= 49 && med >= 0.85, "box contains full heart extent in " + std::to_string(contained) +
                                                  "/50 exams, median box IoU " + fmt("%.3f", med)};
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string work_dir = (fs::temp_directory_path() / "svpipe_acceptance").string();
    std::vector<int> only;
    app.add_option("--work-dir", work_dir, "scratch directory for generated exams and weights");
    app.add_option("--only", only, "run only these criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    const fs::path work(work_dir);
    fs::create_directories(work);
    auto wanted = [&](std::initializer_list<int> ids) {
        if (only.empty()) return true;
        for (int id : ids)
            if (std::find(only.begin(), only.end(), id) != only.end()) return true;
        return false;
    };

    std::map<int, Outcome> results;
    auto run = [&](int id, const std::function<Outcome()>& f) {
        const auto t = Clock::now();
        try {
            results[id] = f();
        } catch (const std::exception& e) {
            results[id] = {false, std::string("exception: ") + e.what()};
        }
        std::printf("criterion %d: %s - %s [%.0f s]\n", id, results[id].pass ? "PASS" : "FAIL",
                    results[id].detail.c_str(), since(t));
        std::fflush(stdout);
    };

    if (wanted({4})) run(4, gradients);
    if (wanted({5})) run(5, oracles);
    if (wanted({7})) run(7, statistics);
    if (wanted({8})) run(8, [&] { return grouping(work); });

    if (wanted({1, 2, 3, 6, 9})) {
        EndToEnd e2e;
        std::string failure;
        try {
            e2e = train_and_evaluate(work);
        } catch (const std::exception& ex) {
            failure = std::string("exception: ") + ex.what();
        }
        auto from_e2e = [&](const Outcome& o) { return failure.empty() ? o : Outcome{false, failure}; };
        if (wanted({1})) run(1, [&] { return from_e2e(e2e.c1); });
        if (wanted({6})) run(6, [&] { return arithmetic(from_e2e(e2e.c6_phantom)); });
        if (wanted({9})) run(9, [&] { return from_e2e(e2e.c9); });
        if (wanted({2, 3})) {
            SelectionAndLocation sl;
            if (failure.empty()) {
                try {
                    sl = selection_and_location(work, e2e.models);
                } catch (const std::exception& ex) {
                    failure = std::string("exception: ") + ex.what();
                }
            }
            if (wanted({2})) run(2, [&] { return from_e2e(sl.c2); });
            if (wanted({3})) run(3, [&] { return from_e2e(sl.c3); });
        }
    } else if (wanted({6})) {
        run(6, [] { return arithmetic({false, "phantom end-to-end part not run"}); });
    }

    int passed = 0;
    for (const auto& [id, o] : results) passed += o.pass ? 1 : 0;
    std::printf("acceptance: %d/%zu criteria passed\n", passed, results.size());
    return passed == static_cast<int>(results.size()) ? 0 : 1;
}
