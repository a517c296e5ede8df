#include "svpipe/ventricle.hpp"

#include <algorithm>
#include <array>

#include "svpipe/error.hpp"
#include "svpipe/preprocess.hpp"
#include "svpipe/sax_selection.hpp"

namespace svpipe {

namespace {

// Millimetre products first so integral voxel volumes stay exact.
double voxels_to_ml(const LabelVolume& v, std::size_t count) {
    return static_cast<double>(count) * v.pixel_spacing[0] * v.pixel_spacing[1] * v.slice_gap / 1000.0;
}

}  // namespace

Mask segment_image(const nn::Network<float>& model, const ImageF& image) {
    const int size = model.spec().input_size;
    const int classes = model.spec().out_classes;
    const auto prepared = prepare_for_model(image, size);
    nn::Tensor<float> x({1, size, size});
    std::copy(prepared.image.data.begin(), prepared.image.data.end(), x.data.begin());
    const auto y = model.predict(x);
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    Mask out(image.rows, image.cols, 0);
    ImageF best;
    for (int k = 0; k < classes; ++k) {
        ImageF p(size, size);
        std::copy_n(y.data.begin() + static_cast<std::ptrdiff_t>(plane * static_cast<std::size_t>(k)), plane,
                    p.data.begin());
        auto orig = to_original(p, prepared.provenance, Interp::bilinear);
        if (k == 0) {
            best = std::move(orig);
            continue;
        }
        for (std::size_t i = 0; i < orig.data.size(); ++i)
            if (orig.data[i] > best.data[i]) {
                best.data[i] = orig.data[i];
                out.data[i] = static_cast<std::uint8_t>(k);
            }
    }
    return out;
}

LabelVolume segment_stack(const nn::Network<float>& model, const CineStack& stack) {
    LabelVolume v(stack.frame_count(), stack.slice_count(), stack.rows(), stack.cols());
    v.pixel_spacing = stack.pixel_spacing;
    v.slice_gap = stack.slice_gap;
    for (int s = 0; s < v.slices; ++s)
        for (int p = 0; p < v.phases; ++p)
            v.set_plane(p, s, segment_image(model, stack.slices[static_cast<std::size_t>(s)].frames[static_cast<std::size_t>(p)]));
    return v;
}

LabelVolume largest_component_filter(const LabelVolume& vol) {
    LabelVolume out = vol;
    const int S = vol.slices, R = vol.rows, C = vol.cols;
    const std::size_t n = vol.phase_size();
    std::vector<int> comp(n);
    std::vector<std::size_t> todo;
    for (int p = 0; p < vol.phases; ++p) {
        const std::uint8_t* lab = vol.labels.data() + static_cast<std::size_t>(p) * n;
        std::fill(comp.begin(), comp.end(), 0);
        int count = 0, best = 0;
        std::size_t best_size = 0;
        for (std::size_t seed = 0; seed < n; ++seed) {
            if (!lab[seed] || comp[seed]) continue;
            ++count;
            std::size_t size = 0;
            comp[seed] = count;
            todo.assign(1, seed);
            while (!todo.empty()) {
                const std::size_t i = todo.back();
                todo.pop_back();
                ++size;
                const int c = static_cast<int>(i % static_cast<std::size_t>(C));
                const int r = static_cast<int>((i / static_cast<std::size_t>(C)) % static_cast<std::size_t>(R));
                const int s = static_cast<int>(i / (static_cast<std::size_t>(C) * R));
                const std::array<std::array<int, 3>, 6> nb{
                    {{s - 1, r, c}, {s + 1, r, c}, {s, r - 1, c}, {s, r + 1, c}, {s, r, c - 1}, {s, r, c + 1}}};
                for (const auto& q : nb) {
                    if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= S || q[1] >= R || q[2] >= C) continue;
                    const std::size_t j = (static_cast<std::size_t>(q[0]) * R + q[1]) * C + q[2];
                    if (!lab[j] || comp[j]) continue;
                    comp[j] = count;
                    todo.push_back(j);
                }
            }
            if (size > best_size) {
                best_size = size;
                best = count;
            }
        }
        std::uint8_t* dst = out.labels.data() + static_cast<std::size_t>(p) * n;
        for (std::size_t i = 0; i < n; ++i)
            if (comp[i] != best) dst[i] = kBackground;
    }
    return out;
}

std::string to_string(SliceRange r) { return r == SliceRange::all ? "all" : "middle_five"; }

VolumeTimeCurve volume_time_curve(const LabelVolume& vol, SliceRange range) {
    VolumeTimeCurve curve;
    curve.range = range;
    std::vector<int> slices;
    if (range == SliceRange::middle_five && vol.slices >= 5) {
        slices = central_slice_indices(vol.slices, 5);
    } else {
        if (range == SliceRange::middle_five) {
            curve.fallback = true;
            curve.range = SliceRange::all;
            curve.warnings.push_back("middle_five requested with " + std::to_string(vol.slices) +
                                     " slices; using all slices");
        }
        for (int s = 0; s < vol.slices; ++s) slices.push_back(s);
    }
    for (int p = 0; p < vol.phases; ++p) {
        std::size_t count = 0;
        for (int s : slices) {
            const auto* b = vol.labels.data() + vol.index(p, s, 0, 0);
            count += static_cast<std::size_t>(std::count(b, b + vol.slice_size(), kBloodPool));
        }
        curve.volume_ml.push_back(voxels_to_ml(vol, count));
    }
    return curve;
}

double label_volume_ml(const LabelVolume& vol, int phase, std::uint8_t label) {
    if (phase < 0 || phase >= vol.phases) throw ContractViolation("label_volume_ml: phase out of range");
    const auto* b = vol.labels.data() + vol.index(phase, 0, 0, 0);
    return voxels_to_ml(vol, static_cast<std::size_t>(std::count(b, b + vol.phase_size(), label)));
}

PhaseDetection detect_phases(const VolumeTimeCurve& curve) {
    const auto& v = curve.volume_ml;
    if (v.size() < 2) throw ContractViolation("detect_phases: need at least two phases");
    PhaseDetection d;
    d.ed_phase = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    d.es_phase = static_cast<int>(std::min_element(v.begin(), v.end()) - v.begin());
    if (v[static_cast<std::size_t>(d.ed_phase)] == v[static_cast<std::size_t>(d.es_phase)]) {
        d.ed_phase = d.es_phase = 0;
        d.constant = true;
        d.warnings.emplace_back("constant volume-time curve; ED and ES set to phase 0");
    }
    return d;
}

nlohmann::json to_json(const FunctionReport& r) {
    return {{"edv_ml", r.edv_ml},   {"esv_ml", r.esv_ml},       {"sv_ml", r.sv_ml},
            {"ef", r.ef},           {"mass_g", r.mass_g},       {"ed_phase", r.ed_phase},
            {"es_phase", r.es_phase}, {"bsa_m2", r.bsa_m2},     {"edv_i_ml_m2", r.edv_i},
            {"esv_i_ml_m2", r.esv_i}, {"sv_i_ml_m2", r.sv_i},   {"mass_i_g_m2", r.mass_i},
            {"non_physiologic", r.non_physiologic}};
}

FunctionReport function_report_from_json(const nlohmann::json& j) {
    FunctionReport r;
    r.edv_ml = j.at("edv_ml").get<double>();
    r.esv_ml = j.at("esv_ml").get<double>();
    r.sv_ml = j.at("sv_ml").get<double>();
    r.ef = j.at("ef").get<double>();
    r.mass_g = j.at("mass_g").get<double>();
    r.ed_phase = j.at("ed_phase").get<int>();
    r.es_phase = j.at("es_phase").get<int>();
    r.bsa_m2 = j.at("bsa_m2").get<double>();
    r.edv_i = j.at("edv_i_ml_m2").get<double>();
    r.esv_i = j.at("esv_i_ml_m2").get<double>();
    r.sv_i = j.at("sv_i_ml_m2").get<double>();
    r.mass_i = j.at("mass_i_g_m2").get<double>();
    r.non_physiologic = j.at("non_physiologic").get<bool>();
    return r;
}

FunctionReport function_from_volumes(double edv_ml, double esv_ml, double myo_ed_ml, int ed_phase, int es_phase,
                                     double bsa_m2, double density) {
    if (!(bsa_m2 > 0)) throw ContractViolation("body surface area must be positive");
    if (edv_ml <= 0) throw EmptySegmentation("empty segmentation");
    FunctionReport r;
    r.edv_ml = edv_ml;
    r.esv_ml = esv_ml;
    r.sv_ml = edv_ml - esv_ml;
    r.ef = r.sv_ml / edv_ml;
    r.mass_g = myo_ed_ml * density;
    r.ed_phase = ed_phase;
    r.es_phase = es_phase;
    r.bsa_m2 = bsa_m2;
    r.edv_i = edv_ml / bsa_m2;
    r.esv_i = esv_ml / bsa_m2;
    r.sv_i = r.sv_ml / bsa_m2;
    r.mass_i = r.mass_g / bsa_m2;
    r.non_physiologic = esv_ml > edv_ml;
    return r;
}

FunctionReport compute_function_report(const LabelVolume& vol, int ed_phase, int es_phase, double bsa_m2,
                                       double density) {
    return function_from_volumes(label_volume_ml(vol, ed_phase, kBloodPool), label_volume_ml(vol, es_phase, kBloodPool),
                                 label_volume_ml(vol, ed_phase, kMyocardium), ed_phase, es_phase, bsa_m2, density);
}

}  // namespace svpipe
