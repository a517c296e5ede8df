#include "svpipe/training_data.hpp"

#include <algorithm>
#include <chrono>
#include <random>

#include "svpipe/error.hpp"
#include "svpipe/sax_selection.hpp"

namespace svpipe::training {

namespace ph = phantom;

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::classifier: return "classifier";
        case ModelKind::locator: return "locator";
        case ModelKind::segmenter: return "segmenter";
    }
    return "unknown";
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "classifier") return ModelKind::classifier;
    if (s == "locator") return ModelKind::locator;
    if (s == "segmenter") return ModelKind::segmenter;
    throw ContractViolation("unknown model kind '" + s + "' (expected classifier, locator or segmenter)");
}

nn::Tensor<float> to_input(const ImageTensor& prepared) {
    const auto& img = prepared.image;
    nn::Tensor<float> x({1, img.rows, img.cols});
    std::copy(img.data.begin(), img.data.end(), x.data.begin());
    return x;
}

nn::Tensor<float> labels_to_model(const Mask& labels, const Provenance& p, int target) {
    Mask padded(p.padded_side, p.padded_side, 0);
    for (int r = 0; r < labels.rows; ++r)
        for (int c = 0; c < labels.cols; ++c) padded.at(r + p.pad_top, c + p.pad_left) = labels.at(r, c);
    const Mask resized = resample(padded, target, target, Interp::nearest);
    nn::Tensor<float> t({target, target});
    for (std::size_t i = 0; i < resized.data.size(); ++i) t[i] = static_cast<float>(resized.data[i]);
    return t;
}

namespace {

struct PlaneRef {
    std::size_t series = 0;
    std::size_t plane = 0;
};

// Slices of each declared stack in stack order, as (series, plane) pairs.
std::vector<std::vector<PlaneRef>> stack_planes(const ph::ExamPlan& plan, ph::SeriesRole role) {
    std::vector<std::vector<PlaneRef>> out;
    std::vector<PlaneRef> sax;
    for (std::size_t si = 0; si < plan.series.size(); ++si) {
        const auto& s = plan.series[si];
        if (s.role != role) continue;
        if (role == ph::SeriesRole::sax) {
            for (std::size_t p = 0; p < s.planes.size(); ++p) sax.push_back({si, p});
        } else {
            std::vector<PlaneRef> st;
            for (std::size_t p = 0; p < s.planes.size(); ++p) st.push_back({si, p});
            out.push_back(std::move(st));
        }
    }
    if (role == ph::SeriesRole::sax) out.push_back(std::move(sax));
    return out;
}

}  // namespace

std::vector<nn::Sample<float>> classifier_samples(const ph::PhantomSpec& spec, int input_size, int frames) {
    if (frames < 1) throw ContractViolation("classifier frames must be >= 1");
    const auto plan = ph::plan_exam(spec);
    const ph::Anatomy anatomy(spec);
    std::vector<nn::Sample<float>> out;
    for (auto role : {ph::SeriesRole::sax, ph::SeriesRole::distractor}) {
        for (const auto& stack : stack_planes(plan, role)) {
            if (static_cast<int>(stack.size()) < kMinStackSlices) continue;
            for (int i : central_slice_indices(static_cast<int>(stack.size()))) {
                const auto& ref = stack[static_cast<std::size_t>(i)];
                for (int f = 0; f < frames; ++f) {
                    const int phase = f * spec.phases / frames;
                    const auto img = ph::render_image(anatomy, plan, ref.series, ref.plane, phase);
                    out.push_back({to_input(prepare_for_model(img, input_size)),
                                   nn::Tensor<float>({1}, role == ph::SeriesRole::sax ? 1.0f : 0.0f)});
                }
            }
        }
    }
    return out;
}

std::vector<nn::Sample<float>> locator_samples(const ph::PhantomSpec& spec, int input_size) {
    const auto plan = ph::plan_exam(spec);
    const ph::Anatomy anatomy(spec);
    std::vector<nn::Sample<float>> out;
    const auto sax = stack_planes(plan, ph::SeriesRole::sax).front();
    for (const auto& ref : sax) {
        const auto img = ph::render_image(anatomy, plan, ref.series, ref.plane, 0);
        Mask heart = ph::render_labels(anatomy, plan.series[ref.series].planes[ref.plane], 0);
        for (auto& v : heart.data) v = v != kBackground ? 1 : 0;
        const auto prepared = prepare_for_model(img, input_size);
        out.push_back({to_input(prepared), labels_to_model(heart, prepared.provenance, input_size)});
    }
    return out;
}

BoundingBox truth_box(const ph::PhantomTruth& truth, const CropJitter& jitter, std::uint64_t seed) {
    std::vector<Mask> first;
    for (int s = 0; s < truth.labels.slices; ++s) first.push_back(truth.labels.plane(0, s));
    const auto extent = union_extent(first);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double expansion = jitter.min_expansion + (jitter.max_expansion - jitter.min_expansion) * u(rng);
    BoundingBox b = expand_extent(extent, truth.labels.rows, truth.labels.cols, expansion);
    if (jitter.max_shift > 0) {
        const int max_shift = static_cast<int>(jitter.max_shift * b.side);
        std::uniform_int_distribution<int> shift(-max_shift, max_shift);
        b.row0 = std::clamp(b.row0 + shift(rng), 0, truth.labels.rows - b.side);
        b.col0 = std::clamp(b.col0 + shift(rng), 0, truth.labels.cols - b.side);
    }
    return b;
}

std::vector<nn::Sample<float>> segmenter_samples(const ph::PhantomSpec& spec, int input_size, int extra_phases,
                                                 const CropJitter& jitter, std::uint64_t seed) {
    const auto plan = ph::plan_exam(spec);
    const ph::Anatomy anatomy(spec);
    const auto truth = ph::make_truth(plan, anatomy);
    const auto box = truth_box(truth, jitter, seed);
    const auto sax = stack_planes(plan, ph::SeriesRole::sax).front();
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_int_distribution<int> phase(0, spec.phases - 1);
    std::vector<nn::Sample<float>> out;
    for (std::size_t s = 0; s < sax.size(); ++s) {
        std::vector<int> phases{truth.volumes.ed_phase, truth.volumes.es_phase};
        for (int k = 0; k < extra_phases; ++k) phases.push_back(phase(rng));
        for (int p : phases) {
            const auto img = ph::render_image(anatomy, plan, sax[s].series, sax[s].plane, p);
            const Mask labels = ph::render_labels(anatomy, plan.series[sax[s].series].planes[sax[s].plane], p);
            const auto prepared = prepare_for_model(crop_image(img, box), input_size);
            out.push_back({to_input(prepared), labels_to_model(crop_image(labels, box), prepared.provenance, input_size)});
        }
    }
    return out;
}

Recipe default_recipe(ModelKind kind) {
    Recipe r;
    switch (kind) {
        case ModelKind::classifier:
            r.model = {nn::Architecture::sax_classifier, 1, 1, 16, 5, false, 128};
            r.loss.kind = nn::LossKind::bce;
            r.train.max_epochs = 12;
            r.train.patience = 12;
            r.train.augment = true;
            r.frames = 4;
            break;
        case ModelKind::locator:
            r.model = {nn::Architecture::unet3plus, 1, 2, 4, 5, true, 256};
            r.loss.kind = nn::LossKind::soft_iou;
            r.loss.deep_supervision_weights = {0.4, 0.2, 0.2, 0.1, 0.1};
            r.train.max_epochs = 2;
            r.train.batch_size = 4;
            r.train.augment = true;
            break;
        case ModelKind::segmenter:
            r.model = {nn::Architecture::unet3plus, 1, 3, 8, 5, false, 128};
            r.loss.kind = nn::LossKind::tversky;
            r.train.max_epochs = 2;
            r.train.batch_size = 4;
            r.train.augment = true;
            r.extra_phases = 0;
            r.jitter = {1.3, 1.8, 0.08};
            break;
    }
    return r;
}

nlohmann::json recipe_to_json(const Recipe& r) {
    return {{"model", r.model},
            {"loss",
             {{"kind", nn::to_string(r.loss.kind)},
              {"tversky_alpha", r.loss.tversky_alpha},
              {"tversky_beta", r.loss.tversky_beta},
              {"deep_supervision_weights", r.loss.deep_supervision_weights}}},
            {"train",
             {{"learning_rate", r.train.learning_rate},
              {"batch_size", r.train.batch_size},
              {"max_epochs", r.train.max_epochs},
              {"patience", r.train.patience},
              {"validation_fraction", r.train.validation_fraction},
              {"seed", r.train.seed},
              {"augment", r.train.augment},
              {"max_steps", r.train.max_steps}}},
            {"frames", r.frames},
            {"extra_phases", r.extra_phases},
            {"jitter",
             {{"min_expansion", r.jitter.min_expansion},
              {"max_expansion", r.jitter.max_expansion},
              {"max_shift", r.jitter.max_shift}}}};
}

namespace {

template <class T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

Recipe recipe_from_json(ModelKind kind, const nlohmann::json& j) {
    Recipe r = default_recipe(kind);
    try {
        if (j.contains("model")) {
            auto m = nlohmann::json(r.model);
            m.update(j.at("model"));
            r.model = m.get<nn::ModelSpec>();
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            if (l.contains("kind")) r.loss.kind = nn::loss_kind_from_string(l.at("kind").get<std::string>());
            maybe(l, "tversky_alpha", r.loss.tversky_alpha);
            maybe(l, "tversky_beta", r.loss.tversky_beta);
            maybe(l, "deep_supervision_weights", r.loss.deep_supervision_weights);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            maybe(t, "learning_rate", r.train.learning_rate);
            maybe(t, "batch_size", r.train.batch_size);
            maybe(t, "max_epochs", r.train.max_epochs);
            maybe(t, "patience", r.train.patience);
            maybe(t, "validation_fraction", r.train.validation_fraction);
            maybe(t, "seed", r.train.seed);
            maybe(t, "augment", r.train.augment);
            maybe(t, "max_steps", r.train.max_steps);
        }
        maybe(j, "frames", r.frames);
        maybe(j, "extra_phases", r.extra_phases);
        if (j.contains("jitter")) {
            const auto& t = j.at("jitter");
            maybe(t, "min_expansion", r.jitter.min_expansion);
            maybe(t, "max_expansion", r.jitter.max_expansion);
            maybe(t, "max_shift", r.jitter.max_shift);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ContractViolation(std::string("training recipe: ") + e.what());
    }
    r.model.validate();
    r.loss.validate();
    return r;
}

std::vector<ph::PhantomSpec> dataset_specs(std::uint64_t first_seed, int count, const ph::PhantomSpec& base) {
    if (count < 1) throw ContractViolation("dataset needs at least one phantom");
    std::vector<ph::PhantomSpec> out;
    for (int i = 0; i < count; ++i) out.push_back(ph::randomized_spec(first_seed + static_cast<std::uint64_t>(i), base));
    return out;
}

std::vector<ph::PhantomSpec> dataset_from_json(const nlohmann::json& j) {
    try {
        if (j.contains("specs")) {
            std::vector<ph::PhantomSpec> out;
            for (const auto& s : j.at("specs")) out.push_back(s.get<ph::PhantomSpec>());
            if (out.empty()) throw ContractViolation("dataset needs at least one phantom");
            for (const auto& s : out) s.validate();
            return out;
        }
        const ph::PhantomSpec base = j.contains("base") ? j.at("base").get<ph::PhantomSpec>() : ph::PhantomSpec{};
        return dataset_specs(j.at("first_seed").get<std::uint64_t>(), j.at("count").get<int>(), base);
    } catch (const nlohmann::json::exception& e) {
        throw ContractViolation(std::string("dataset description: ") + e.what());
    }
}

std::vector<nn::Sample<float>> build_samples(ModelKind kind, const std::vector<ph::PhantomSpec>& specs,
                                             const Recipe& recipe) {
    std::vector<nn::Sample<float>> out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        std::vector<nn::Sample<float>> part;
        switch (kind) {
            case ModelKind::classifier: part = classifier_samples(specs[i], recipe.model.input_size, recipe.frames); break;
            case ModelKind::locator: part = locator_samples(specs[i], recipe.model.input_size); break;
            case ModelKind::segmenter:
                part = segmenter_samples(specs[i], recipe.model.input_size, recipe.extra_phases, recipe.jitter,
                                         recipe.train.seed * 7919 + specs[i].seed);
                break;
        }
        for (auto& s : part) out.push_back(std::move(s));
    }
    return out;
}

TrainedModel train_model(ModelKind kind, const std::vector<ph::PhantomSpec>& specs, const Recipe& recipe,
                         const std::function<void(const nn::EpochReport&)>& on_epoch) {
    using clock = std::chrono::steady_clock;
    const bool want_classifier = kind == ModelKind::classifier;
    if ((recipe.model.architecture == nn::Architecture::sax_classifier) != want_classifier)
        throw ContractViolation("recipe architecture does not match model kind " + to_string(kind));
    const auto t0 = clock::now();
    const auto data = build_samples(kind, specs, recipe);
    const auto t1 = clock::now();
    TrainedModel m;
    m.samples = data.size();
    m.network = nn::make_network<float>(recipe.model, recipe.train.seed);
    m.result = nn::train(*m.network, data, recipe.loss, recipe.train, on_epoch);
    const auto t2 = clock::now();
    m.data_seconds = std::chrono::duration<double>(t1 - t0).count();
    m.train_seconds = std::chrono::duration<double>(t2 - t1).count();
    return m;
}

}  // namespace svpipe::training
