#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "svpipe/heart_locator.hpp"
#include "svpipe/nn/train.hpp"
#include "svpipe/phantom.hpp"
#include "svpipe/preprocess.hpp"

namespace svpipe::training {

enum class ModelKind { classifier, locator, segmenter };
std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

/// (1, S, S) network input from a prepared image.
nn::Tensor<float> to_input(const ImageTensor& prepared);

/// Label map on the model grid: zero padding as in `p`, then nearest resize.
nn::Tensor<float> labels_to_model(const Mask& labels, const Provenance& p, int target);

/// Central five slices of every SAX (target 1) and distractor (target 0)
/// stack at `frames` evenly spaced phases starting with the first.
std::vector<nn::Sample<float>> classifier_samples(const phantom::PhantomSpec& spec, int input_size, int frames = 1);

/// First frame of every SAX slice with the whole-heart mask (blood pool or
/// myocardium) as class 1.
std::vector<nn::Sample<float>> locator_samples(const phantom::PhantomSpec& spec, int input_size);

struct CropJitter {
    double min_expansion = 1.5;
    double max_expansion = 1.5;
    /// Maximum box shift as a fraction of the box side, per axis.
    double max_shift = 0.0;
};

/// Truth box of a phantom (first-phase whole-heart masks of all SAX slices),
/// optionally perturbed.
BoundingBox truth_box(const phantom::PhantomTruth& truth, const CropJitter& jitter = {}, std::uint64_t seed = 0);

/// SAX frames cropped to a jittered truth box with 3-class targets. Every
/// slice contributes ED and ES plus `extra_phases` further random phases.
std::vector<nn::Sample<float>> segmenter_samples(const phantom::PhantomSpec& spec, int input_size, int extra_phases,
                                                 const CropJitter& jitter, std::uint64_t seed);

/// Architecture, loss, optimizer settings and data volume for one model.
struct Recipe {
    nn::ModelSpec model;
    nn::LossConfig loss;
    nn::TrainConfig train;
    /// Classifier only: phases sampled per slice.
    int frames = 1;
    /// Segmenter only.
    int extra_phases = 2;
    CropJitter jitter;
};

Recipe default_recipe(ModelKind kind);
nlohmann::json recipe_to_json(const Recipe& r);
/// Starts from the default recipe of `kind` and overrides present keys.
Recipe recipe_from_json(ModelKind kind, const nlohmann::json& j);

/// Phantom specs of a training set: randomized_spec(first_seed + i, base).
std::vector<phantom::PhantomSpec> dataset_specs(std::uint64_t first_seed, int count,
                                                const phantom::PhantomSpec& base = {});

/// Dataset description file: {"first_seed", "count", "base"} or {"specs": [...]}.
std::vector<phantom::PhantomSpec> dataset_from_json(const nlohmann::json& j);

std::vector<nn::Sample<float>> build_samples(ModelKind kind, const std::vector<phantom::PhantomSpec>& specs,
                                             const Recipe& recipe);

struct TrainedModel {
    std::unique_ptr<nn::Network<float>> network;
    nn::TrainResult result;
    std::size_t samples = 0;
    double data_seconds = 0;
    double train_seconds = 0;
};

TrainedModel train_model(ModelKind kind, const std::vector<phantom::PhantomSpec>& specs, const Recipe& recipe,
                         const std::function<void(const nn::EpochReport&)>& on_epoch = {});

}  // namespace svpipe::training
