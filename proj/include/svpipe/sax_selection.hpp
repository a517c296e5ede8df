#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "svpipe/image.hpp"
#include "svpipe/ingest.hpp"
#include "svpipe/nn/models.hpp"

namespace svpipe {

/// Indices of the k centrally indexed slices of an n-slice stack; the window
/// starts at floor((n - k) / 2). All indices when n <= k.
std::vector<int> central_slice_indices(int n, int k = 5);

/// First frame of each central slice.
std::vector<ImageF> central_slices(const CineStack& stack, int k = 5);

/// Classifier probability that a slice image is short-axis: the image is
/// padded, resized to the model input and min-max normalized first.
double classify_slice(const nn::Network<float>& model, const ImageF& image);

struct StackScore {
    std::string stack_id;
    std::vector<int> slice_indices;
    std::vector<double> slice_probs;
    double max_prob = 0;
    double mean_prob = 0;
};

/// Fills max/mean from `slice_probs`.
StackScore make_stack_score(std::string stack_id, std::vector<int> slice_indices, std::vector<double> slice_probs);

struct StackSelection {
    std::string chosen_stack_id;
    /// Position of the chosen stack in the scored input sequence.
    std::size_t chosen_index = 0;
    /// Same order as the input stacks.
    std::vector<StackScore> scores;
    int images_classified = 0;
};

/// Argmax of max probability; exact ties go to the higher mean, then to the
/// lexicographically lowest stack id. Throws ContractViolation when empty.
StackSelection select_from_scores(std::vector<StackScore> scores);

/// Scores the central five slices of every stack and applies select_from_scores.
StackSelection select_sax_stack(const std::vector<CineStack>& stacks, const nn::Network<float>& model);

nlohmann::json to_json(const StackSelection& s);

struct SliceMetrics {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    int tn = 0;
    double accuracy = 0;
    /// 0 when nothing is predicted positive.
    double precision = 0;
    /// 0 when nothing is labelled positive.
    double recall = 0;
};

/// Confusion-matrix metrics of (probability, is_sax) pairs with prediction
/// prob > threshold. Throws ContractViolation on empty input.
SliceMetrics per_slice_metrics(const std::vector<std::pair<double, bool>>& scored, double threshold = 0.5);

}  // namespace svpipe
