#include "svpipe/sax_selection.hpp"

#include <algorithm>
#include <numeric>

#include "svpipe/error.hpp"
#include "svpipe/preprocess.hpp"

namespace svpipe {

std::vector<int> central_slice_indices(int n, int k) {
    if (n < 0 || k < 1) throw ContractViolation("central_slice_indices: invalid sizes");
    const int m = std::min(n, k);
    const int start = (n - m) / 2;
    std::vector<int> idx(static_cast<std::size_t>(m));
    std::iota(idx.begin(), idx.end(), start);
    return idx;
}

std::vector<ImageF> central_slices(const CineStack& stack, int k) {
    std::vector<ImageF> out;
    for (int i : central_slice_indices(stack.slice_count(), k)) {
        const auto& s = stack.slices[static_cast<std::size_t>(i)];
        if (s.frames.empty()) throw ContractViolation("central_slices: slice without frames");
        out.push_back(s.frames.front());
    }
    return out;
}

double classify_slice(const nn::Network<float>& model, const ImageF& image) {
    const int size = model.spec().input_size;
    const auto prepared = prepare_for_model(image, size);
    nn::Tensor<float> x({1, size, size});
    std::copy(prepared.image.data.begin(), prepared.image.data.end(), x.data.begin());
    return static_cast<double>(model.predict(x)[0]);
}

StackScore make_stack_score(std::string stack_id, std::vector<int> slice_indices, std::vector<double> slice_probs) {
    StackScore s{std::move(stack_id), std::move(slice_indices), std::move(slice_probs), 0, 0};
    if (!s.slice_probs.empty()) {
        s.max_prob = *std::max_element(s.slice_probs.begin(), s.slice_probs.end());
        s.mean_prob = std::accumulate(s.slice_probs.begin(), s.slice_probs.end(), 0.0) /
                      static_cast<double>(s.slice_probs.size());
    }
    return s;
}

StackSelection select_from_scores(std::vector<StackScore> scores) {
    if (scores.empty()) throw ContractViolation("no cine stacks");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        const auto& a = scores[i];
        const auto& b = scores[best];
        if (a.max_prob != b.max_prob) {
            if (a.max_prob > b.max_prob) best = i;
        } else if (a.mean_prob != b.mean_prob) {
            if (a.mean_prob > b.mean_prob) best = i;
        } else if (a.stack_id < b.stack_id) {
            best = i;
        }
    }
    StackSelection sel;
    sel.chosen_stack_id = scores[best].stack_id;
    sel.chosen_index = best;
    for (const auto& s : scores) sel.images_classified += static_cast<int>(s.slice_probs.size());
    sel.scores = std::move(scores);
    return sel;
}

StackSelection select_sax_stack(const std::vector<CineStack>& stacks, const nn::Network<float>& model) {
    if (stacks.empty()) throw ContractViolation("no cine stacks");
    std::vector<StackScore> scores;
    scores.reserve(stacks.size());
    for (const auto& st : stacks) {
        std::vector<double> probs;
        for (const auto& img : central_slices(st)) probs.push_back(classify_slice(model, img));
        scores.push_back(make_stack_score(st.stack_id, central_slice_indices(st.slice_count()), std::move(probs)));
    }
    return select_from_scores(std::move(scores));
}

nlohmann::json to_json(const StackSelection& s) {
    nlohmann::json stacks = nlohmann::json::array();
    for (const auto& sc : s.scores)
        stacks.push_back({{"stack_id", sc.stack_id},
                          {"slice_indices", sc.slice_indices},
                          {"slice_probs", sc.slice_probs},
                          {"max_prob", sc.max_prob},
                          {"mean_prob", sc.mean_prob}});
    return {{"chosen_stack_id", s.chosen_stack_id}, {"images_classified", s.images_classified}, {"stacks", stacks}};
}

SliceMetrics per_slice_metrics(const std::vector<std::pair<double, bool>>& scored, double threshold) {
    if (scored.empty()) throw ContractViolation("per_slice_metrics: empty input");
    SliceMetrics m;
    for (const auto& [p, is_sax] : scored) {
        const bool pred = p > threshold;
        if (pred && is_sax) ++m.tp;
        else if (pred) ++m.fp;
        else if (is_sax) ++m.fn;
        else ++m.tn;
    }
    m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(scored.size());
    m.precision = m.tp + m.fp > 0 ? static_cast<double>(m.tp) / (m.tp + m.fp) : 0.0;
    m.recall = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
    return m;
}

}  // namespace svpipe
