#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "svpipe/nn/losses.hpp"
#include "svpipe/nn/models.hpp"

namespace svpipe::nn {

/// One training example. For the classifier `target` has shape (1) with a
/// value in {0,1}; for segmentation networks it is an (H, W) map of class
/// indices.
template <class T>
struct Sample {
    Tensor<T> input;
    Tensor<T> target;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 8;
    int max_epochs = 20;
    /// Epochs without validation improvement before stopping.
    int patience = 3;
    double validation_fraction = 0.1;
    std::uint64_t seed = 1;
    /// Random flips and transposes applied jointly to input and target.
    bool augment = false;
    /// Hard cap on optimizer steps (0 = none).
    int max_steps = 0;
};

struct EpochReport {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    int steps = 0;
};

struct TrainResult {
    std::vector<double> step_loss;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = -1;
    int epochs_run = 0;
    int steps = 0;
    bool early_stopped = false;
};

/// Adaptive moment estimation.
template <class T>
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(std::vector<NamedTensor<T>>& params, const std::vector<Tensor<T>>& grads) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.value.shape, T(0));
                v_.emplace_back(p.value.shape, T(0));
            }
        }
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, t_);
        const double c2 = 1.0 - std::pow(b2_, t_);
        const T step = static_cast<T>(lr_ / c1);
        const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
        const T eps = static_cast<T>(eps_);
        const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i].value.data;
            const auto& g = grads[i].data;
            auto& m = m_[i].data;
            auto& v = v_[i].data;
            for (std::size_t k = 0; k < p.size(); ++k) {
                m[k] = b1 * m[k] + (T(1) - b1) * g[k];
                v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
                p[k] -= step * m[k] / (std::sqrt(v[k]) * inv_sqrt_c2 + eps);
            }
        }
    }

private:
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

namespace detail {

// Applies a dihedral transform (bit 0: flip rows, bit 1: flip cols, bit 2:
// transpose) to the trailing two axes of a square tensor.
template <class T>
Tensor<T> dihedral(const Tensor<T>& x, unsigned code) {
    if (code == 0) return x;
    const int H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
    if (H != W) return x;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t planes = x.size() / plane;
    Tensor<T> out(x.shape);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = x.ptr() + p * plane;
        T* dst = out.ptr() + p * plane;
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                int rr = (code & 1u) ? H - 1 - r : r;
                int cc = (code & 2u) ? W - 1 - c : c;
                if (code & 4u) std::swap(rr, cc);
                dst[static_cast<std::size_t>(r) * W + c] = src[static_cast<std::size_t>(rr) * W + cc];
            }
    }
    return out;
}

}  // namespace detail

/// Loss of one sample over every supervised head; when `grads` is non-null the
/// gradient is accumulated into it.
template <class T>
double sample_loss(const Network<T>& net, const Sample<T>& s, const LossConfig& cfg,
                   std::vector<Tensor<T>>* grads) {
    Tape<T> tape(grads != nullptr);
    const auto in = tape.input(s.input);
    const auto outs = net.forward(tape, in, grads);

    std::vector<double> weights = cfg.deep_supervision_weights;
    if (weights.empty()) weights = {1.0};
    if (weights.size() > outs.size())
        throw ContractViolation("loss config has " + std::to_string(weights.size()) + " supervision weights but model has " +
                                std::to_string(outs.size()) + " heads");

    double total = 0;
    for (std::size_t h = 0; h < weights.size(); ++h) {
        if (weights[h] == 0) continue;
        const Tensor<T>& pred = tape.value(outs[h]);
        LossValue<T> lv;
        Tensor<T> grad_full;
        switch (cfg.kind) {
            case LossKind::bce:
                if (net.spec().architecture != Architecture::sax_classifier)
                    throw ContractViolation("bce loss is only wired for the classifier");
                lv = bce_loss(pred, s.target);
                grad_full = std::move(lv.grad);
                break;
            case LossKind::soft_iou: {
                if (pred.dim(0) != 2) throw ContractViolation("soft_iou loss needs a 2-class model");
                const Tensor<T> labels = downsample_labels(s.target, net.head_scale(static_cast<int>(h)));
                const std::size_t N = labels.size();
                Tensor<T> fg({pred.dim(1), pred.dim(2)});
                Tensor<T> tgt({pred.dim(1), pred.dim(2)});
                for (std::size_t i = 0; i < N; ++i) {
                    fg[i] = pred[N + i];
                    tgt[i] = labels[i] >= T(1) ? T(1) : T(0);
                }
                lv = soft_iou_loss(fg, tgt);
                grad_full = Tensor<T>(pred.shape);
                std::copy(lv.grad.data.begin(), lv.grad.data.end(), grad_full.data.begin() + static_cast<std::ptrdiff_t>(N));
                break;
            }
            case LossKind::tversky: {
                const Tensor<T> labels = downsample_labels(s.target, net.head_scale(static_cast<int>(h)));
                lv = tversky_loss(pred, one_hot(labels, pred.dim(0)), cfg.tversky_alpha, cfg.tversky_beta);
                grad_full = std::move(lv.grad);
                break;
            }
        }
        total += weights[h] * static_cast<double>(lv.loss);
        if (grads) {
            auto& g = tape.grad(outs[h]);
            const T w = static_cast<T>(weights[h]);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += w * grad_full[i];
        }
    }
    if (grads) tape.backward();
    return total;
}

/// Mini-batch Adam training with a held-out validation split and early
/// stopping; the parameters of the best validation epoch are restored.
/// Deterministic for a given seed.
template <class T>
TrainResult train(Network<T>& net, const std::vector<Sample<T>>& data, const LossConfig& loss,
                  const TrainConfig& cfg, const std::function<void(const EpochReport&)>& on_epoch = {}) {
    if (data.empty()) throw ContractViolation("train: empty dataset");
    if (cfg.batch_size < 1 || cfg.max_epochs < 0) throw ContractViolation("train: invalid configuration");
    loss.validate();

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_val = 0;
    if (cfg.validation_fraction > 0 && data.size() >= 2)
        n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.validation_fraction * data.size())));
    n_val = std::min(n_val, data.size() - 1);
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

    Adam<T> opt(cfg.learning_rate);
    TrainResult res;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<NamedTensor<T>> best_params;
    auto grads = net.zero_grads();

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::shuffle(tr.begin(), tr.end(), rng);
        double epoch_sum = 0;
        int batches = 0;
        for (std::size_t b0 = 0; b0 < tr.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
            if (cfg.max_steps > 0 && res.steps >= cfg.max_steps) break;
            const std::size_t b1 = std::min(tr.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
            for (auto& g : grads) g.fill(T(0));
            double batch_loss = 0;
            for (std::size_t k = b0; k < b1; ++k) {
                const Sample<T>& s = data[tr[k]];
                if (cfg.augment) {
                    const unsigned code = static_cast<unsigned>(rng() & 7u);
                    Sample<T> aug{detail::dihedral(s.input, code),
                                  s.target.rank() == 2 ? detail::dihedral(s.target, code) : s.target};
                    batch_loss += sample_loss(net, aug, loss, &grads);
                } else {
                    batch_loss += sample_loss(net, s, loss, &grads);
                }
            }
            const double count = static_cast<double>(b1 - b0);
            batch_loss /= count;
            if (!std::isfinite(batch_loss))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                    std::to_string(res.steps));
            const T scale = static_cast<T>(1.0 / count);
            for (auto& g : grads)
                for (auto& v : g.data) v *= scale;
            opt.step(net.parameters(), grads);
            res.step_loss.push_back(batch_loss);
            epoch_sum += batch_loss;
            ++batches;
            ++res.steps;
        }
        if (batches == 0) break;
        res.train_loss.push_back(epoch_sum / batches);
        double vl = res.train_loss.back();
        if (!val.empty()) {
            vl = 0;
            for (auto i : val) vl += sample_loss<T>(net, data[i], loss, nullptr);
            vl /= static_cast<double>(val.size());
        }
        res.val_loss.push_back(vl);
        res.epochs_run = epoch + 1;
        if (on_epoch) on_epoch(EpochReport{epoch, res.train_loss.back(), vl, res.steps});
        if (vl < best_val) {
            best_val = vl;
            res.best_epoch = epoch;
            best_params = net.parameters();
        } else if (epoch - res.best_epoch >= cfg.patience) {
            res.early_stopped = true;
            break;
        }
    }
    if (!best_params.empty()) net.parameters() = std::move(best_params);
    return res;
}

}  // namespace svpipe::nn
