#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "svpipe/nn/tensor.hpp"

namespace svpipe::nn {

inline constexpr double kOverlapEps = 1e-6;
inline constexpr double kProbClamp = 1e-7;

enum class LossKind { bce, soft_iou, tversky };

inline std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::bce: return "bce";
        case LossKind::soft_iou: return "soft_iou";
        case LossKind::tversky: return "tversky";
    }
    return "unknown";
}

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "bce") return LossKind::bce;
    if (s == "soft_iou") return LossKind::soft_iou;
    if (s == "tversky") return LossKind::tversky;
    throw ContractViolation("unknown loss kind: " + s);
}

struct LossConfig {
    LossKind kind = LossKind::bce;
    double tversky_alpha = 0.5;
    double tversky_beta = 0.5;
    /// One weight per output head when the model has deep supervision.
    std::vector<double> deep_supervision_weights;

    void validate() const {
        if (tversky_alpha < 0 || tversky_alpha > 1 || tversky_beta < 0 || tversky_beta > 1)
            throw ContractViolation("tversky alpha/beta must lie in [0,1]");
        const double s = tversky_alpha + tversky_beta;
        if (!(s > 0 && s <= 2)) throw ContractViolation("tversky alpha+beta must lie in (0,2]");
        if (!deep_supervision_weights.empty()) {
            double total = 0;
            for (double w : deep_supervision_weights) {
                if (w < 0) throw ContractViolation("deep supervision weights must be non-negative");
                total += w;
            }
            if (std::abs(total - 1.0) > 1e-9) throw ContractViolation("deep supervision weights must sum to 1");
        }
    }
};

/// Uniform weights over `heads` outputs.
inline std::vector<double> uniform_supervision_weights(int heads) {
    return std::vector<double>(static_cast<std::size_t>(heads), 1.0 / heads);
}

template <class T>
struct LossValue {
    T loss = 0;
    Tensor<T> grad;  // d loss / d prediction
};

/// Mean binary cross-entropy; predictions clamped to [1e-7, 1-1e-7].
template <class T>
LossValue<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.size() != target.size() || pred.size() == 0) throw ContractViolation("bce_loss: size mismatch");
    LossValue<T> out;
    out.grad = Tensor<T>(pred.shape);
    const T lo = static_cast<T>(kProbClamp), hi = T(1) - static_cast<T>(kProbClamp);
    const auto n = static_cast<T>(pred.size());
    T total = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T p = std::clamp(pred[i], lo, hi);
        const T t = target[i];
        total += -(t * std::log(p) + (T(1) - t) * std::log(T(1) - p));
        const bool inside = pred[i] > lo && pred[i] < hi;
        out.grad[i] = inside ? (-t / p + (T(1) - t) / (T(1) - p)) / n : T(0);
    }
    out.loss = total / n;
    return out;
}

/// 1 - (sum p*t + eps) / (sum p + sum t - sum p*t + eps).
template <class T>
LossValue<T> soft_iou_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.size() != target.size()) throw ContractViolation("soft_iou_loss: size mismatch");
    const T eps = static_cast<T>(kOverlapEps);
    T inter = 0, sp = 0, st = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += pred[i] * target[i];
        sp += pred[i];
        st += target[i];
    }
    const T num = inter + eps;
    const T den = sp + st - inter + eps;
    LossValue<T> out;
    out.loss = T(1) - num / den;
    out.grad = Tensor<T>(pred.shape);
    const T den2 = den * den;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T t = target[i];
        out.grad[i] = -(t * den - num * (T(1) - t)) / den2;
    }
    return out;
}

/// Mean over foreground classes (c >= 1) of 1 - (TP+eps)/(TP + a*FP + b*FN + eps).
/// `pred` and `onehot` are (C, H, W).
template <class T>
LossValue<T> tversky_loss(const Tensor<T>& pred, const Tensor<T>& onehot, double alpha, double beta) {
    if (pred.shape != onehot.shape || pred.rank() != 3 || pred.dim(0) < 2)
        throw ContractViolation("tversky_loss: expected matching (C>=2, H, W) tensors");
    const int C = pred.dim(0);
    const std::size_t N = pred.size() / static_cast<std::size_t>(C);
    const T eps = static_cast<T>(kOverlapEps);
    const T a = static_cast<T>(alpha), b = static_cast<T>(beta);
    LossValue<T> out;
    out.grad = Tensor<T>(pred.shape);
    const T inv_classes = T(1) / static_cast<T>(C - 1);
    for (int c = 1; c < C; ++c) {
        const T* p = pred.ptr() + c * N;
        const T* t = onehot.ptr() + c * N;
        T tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < N; ++i) {
            tp += p[i] * t[i];
            fp += p[i] * (T(1) - t[i]);
            fn += (T(1) - p[i]) * t[i];
        }
        const T num = tp + eps;
        const T den = tp + a * fp + b * fn + eps;
        out.loss += (T(1) - num / den) * inv_classes;
        T* g = out.grad.ptr() + c * N;
        const T den2 = den * den;
        for (std::size_t i = 0; i < N; ++i) {
            const T dden = t[i] + a * (T(1) - t[i]) - b * t[i];
            g[i] = -(t[i] * den - num * dden) / den2 * inv_classes;
        }
    }
    return out;
}

/// Label map (H, W) holding class indices -> one-hot (C, H, W).
template <class T>
Tensor<T> one_hot(const Tensor<T>& labels, int classes) {
    const int H = labels.dim(0), W = labels.dim(1);
    const std::size_t N = labels.size();
    Tensor<T> out({classes, H, W});
    for (std::size_t i = 0; i < N; ++i) {
        const int c = static_cast<int>(labels[i]);
        if (c < 0 || c >= classes) throw ContractViolation("one_hot: label out of range");
        out[static_cast<std::size_t>(c) * N + i] = T(1);
    }
    return out;
}

/// Nearest-neighbour downsampling of an (H, W) label map by an integer factor.
template <class T>
Tensor<T> downsample_labels(const Tensor<T>& labels, int factor) {
    if (factor == 1) return labels;
    const int H = labels.dim(0), W = labels.dim(1);
    if (H % factor || W % factor) throw ContractViolation("downsample_labels: size not divisible");
    // Sample the pixel nearest each block centre, rounding half down.
    const int off = (factor - 1) / 2;
    Tensor<T> out({H / factor, W / factor});
    for (int y = 0; y < H / factor; ++y)
        for (int x = 0; x < W / factor; ++x)
            out[static_cast<std::size_t>(y) * (W / factor) + x] =
                labels[static_cast<std::size_t>(y * factor + off) * W + x * factor + off];
    return out;
}

}  // namespace svpipe::nn
