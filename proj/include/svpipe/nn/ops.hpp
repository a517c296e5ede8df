#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "svpipe/nn/tape.hpp"

namespace svpipe::nn {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Upper bound on im2col scratch (elements). Large convolutions are processed
// in bands of whole output rows.
inline constexpr std::size_t kColBudget = std::size_t{1} << 21;

/// Expands output rows [y0, y1) of a same-padded k*k convolution into a
/// (C*k*k) x ((y1-y0)*W) column matrix.
template <class T>
void im2col_rows(const T* x, int C, int H, int W, int k, int y0, int y1, T* col) {
    const int p = k / 2;
    const std::size_t n = static_cast<std::size_t>(y1 - y0) * W;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * n;
                const int dy = ky - p;
                const int dx = kx - p;
                const int xa = std::max(0, -dx);
                const int xb = std::min(W, W - dx);
                for (int y = y0; y < y1; ++y) {
                    T* dst = row + static_cast<std::size_t>(y - y0) * W;
                    const int sy = y + dy;
                    if (sy < 0 || sy >= H) {
                        std::fill(dst, dst + W, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<std::size_t>(c) * H + sy) * W;
                    std::fill(dst, dst + xa, T(0));
                    std::copy(src + xa + dx, src + xb + dx, dst + xa);
                    std::fill(dst + xb, dst + W, T(0));
                }
            }
        }
    }
}

/// Adjoint of im2col_rows: accumulates the column matrix back into dx.
template <class T>
void col2im_rows(const T* col, int C, int H, int W, int k, int y0, int y1, T* dx) {
    const int p = k / 2;
    const std::size_t n = static_cast<std::size_t>(y1 - y0) * W;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * n;
                const int dy = ky - p;
                const int dx_ = kx - p;
                const int xa = std::max(0, -dx_);
                const int xb = std::min(W, W - dx_);
                for (int y = y0; y < y1; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= H) continue;
                    const T* src = row + static_cast<std::size_t>(y - y0) * W;
                    T* dst = dx + (static_cast<std::size_t>(c) * H + sy) * W;
                    for (int xx = xa; xx < xb; ++xx) dst[xx + dx_] += src[xx];
                }
            }
        }
    }
}

template <class T>
std::vector<T>& col_scratch() {
    thread_local std::vector<T> buf;
    return buf;
}

inline int band_rows(std::size_t K, int H, int W) {
    const std::size_t per_row = K * static_cast<std::size_t>(W);
    const auto rows = static_cast<int>(std::max<std::size_t>(1, kColBudget / std::max<std::size_t>(1, per_row)));
    return std::min(rows, H);
}

template <class T>
void conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Tensor<T>& y) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int Co = w.dim(0), k = w.dim(2);
    const std::size_t N = static_cast<std::size_t>(H) * W;
    const std::size_t K = static_cast<std::size_t>(C) * k * k;
    ConstMatMap<T> Wm(w.ptr(), Co, static_cast<Eigen::Index>(K));
    MatMap<T> Ym(y.ptr(), Co, static_cast<Eigen::Index>(N));
    if (k == 1) {
        Ym.noalias() = Wm * ConstMatMap<T>(x.ptr(), C, static_cast<Eigen::Index>(N));
    } else {
        auto& col = col_scratch<T>();
        const int band = band_rows(K, H, W);
        for (int y0 = 0; y0 < H; y0 += band) {
            const int y1 = std::min(H, y0 + band);
            const std::size_t n = static_cast<std::size_t>(y1 - y0) * W;
            col.resize(K * n);
            im2col_rows(x.ptr(), C, H, W, k, y0, y1, col.data());
            Ym.middleCols(static_cast<Eigen::Index>(y0) * W, static_cast<Eigen::Index>(n)).noalias() =
                Wm * ConstMatMap<T>(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(n));
        }
    }
    for (int o = 0; o < Co; ++o) Ym.row(o).array() += b[static_cast<std::size_t>(o)];
}

template <class T>
void conv_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dw, Tensor<T>* db,
                   Tensor<T>* dx) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int Co = w.dim(0), k = w.dim(2);
    const std::size_t N = static_cast<std::size_t>(H) * W;
    const std::size_t K = static_cast<std::size_t>(C) * k * k;
    ConstMatMap<T> Wm(w.ptr(), Co, static_cast<Eigen::Index>(K));
    ConstMatMap<T> dYm(dy.ptr(), Co, static_cast<Eigen::Index>(N));
    if (db) {
        // Fixed summation order; Eigen reductions peel by pointer alignment.
        for (int o = 0; o < Co; ++o) {
            const T* row = dy.ptr() + static_cast<std::size_t>(o) * N;
            T s = 0;
            for (std::size_t i = 0; i < N; ++i) s += row[i];
            (*db)[static_cast<std::size_t>(o)] += s;
        }
    }
    if (k == 1) {
        ConstMatMap<T> Xm(x.ptr(), C, static_cast<Eigen::Index>(N));
        if (dw) MatMap<T>(dw->ptr(), Co, C).noalias() += dYm * Xm.transpose();
        if (dx) MatMap<T>(dx->ptr(), C, static_cast<Eigen::Index>(N)).noalias() += Wm.transpose() * dYm;
        return;
    }
    auto& col = col_scratch<T>();
    const int band = band_rows(K, H, W);
    for (int y0 = 0; y0 < H; y0 += band) {
        const int y1 = std::min(H, y0 + band);
        const auto n = static_cast<Eigen::Index>(static_cast<std::size_t>(y1 - y0) * W);
        const auto off = static_cast<Eigen::Index>(y0) * W;
        col.resize(K * static_cast<std::size_t>(n));
        if (dw) {
            im2col_rows(x.ptr(), C, H, W, k, y0, y1, col.data());
            MatMap<T>(dw->ptr(), Co, static_cast<Eigen::Index>(K)).noalias() +=
                dYm.middleCols(off, n) * ConstMatMap<T>(col.data(), static_cast<Eigen::Index>(K), n).transpose();
        }
        if (dx) {
            MatMap<T>(col.data(), static_cast<Eigen::Index>(K), n).noalias() =
                Wm.transpose() * dYm.middleCols(off, n);
            col2im_rows(col.data(), C, H, W, k, y0, y1, dx->ptr());
        }
    }
}

struct AxisWeights {
    std::vector<int> i0, i1;
    std::vector<double> frac;
};

/// Half-pixel-centre bilinear sampling positions for upsampling n -> n*factor.
inline AxisWeights upsample_axis(int n, int factor) {
    AxisWeights a;
    const int m = n * factor;
    a.i0.resize(static_cast<std::size_t>(m));
    a.i1.resize(static_cast<std::size_t>(m));
    a.frac.resize(static_cast<std::size_t>(m));
    for (int o = 0; o < m; ++o) {
        double src = (o + 0.5) / factor - 0.5;
        if (src < 0) src = 0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > n - 1) i0 = n - 1;
        const int i1 = std::min(i0 + 1, n - 1);
        a.i0[static_cast<std::size_t>(o)] = i0;
        a.i1[static_cast<std::size_t>(o)] = i1;
        a.frac[static_cast<std::size_t>(o)] = src - i0;
    }
    return a;
}

}  // namespace detail

namespace ops {

template <class T>
using Id = typename Tape<T>::Id;

/// Same-padded, stride-1 convolution. Weight shape (Co, Ci, k, k), k odd.
template <class T>
Id<T> conv2d(Tape<T>& tape, Id<T> x, ParamRef<T> w, ParamRef<T> b) {
    const Tensor<T>& xv = tape.value(x);
    if (xv.rank() != 3 || w.value->rank() != 4 || w.value->dim(1) != xv.dim(0) || w.value->dim(2) % 2 == 0 ||
        w.value->dim(2) != w.value->dim(3) || static_cast<int>(b.value->size()) != w.value->dim(0))
        throw ContractViolation("conv2d: shape mismatch, input " + shape_string(xv.shape) + " weight " +
                                shape_string(w.value->shape));
    Tensor<T> y({w.value->dim(0), xv.dim(1), xv.dim(2)});
    detail::conv_forward(xv, *w.value, *b.value, y);
    const bool need = tape.recording() && (tape.requires_grad(x) || w.grad || b.grad);
    if (!need) return tape.push(std::move(y), {});
    return tape.push(std::move(y), [&tape, x, w, b](Id<T> self) {
        Tensor<T>* dx = tape.requires_grad(x) ? &tape.grad(x) : nullptr;
        detail::conv_backward(tape.value(x), *w.value, tape.grad(self), w.grad, b.grad, dx);
    });
}

template <class T>
Id<T> relu(Tape<T>& tape, Id<T> x) {
    Tensor<T> y = tape.value(x);
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    if (!(tape.recording() && tape.requires_grad(x))) return tape.push(std::move(y), {});
    return tape.push(std::move(y), [&tape, x](Id<T> self) {
        const auto& yv = tape.value(self);
        const auto& g = tape.grad(self);
        auto& dx = tape.grad(x);
        for (std::size_t i = 0; i < yv.size(); ++i)
            if (yv[i] > T(0)) dx[i] += g[i];
    });
}

/// Non-overlapping k*k max pooling; H and W must be divisible by k.
template <class T>
Id<T> maxpool(Tape<T>& tape, Id<T> x, int k) {
    const Tensor<T>& xv = tape.value(x);
    const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    if (k < 1 || H % k != 0 || W % k != 0) throw ContractViolation("maxpool: size not divisible by window");
    if (k == 1) return x;
    const int Ho = H / k, Wo = W / k;
    Tensor<T> y({C, Ho, Wo});
    std::vector<int> arg(y.size());
    std::size_t o = 0;
    for (int c = 0; c < C; ++c) {
        const T* plane = xv.ptr() + static_cast<std::size_t>(c) * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox, ++o) {
                int best = (oy * k) * W + ox * k;
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx) {
                        const int idx = (oy * k + dy) * W + ox * k + dx;
                        if (plane[idx] > plane[best]) best = idx;
                    }
                arg[o] = c * H * W + best;
                y[o] = plane[best];
            }
        }
    }
    if (!(tape.recording() && tape.requires_grad(x))) return tape.push(std::move(y), {});
    return tape.push(std::move(y), [&tape, x, arg = std::move(arg)](Id<T> self) {
        const auto& g = tape.grad(self);
        auto& dx = tape.grad(x);
        for (std::size_t i = 0; i < arg.size(); ++i) dx[static_cast<std::size_t>(arg[i])] += g[i];
    });
}

/// Bilinear upsampling by an integer factor (half-pixel centres, edge clamp).
template <class T>
Id<T> upsample(Tape<T>& tape, Id<T> x, int factor) {
    if (factor == 1) return x;
    const Tensor<T>& xv = tape.value(x);
    const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    const int Ho = H * factor, Wo = W * factor;
    auto ay = std::make_shared<detail::AxisWeights>(detail::upsample_axis(H, factor));
    auto ax = std::make_shared<detail::AxisWeights>(detail::upsample_axis(W, factor));
    Tensor<T> y({C, Ho, Wo});
    for (int c = 0; c < C; ++c) {
        const T* src = xv.ptr() + static_cast<std::size_t>(c) * H * W;
        T* dst = y.ptr() + static_cast<std::size_t>(c) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
            const T fy = static_cast<T>(ay->frac[oy]);
            const T* r0 = src + static_cast<std::size_t>(ay->i0[oy]) * W;
            const T* r1 = src + static_cast<std::size_t>(ay->i1[oy]) * W;
            for (int ox = 0; ox < Wo; ++ox) {
                const T fx = static_cast<T>(ax->frac[ox]);
                const int c0 = ax->i0[ox], c1 = ax->i1[ox];
                const T top = r0[c0] + fx * (r0[c1] - r0[c0]);
                const T bot = r1[c0] + fx * (r1[c1] - r1[c0]);
                dst[static_cast<std::size_t>(oy) * Wo + ox] = top + fy * (bot - top);
            }
        }
    }
    if (!(tape.recording() && tape.requires_grad(x))) return tape.push(std::move(y), {});
    return tape.push(std::move(y), [&tape, x, ay, ax, C, H, W, Ho, Wo](Id<T> self) {
        const auto& g = tape.grad(self);
        auto& dx = tape.grad(x);
        for (int c = 0; c < C; ++c) {
            const T* gp = g.ptr() + static_cast<std::size_t>(c) * Ho * Wo;
            T* dp = dx.ptr() + static_cast<std::size_t>(c) * H * W;
            for (int oy = 0; oy < Ho; ++oy) {
                const T fy = static_cast<T>(ay->frac[oy]);
                T* r0 = dp + static_cast<std::size_t>(ay->i0[oy]) * W;
                T* r1 = dp + static_cast<std::size_t>(ay->i1[oy]) * W;
                for (int ox = 0; ox < Wo; ++ox) {
                    const T fx = static_cast<T>(ax->frac[ox]);
                    const int c0 = ax->i0[ox], c1 = ax->i1[ox];
                    const T gv = gp[static_cast<std::size_t>(oy) * Wo + ox];
                    const T top = gv * (T(1) - fy);
                    const T bot = gv * fy;
                    r0[c0] += top * (T(1) - fx);
                    r0[c1] += top * fx;
                    r1[c0] += bot * (T(1) - fx);
                    r1[c1] += bot * fx;
                }
            }
        }
    });
}

/// Channel concatenation of equally sized (C_i, H, W) maps.
template <class T>
Id<T> concat(Tape<T>& tape, const std::vector<Id<T>>& xs) {
    if (xs.empty()) throw ContractViolation("concat: no inputs");
    const int H = tape.value(xs[0]).dim(1), W = tape.value(xs[0]).dim(2);
    int C = 0;
    bool any_grad = false;
    for (auto id : xs) {
        const auto& v = tape.value(id);
        if (v.dim(1) != H || v.dim(2) != W) throw ContractViolation("concat: spatial size mismatch");
        C += v.dim(0);
        any_grad = any_grad || tape.requires_grad(id);
    }
    Tensor<T> y({C, H, W});
    std::size_t off = 0;
    for (auto id : xs) {
        const auto& v = tape.value(id);
        std::copy(v.data.begin(), v.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(off));
        off += v.size();
    }
    if (!(tape.recording() && any_grad)) return tape.push(std::move(y), {});
    return tape.push(std::move(y), [&tape, xs](Id<T> self) {
        const auto& g = tape.grad(self);
        std::size_t o = 0;
        for (auto id : xs) {
            const std::size_t n = tape.value(id).size();
            if (tape.requires_grad(id)) {
                auto& dx = tape.grad(id);
                for (std::size_t i = 0; i < n; ++i) dx[i] += g[o + i];
            }
            o += n;
        }
    });
}

/// Per-pixel softmax across the channel axis of a (C, H, W) map.
template <class T>
Id<T> softmax_channels(Tape<T>& tape, Id<T> x) {
    const Tensor<T>& xv = tape.value(x);
    const int C = xv.dim(0);
    const std::size_t N = xv.size() / static_cast<std::size_t>(C);
    Tensor<T> y(xv.shape);
    for (std::size_t i = 0; i < N; ++i) {
        T m = xv[i];
        for (int c = 1; c < C; ++c) m = std::max(m, xv[c * N + i]);
        T s = 0;
        for (int c = 0; c < C; ++c) {
            const T e = std::exp(xv[c * N + i] - m);
            y[c * N + i] = e;
            s += e;
        }
        for (int c = 0; c < C; ++c) y[c * N + i] /= s;
    }
    if (!(tape.recording() && tape.requires_grad(x))) return tape.push(std::move(y), {});
    return tape.push(std::move(y), [&tape, x, C, N](Id<T> self) {
        const auto& p = tape.value(self);
        const auto& g = tape.grad(self);
        auto& dx = tape.grad(x);
        for (std::size_t i = 0; i < N; ++i) {
            T dot = 0;
            for (int c = 0; c < C; ++c) dot += p[c * N + i] * g[c * N + i];
            for (int c = 0; c < C; ++c) dx[c * N + i] += p[c * N + i] * (g[c * N + i] - dot);
        }
    });
}

template <class T>
Id<T> sigmoid(Tape<T>& tape, Id<T> x) {
    Tensor<T> y = tape.value(x);
    for (auto& v : y.data) v = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    if (!(tape.recording() && tape.requires_grad(x))) return tape.push(std::move(y), {});
    return tape.push(std::move(y), [&tape, x](Id<T> self) {
        const auto& p = tape.value(self);
        const auto& g = tape.grad(self);
        auto& dx = tape.grad(x);
        for (std::size_t i = 0; i < p.size(); ++i) dx[i] += g[i] * p[i] * (T(1) - p[i]);
    });
}

/// (C, H, W) -> (C) spatial mean.
template <class T>
Id<T> global_avg_pool(Tape<T>& tape, Id<T> x) {
    const Tensor<T>& xv = tape.value(x);
    const int C = xv.dim(0);
    const std::size_t N = xv.size() / static_cast<std::size_t>(C);
    Tensor<T> y({C});
    for (int c = 0; c < C; ++c) {
        T s = 0;
        for (std::size_t i = 0; i < N; ++i) s += xv[c * N + i];
        y[static_cast<std::size_t>(c)] = s / static_cast<T>(N);
    }
    if (!(tape.recording() && tape.requires_grad(x))) return tape.push(std::move(y), {});
    return tape.push(std::move(y), [&tape, x, C, N](Id<T> self) {
        const auto& g = tape.grad(self);
        auto& dx = tape.grad(x);
        for (int c = 0; c < C; ++c) {
            const T gv = g[static_cast<std::size_t>(c)] / static_cast<T>(N);
            for (std::size_t i = 0; i < N; ++i) dx[c * N + i] += gv;
        }
    });
}

/// Fully connected layer on the flattened input. Weight shape (Out, In).
/// Plain loops keep the summation order independent of buffer alignment.
template <class T>
Id<T> dense(Tape<T>& tape, Id<T> x, ParamRef<T> w, ParamRef<T> b) {
    const Tensor<T>& xv = tape.value(x);
    const int out = w.value->dim(0), in = w.value->dim(1);
    if (static_cast<int>(xv.size()) != in || static_cast<int>(b.value->size()) != out)
        throw ContractViolation("dense: input size " + std::to_string(xv.size()) + " does not match weight " +
                                shape_string(w.value->shape));
    Tensor<T> y({out});
    for (int o = 0; o < out; ++o) {
        const T* wr = w.value->ptr() + static_cast<std::size_t>(o) * in;
        T s = (*b.value)[static_cast<std::size_t>(o)];
        for (int i = 0; i < in; ++i) s += wr[i] * xv[static_cast<std::size_t>(i)];
        y[static_cast<std::size_t>(o)] = s;
    }
    const bool need = tape.recording() && (tape.requires_grad(x) || w.grad || b.grad);
    if (!need) return tape.push(std::move(y), {});
    return tape.push(std::move(y), [&tape, x, w, b, in, out](Id<T> self) {
        const auto& g = tape.grad(self);
        const auto& xv = tape.value(x);
        Tensor<T>* dx = tape.requires_grad(x) ? &tape.grad(x) : nullptr;
        for (int o = 0; o < out; ++o) {
            const T go = g[static_cast<std::size_t>(o)];
            const T* wr = w.value->ptr() + static_cast<std::size_t>(o) * in;
            if (w.grad) {
                T* gw = w.grad->ptr() + static_cast<std::size_t>(o) * in;
                for (int i = 0; i < in; ++i) gw[i] += go * xv[static_cast<std::size_t>(i)];
            }
            if (b.grad) (*b.grad)[static_cast<std::size_t>(o)] += go;
            if (dx)
                for (int i = 0; i < in; ++i) (*dx)[static_cast<std::size_t>(i)] += go * wr[i];
        }
    });
}

}  // namespace ops
}  // namespace svpipe::nn
