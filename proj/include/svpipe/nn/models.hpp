#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "svpipe/nn/ops.hpp"

namespace svpipe::nn {

enum class Architecture { sax_classifier, unet3plus };

inline std::string to_string(Architecture a) {
    return a == Architecture::sax_classifier ? "sax_classifier" : "unet3plus";
}

inline Architecture architecture_from_string(const std::string& s) {
    if (s == "sax_classifier") return Architecture::sax_classifier;
    if (s == "unet3plus") return Architecture::unet3plus;
    throw ContractViolation("unknown architecture: " + s);
}

/// Architecture hyper-parameters. For the classifier `depth` counts conv
/// blocks; for UNet 3+ it counts encoder scales (the deepest is the bottleneck).
struct ModelSpec {
    Architecture architecture = Architecture::unet3plus;
    int in_channels = 1;
    int out_classes = 2;
    int base_width = 16;
    int depth = 5;
    bool deep_supervision = false;
    int input_size = 128;

    bool operator==(const ModelSpec&) const = default;

    void validate() const {
        if (in_channels < 1 || base_width < 1 || depth < 1 || input_size < 1)
            throw ContractViolation("model spec: sizes must be positive");
        if (architecture == Architecture::sax_classifier) {
            if (out_classes != 1) throw ContractViolation("sax_classifier outputs a single probability");
            if (deep_supervision) throw ContractViolation("sax_classifier has no deep supervision");
            if (input_size % (1 << depth) != 0)
                throw ContractViolation("sax_classifier input size must be divisible by 2^depth");
        } else {
            if (depth < 3) throw ContractViolation("unet3plus depth must be >= 3");
            if (out_classes < 2) throw ContractViolation("unet3plus needs >= 2 classes (softmax output)");
            if (input_size % (1 << (depth - 1)) != 0)
                throw ContractViolation("unet3plus input size must be divisible by 2^(depth-1)");
        }
    }
};

inline void to_json(nlohmann::json& j, const ModelSpec& s) {
    j = nlohmann::json{{"architecture", to_string(s.architecture)},
                       {"in_channels", s.in_channels},
                       {"out_classes", s.out_classes},
                       {"base_width", s.base_width},
                       {"depth", s.depth},
                       {"deep_supervision", s.deep_supervision},
                       {"input_size", s.input_size}};
}

inline void from_json(const nlohmann::json& j, ModelSpec& s) {
    s.architecture = architecture_from_string(j.at("architecture").get<std::string>());
    s.in_channels = j.at("in_channels").get<int>();
    s.out_classes = j.at("out_classes").get<int>();
    s.base_width = j.at("base_width").get<int>();
    s.depth = j.at("depth").get<int>();
    s.deep_supervision = j.at("deep_supervision").get<bool>();
    s.input_size = j.at("input_size").get<int>();
}

/// Common parameter storage and inference entry points.
template <class T>
class Network {
public:
    using Id = typename Tape<T>::Id;

    virtual ~Network() = default;

    [[nodiscard]] const ModelSpec& spec() const { return spec_; }
    [[nodiscard]] std::vector<NamedTensor<T>>& parameters() { return params_; }
    [[nodiscard]] const std::vector<NamedTensor<T>>& parameters() const { return params_; }

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    [[nodiscard]] std::vector<Tensor<T>> zero_grads() const {
        std::vector<Tensor<T>> g;
        g.reserve(params_.size());
        for (const auto& p : params_) g.emplace_back(p.value.shape, T(0));
        return g;
    }

    /// He-normal weights, zero biases.
    void initialize(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            std::normal_distribution<double> dist(0.0, init_std_[i]);
            for (auto& v : params_[i].value.data) v = init_std_[i] > 0 ? static_cast<T>(dist(rng)) : T(0);
        }
    }

    [[nodiscard]] virtual int head_count() const = 0;
    /// Spatial down-scaling factor of head i relative to the input.
    [[nodiscard]] virtual int head_scale(int head) const = 0;

    /// Records one sample's forward pass. Returns output head ids, main head first.
    virtual std::vector<Id> forward(Tape<T>& tape, Id input, std::vector<Tensor<T>>* grads) const = 0;

    [[nodiscard]] virtual std::unique_ptr<Network> clone() const = 0;

    void check_input(const Tensor<T>& x) const {
        if (x.rank() != 3 || x.dim(0) != spec_.in_channels || x.dim(1) != spec_.input_size ||
            x.dim(2) != spec_.input_size)
            throw ContractViolation("network input " + shape_string(x.shape) + " does not match model (" +
                                    std::to_string(spec_.in_channels) + "," + std::to_string(spec_.input_size) + "," +
                                    std::to_string(spec_.input_size) + ")");
    }

    /// Main-head output for one (C, H, W) sample. Thread-safe.
    [[nodiscard]] Tensor<T> predict(const Tensor<T>& x) const {
        check_input(x);
        Tape<T> tape(false);
        auto in = tape.input(x);
        auto outs = forward(tape, in, nullptr);
        return tape.value(outs.front());
    }

protected:
    explicit Network(ModelSpec spec) : spec_(spec) { spec_.validate(); }

    int add_param(std::string name, std::vector<int> shape, double init_std) {
        params_.push_back(NamedTensor<T>{std::move(name), Tensor<T>(std::move(shape))});
        init_std_.push_back(init_std);
        return static_cast<int>(params_.size()) - 1;
    }

    struct ConvParams {
        int weight = -1;
        int bias = -1;
    };

    ConvParams add_conv(const std::string& name, int in, int out, int k, bool he = true) {
        const double fan_in = static_cast<double>(in) * k * k;
        ConvParams c;
        c.weight = add_param(name + ".weight", {out, in, k, k}, std::sqrt((he ? 2.0 : 1.0) / fan_in));
        c.bias = add_param(name + ".bias", {out}, 0.0);
        return c;
    }

    ConvParams add_dense(const std::string& name, int in, int out, bool he = true) {
        ConvParams c;
        c.weight = add_param(name + ".weight", {out, in}, std::sqrt((he ? 2.0 : 1.0) / in));
        c.bias = add_param(name + ".bias", {out}, 0.0);
        return c;
    }

    ParamRef<T> ref(int idx, std::vector<Tensor<T>>* grads) const {
        return ParamRef<T>{&params_[static_cast<std::size_t>(idx)].value,
                           grads ? &(*grads)[static_cast<std::size_t>(idx)] : nullptr};
    }

    Id conv(Tape<T>& tape, Id x, const ConvParams& c, std::vector<Tensor<T>>* grads) const {
        return ops::conv2d(tape, x, ref(c.weight, grads), ref(c.bias, grads));
    }

    ModelSpec spec_;
    std::vector<NamedTensor<T>> params_;
    std::vector<double> init_std_;
};

/// Binary SAX/non-SAX image classifier: `depth` blocks of (3x3 conv, ReLU,
/// 2x2 max-pool) with widths base*2^i, global average pooling, then two dense
/// layers (last -> last/2 -> 1) and a sigmoid.
template <class T>
class SaxClassifierNet final : public Network<T> {
    using Base = Network<T>;

public:
    using Id = typename Base::Id;

    explicit SaxClassifierNet(ModelSpec spec) : Base(spec) {
        if (spec.architecture != Architecture::sax_classifier) throw ContractViolation("not a classifier spec");
        int in = spec.in_channels;
        for (int i = 0; i < spec.depth; ++i) {
            const int w = spec.base_width << i;
            blocks_.push_back(this->add_conv("block" + std::to_string(i) + ".conv", in, w, 3));
            in = w;
        }
        const int hidden = std::max(1, in / 2);
        fc1_ = this->add_dense("fc1", in, hidden);
        fc2_ = this->add_dense("fc2", hidden, 1, false);
    }

    [[nodiscard]] int head_count() const override { return 1; }
    [[nodiscard]] int head_scale(int) const override { return 1; }

    std::vector<Id> forward(Tape<T>& tape, Id x, std::vector<Tensor<T>>* grads) const override {
        Id h = x;
        for (const auto& b : blocks_) h = ops::maxpool(tape, ops::relu(tape, this->conv(tape, h, b, grads)), 2);
        h = ops::global_avg_pool(tape, h);
        h = ops::relu(tape, ops::dense(tape, h, this->ref(fc1_.weight, grads), this->ref(fc1_.bias, grads)));
        h = ops::dense(tape, h, this->ref(fc2_.weight, grads), this->ref(fc2_.bias, grads));
        return {ops::sigmoid(tape, h)};
    }

    [[nodiscard]] std::unique_ptr<Base> clone() const override { return std::make_unique<SaxClassifierNet>(*this); }

private:
    std::vector<typename Base::ConvParams> blocks_;
    typename Base::ConvParams fc1_, fc2_;
};

/// One incoming connection of a UNet 3+ decoder stage.
struct SkipSource {
    enum class Kind { encoder, decoder };
    Kind kind = Kind::encoder;
    int level = 0;     // 0 = full resolution
    int pool = 1;      // max-pool window applied to the source
    int upsample = 1;  // bilinear upsampling factor applied to the source
};

/// UNet 3+ with full-scale skip connections.
///
/// Encoder level l (0..depth-1) has base*2^l channels; the deepest level is
/// the bottleneck and doubles as the coarsest decoder stage. Decoder stage i
/// (depth-2..0) fuses `depth` branches: every encoder level <= i (max-pooled
/// down to level i) and every coarser decoder stage (bilinearly upsampled),
/// each mapped to `base` channels by a 3x3 conv (applied before upsampling for
/// decoder sources), concatenated to depth*base
/// channels and fused by another 3x3 conv. Heads are 3x3 convs followed by a
/// per-pixel softmax; with deep supervision every decoder stage (and the
/// bottleneck) gets a head at its native scale.
template <class T>
class UNet3Plus final : public Network<T> {
    using Base = Network<T>;

public:
    using Id = typename Base::Id;

    explicit UNet3Plus(ModelSpec spec) : Base(spec) {
        if (spec.architecture != Architecture::unet3plus) throw ContractViolation("not a unet3plus spec");
        const int D = spec.depth;
        const int cat = spec.base_width;
        const int up = cat * D;
        int in = spec.in_channels;
        for (int l = 0; l < D; ++l) {
            const int w = spec.base_width << l;
            const std::string n = "enc" + std::to_string(l);
            enc_.push_back({this->add_conv(n + ".conv0", in, w, 3), this->add_conv(n + ".conv1", w, w, 3)});
            in = w;
        }
        branch_.resize(static_cast<std::size_t>(D - 1));
        fuse_.resize(static_cast<std::size_t>(D - 1));
        for (int i = D - 2; i >= 0; --i) {
            const std::string n = "dec" + std::to_string(i);
            for (const auto& s : decoder_sources(i)) {
                const int ch = source_channels(s);
                branch_[static_cast<std::size_t>(i)].push_back(
                    this->add_conv(n + ".from_" + (s.kind == SkipSource::Kind::encoder ? "enc" : "dec") +
                                       std::to_string(s.level),
                                   ch, cat, 3));
            }
            fuse_[static_cast<std::size_t>(i)] = this->add_conv(n + ".fuse", up, up, 3);
        }
        heads_.push_back(this->add_conv("head0", up, spec.out_classes, 3, false));
        if (spec.deep_supervision) {
            for (int s = 1; s < D; ++s) {
                const int ch = s == D - 1 ? (spec.base_width << (D - 1)) : up;
                heads_.push_back(this->add_conv("head" + std::to_string(s), ch, spec.out_classes, 3, false));
            }
        }
    }

    [[nodiscard]] int head_count() const override { return static_cast<int>(heads_.size()); }
    [[nodiscard]] int head_scale(int head) const override { return 1 << head; }

    /// Connections feeding decoder stage `stage` (0 = finest), ordered by level.
    [[nodiscard]] std::vector<SkipSource> decoder_sources(int stage) const {
        const int D = this->spec_.depth;
        if (stage < 0 || stage > D - 2) throw ContractViolation("decoder stage out of range");
        std::vector<SkipSource> out;
        for (int j = 0; j < D; ++j) {
            SkipSource s;
            s.level = j;
            if (j <= stage) {
                s.kind = SkipSource::Kind::encoder;
                s.pool = 1 << (stage - j);
            } else {
                s.kind = SkipSource::Kind::decoder;
                s.upsample = 1 << (j - stage);
            }
            out.push_back(s);
        }
        return out;
    }

    std::vector<Id> forward(Tape<T>& tape, Id x, std::vector<Tensor<T>>* grads) const override {
        const int D = this->spec_.depth;
        std::vector<Id> enc(static_cast<std::size_t>(D));
        Id h = x;
        for (int l = 0; l < D; ++l) {
            if (l > 0) h = ops::maxpool(tape, h, 2);
            const auto& e = enc_[static_cast<std::size_t>(l)];
            h = ops::relu(tape, this->conv(tape, h, e[0], grads));
            h = ops::relu(tape, this->conv(tape, h, e[1], grads));
            enc[static_cast<std::size_t>(l)] = h;
        }
        std::vector<Id> dec(static_cast<std::size_t>(D));
        dec[static_cast<std::size_t>(D - 1)] = enc[static_cast<std::size_t>(D - 1)];
        for (int i = D - 2; i >= 0; --i) {
            const auto sources = decoder_sources(i);
            std::vector<Id> parts;
            parts.reserve(sources.size());
            for (std::size_t k = 0; k < sources.size(); ++k) {
                const auto& s = sources[k];
                const auto& bc = branch_[static_cast<std::size_t>(i)][k];
                Id part;
                if (s.kind == SkipSource::Kind::encoder) {
                    part = this->conv(tape, ops::maxpool(tape, enc[static_cast<std::size_t>(s.level)], s.pool), bc, grads);
                } else {
                    // Channel reduction runs at the source scale, then upsampling.
                    part = ops::upsample(tape, this->conv(tape, dec[static_cast<std::size_t>(s.level)], bc, grads),
                                         s.upsample);
                }
                parts.push_back(ops::relu(tape, part));
            }
            dec[static_cast<std::size_t>(i)] =
                ops::relu(tape, this->conv(tape, ops::concat(tape, parts), fuse_[static_cast<std::size_t>(i)], grads));
        }
        std::vector<Id> outs;
        for (std::size_t s = 0; s < heads_.size(); ++s)
            outs.push_back(ops::softmax_channels(tape, this->conv(tape, dec[s], heads_[s], grads)));
        return outs;
    }

    [[nodiscard]] std::unique_ptr<Base> clone() const override { return std::make_unique<UNet3Plus>(*this); }

private:
    [[nodiscard]] int source_channels(const SkipSource& s) const {
        const int D = this->spec_.depth;
        if (s.kind == SkipSource::Kind::encoder || s.level == D - 1) return this->spec_.base_width << s.level;
        return this->spec_.base_width * D;
    }

    std::vector<std::array<typename Base::ConvParams, 2>> enc_;
    std::vector<std::vector<typename Base::ConvParams>> branch_;
    std::vector<typename Base::ConvParams> fuse_;
    std::vector<typename Base::ConvParams> heads_;
};

template <class T>
std::unique_ptr<Network<T>> make_network(const ModelSpec& spec, std::uint64_t seed) {
    std::unique_ptr<Network<T>> net;
    if (spec.architecture == Architecture::sax_classifier)
        net = std::make_unique<SaxClassifierNet<T>>(spec);
    else
        net = std::make_unique<UNet3Plus<T>>(spec);
    net->initialize(seed);
    return net;
}

/// Main-head forward over a batch (N, C, H, W); returns (N, ...head shape).
template <class T>
Tensor<T> forward(const Network<T>& net, const Tensor<T>& batch) {
    if (batch.rank() != 4) throw ContractViolation("forward: batch must be (N, C, H, W)");
    const int n = batch.dim(0);
    const std::size_t per = batch.size() / static_cast<std::size_t>(n);
    Tensor<T> out;
    for (int i = 0; i < n; ++i) {
        Tensor<T> x({batch.dim(1), batch.dim(2), batch.dim(3)});
        std::copy_n(batch.data.begin() + static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(i)), per,
                    x.data.begin());
        Tensor<T> y = net.predict(x);
        if (i == 0) {
            std::vector<int> shape{n};
            shape.insert(shape.end(), y.shape.begin(), y.shape.end());
            out = Tensor<T>(shape);
        }
        std::copy(y.data.begin(), y.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(y.size() * i));
    }
    return out;
}

}  // namespace svpipe::nn
