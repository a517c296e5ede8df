#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "svpipe/nn/tensor.hpp"

namespace svpipe::nn {

/// Reverse-mode recording of a single forward pass.
///
/// Every operation pushes its output value and, when recording, a closure that
/// propagates the node's gradient into its inputs (and into parameter gradient
/// buffers held outside the tape). Node values are kept for the tape's
/// lifetime so backward closures can read them.
template <class T>
class Tape {
public:
    using Id = std::size_t;
    using Backward = std::function<void(Id self)>;

    explicit Tape(bool record = true) : record_(record) {}

    [[nodiscard]] bool recording() const { return record_; }

    Id input(Tensor<T> value, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(value), {}, requires_grad && record_, {}});
        return nodes_.size() - 1;
    }

    Id push(Tensor<T> value, Backward back) {
        const bool rg = record_ && static_cast<bool>(back);
        nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(back) : Backward{}});
        return nodes_.size() - 1;
    }

    [[nodiscard]] const Tensor<T>& value(Id id) const { return nodes_.at(id).value; }
    [[nodiscard]] bool requires_grad(Id id) const { return nodes_.at(id).requires_grad; }
    [[nodiscard]] bool has_grad(Id id) const { return !nodes_.at(id).grad.data.empty(); }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    /// Gradient buffer of a node, zero-initialized on first access.
    Tensor<T>& grad(Id id) {
        Node& n = nodes_.at(id);
        if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape, T(0));
        return n.grad;
    }

    /// Runs all recorded closures in reverse order. Seed output gradients with
    /// grad() before calling.
    void backward() {
        if (!record_) throw ContractViolation("backward() on a non-recording tape");
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.back && !n.grad.data.empty()) n.back(i);
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        Backward back;
    };
    bool record_;
    std::vector<Node> nodes_;
};

/// Gradient sink for a parameter; `grad` is null during inference.
template <class T>
struct ParamRef {
    const Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;
};

}  // namespace svpipe::nn
