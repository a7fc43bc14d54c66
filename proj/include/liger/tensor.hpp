// Copyright 2026 The Liger Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "liger/errors.hpp"
#include "liger/rng.hpp"

namespace liger {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {
inline thread_local bool grad_mode = true;
} // namespace detail

inline bool grad_mode_enabled() noexcept { return detail::grad_mode; }

/// Disables tape recording for its lifetime (inference, optimizer updates).
class NoGradGuard {
public:
    NoGradGuard() noexcept : previous_(detail::grad_mode) { detail::grad_mode = false; }
    ~NoGradGuard() { detail::grad_mode = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // sized like data iff requires_grad and touched by backward
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    // Propagates this node's grad into its parents' grads.
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), T(0));
        }
    }
};

/// Dense row-major tensor handle. Copies share storage, like a reference;
/// use `clone()` for a deep copy.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>);

public:
    using value_type = T;
    using NodePtr = std::shared_ptr<Node<T>>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor from(Shape shape, std::vector<T> values) {
        if (numel_of(shape) != values.size()) {
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        auto node = std::make_shared<Node<T>>();
        node->shape = std::move(shape);
        node->data = std::move(values);
        return Tensor(std::move(node));
    }

    static Tensor full(Shape shape, T value) {
        const std::size_t n = numel_of(shape);
        return from(std::move(shape), std::vector<T>(n, value));
    }

    static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
    static Tensor scalar(T value) { return from({}, {value}); }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
        std::vector<T> values(numel_of(shape));
        for (auto& v : values) {
            v = static_cast<T>(rng.normal(0.0, stddev));
        }
        return from(std::move(shape), std::move(values));
    }

    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
        std::vector<T> values(numel_of(shape));
        for (auto& v : values) {
            v = static_cast<T>(rng.uniform(lo, hi));
        }
        return from(std::move(shape), std::move(values));
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const NodePtr& node() const noexcept { return node_; }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::ptrdiff_t axis) const { return node_->shape.at(normalize_axis(axis)); }
    std::size_t numel() const { return node_->data.size(); }
    std::size_t bytes() const { return numel() * sizeof(T); }

    std::span<const T> data() const { return node_->data; }
    std::span<T> mutable_data() { return node_->data; }
    const std::vector<T>& values() const { return node_->data; }

    T item() const {
        if (numel() != 1) {
            throw ContractError("item() on tensor of shape " + shape_str(shape()));
        }
        return node_->data[0];
    }

    T at(std::initializer_list<std::size_t> index) const { return node_->data[offset(index)]; }

    bool requires_grad() const { return node_ && node_->requires_grad; }

    /// Marks a leaf as trainable. Allocates the gradient buffer.
    Tensor& set_requires_grad(bool on) {
        if (!node_->is_leaf) {
            throw ContractError("requires_grad can only be toggled on leaf tensors");
        }
        node_->requires_grad = on;
        if (on) {
            node_->ensure_grad();
        } else {
            node_->grad.clear();
        }
        return *this;
    }

    bool has_grad() const { return node_ && node_->requires_grad && node_->grad.size() == numel(); }

    std::span<const T> grad() const {
        if (!has_grad()) {
            throw ContractError("tensor has no gradient");
        }
        return node_->grad;
    }

    std::span<T> mutable_grad() {
        if (!has_grad()) {
            throw ContractError("tensor has no gradient");
        }
        return node_->grad;
    }

    void zero_grad() {
        if (node_ && node_->requires_grad) {
            node_->grad.assign(numel(), T(0));
        }
    }

    /// New leaf sharing no tape with this tensor; receives no gradient.
    Tensor detach() const { return from(shape(), node_->data); }

    Tensor clone() const {
        Tensor copy = from(shape(), node_->data);
        if (requires_grad() && node_->is_leaf) {
            copy.set_requires_grad(true);
        }
        return copy;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(numel());
        std::transform(node_->data.begin(), node_->data.end(), out.begin(),
                       [](T v) { return static_cast<U>(v); });
        return Tensor<U>::from(shape(), std::move(out));
    }

    /// Reverse-mode sweep from a scalar loss. Every reachable leaf with
    /// requires_grad accumulates dLoss/dLeaf; the recorded tape is released.
    void backward() {
        if (!node_ || numel() != 1) {
            throw ContractError("backward() needs a scalar loss, got shape " +
                                (node_ ? shape_str(shape()) : std::string("<undefined>")));
        }
        if (!node_->requires_grad) {
            throw ContractError("loss is not connected to any tensor that requires grad");
        }
        std::vector<Node<T>*> order = topological_order();
        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node<T>* n = *it;
            if (n->backward_fn) {
                n->ensure_grad();
                n->backward_fn(*n);
            }
        }
        for (Node<T>* n : order) {
            if (!n->is_leaf) {
                n->backward_fn = nullptr;
                n->parents.clear();
                n->grad.clear();
                n->grad.shrink_to_fit();
            }
        }
    }

    std::size_t normalize_axis(std::ptrdiff_t axis) const {
        const auto r = static_cast<std::ptrdiff_t>(rank());
        const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
        if (a < 0 || a >= r) {
            throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                                 shape_str(shape()));
        }
        return static_cast<std::size_t>(a);
    }

private:
    std::size_t offset(std::initializer_list<std::size_t> index) const {
        if (index.size() != rank()) {
            throw DimensionError("index rank mismatch for shape " + shape_str(shape()));
        }
        std::size_t off = 0;
        std::size_t axis = 0;
        for (std::size_t i : index) {
            if (i >= shape()[axis]) {
                throw DimensionError("index out of range for shape " + shape_str(shape()));
            }
            off = off * shape()[axis] + i;
            ++axis;
        }
        return off;
    }

    std::vector<Node<T>*> topological_order() const {
        std::vector<Node<T>*> order;
        std::unordered_set<Node<T>*> visited;
        std::vector<std::pair<Node<T>*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node<T>* p = n->parents[next++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        return order;
    }

    NodePtr node_;
};

namespace detail {

/// Creates an op result. The backward closure is attached only when grad mode
/// is on and some input requires grad, so inference builds no tape.
template <typename T, typename Fn>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<Tensor<T>> inputs,
                      Fn&& backward) {
    Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(data));
    if (!grad_mode_enabled()) {
        return out;
    }
    bool needs = false;
    for (const auto& in : inputs) {
        needs = needs || in.requires_grad();
    }
    if (!needs) {
        return out;
    }
    auto& node = *out.node();
    node.requires_grad = true;
    node.is_leaf = false;
    for (const auto& in : inputs) {
        node.parents.push_back(in.node());
    }
    node.backward_fn = std::forward<Fn>(backward);
    return out;
}

template <typename T, typename Fn>
Tensor<T> make_result_n(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                        Fn&& backward) {
    Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(data));
    if (!grad_mode_enabled()) {
        return out;
    }
    bool needs = std::any_of(inputs.begin(), inputs.end(),
                             [](const Tensor<T>& t) { return t.requires_grad(); });
    if (!needs) {
        return out;
    }
    auto& node = *out.node();
    node.requires_grad = true;
    node.is_leaf = false;
    for (const auto& in : inputs) {
        node.parents.push_back(in.node());
    }
    node.backward_fn = std::forward<Fn>(backward);
    return out;
}

/// Gradient buffer of parent i, or nullptr when that parent takes no gradient.
template <typename T>
T* parent_grad(Node<T>& self, std::size_t i) {
    Node<T>& p = *self.parents[i];
    if (!p.requires_grad) {
        return nullptr;
    }
    p.ensure_grad();
    return p.grad.data();
}

} // namespace detail

} // namespace liger
