#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "actalign/error.hpp"
#include "actalign/rng.hpp"

namespace actalign {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw dim_error("shape dimensions must be positive");
        n *= static_cast<size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ')';
    return os.str();
}

// One recorded node of the eagerly-built computation graph. Values are dense
// 64-bit floats in row-major order; the grad buffer exists only after a
// backward pass reached the node, and only if the node requires gradients.
struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<Node>;

// Value-semantics handle over a graph node. Copies share the node; the graph
// is held alive by parent pointers and released when handles go out of scope
// (interior edges are additionally cut at the end of backward()).
class Array {
public:
    Array() = default;
    explicit Array(NodePtr n) : node_(std::move(n)) {}

    static Array from(Shape shape, std::vector<double> values) {
        size_t n = shape_numel(shape);
        if (n != values.size())
            throw dim_error("value count " + std::to_string(values.size()) +
                            " does not match shape " + shape_str(shape));
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->values = std::move(values);
        return Array(node);
    }

    static Array zeros(Shape shape) {
        size_t n = shape_numel(shape);
        return from(std::move(shape), std::vector<double>(n, 0.0));
    }

    static Array full(Shape shape, double v) {
        size_t n = shape_numel(shape);
        return from(std::move(shape), std::vector<double>(n, v));
    }

    static Array scalar(double v) { return from({1}, {v}); }

    static Array randn(Shape shape, Rng& rng, double stddev = 1.0) {
        size_t n = shape_numel(shape);
        std::vector<double> vals(n);
        for (auto& x : vals) x = rng.normal() * stddev;
        return from(std::move(shape), std::move(vals));
    }

    bool valid() const { return node_ != nullptr; }
    const NodePtr& node() const { return node_; }

    const Shape& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    int dim(size_t i) const { return node_->shape.at(i); }
    size_t size() const { return node_->values.size(); }

    std::span<const double> values() const { return node_->values; }
    /// Mutable access to leaf values (parameter updates). Mutating an interior
    /// node of a live graph is a logic error; graphs are rebuilt per step.
    std::span<double> mut_values() { return node_->values; }

    bool requires_grad() const { return node_->requires_grad; }
    Array& set_requires_grad(bool b) {
        node_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    double item() const {
        if (size() != 1)
            throw dim_error("item() on non-scalar array of shape " + shape_str(shape()));
        return node_->values[0];
    }

    double at(size_t i) const { return node_->values.at(i); }
    double at(size_t i, size_t j) const {
        return node_->values.at(i * static_cast<size_t>(shape().back()) + j);
    }

    /// Cuts the value out of the recorded graph: same numbers, no parents,
    /// no gradient flow.
    Array detach() const {
        auto node = std::make_shared<Node>();
        node->shape = node_->shape;
        node->values = node_->values;
        node->op = "detach";
        return Array(node);
    }

    /// Reverse-mode sweep from this (single-element) root. Visits each node
    /// exactly once in reverse topological order, then frees interior graph
    /// edges. Grad buffers are allocated only for nodes that require them.
    void backward() {
        if (size() != 1)
            throw dim_error("backward() requires a single-element root, got " +
                            shape_str(shape()));
        if (!node_->requires_grad)
            throw value_error("backward() on a root that does not require gradients");
        if (!std::isfinite(node_->values[0]))
            throw numeric_error("backward() on a non-finite loss value");

        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        topo(node_.get(), seen, order);

        node_->ensure_grad();
        node_->grad[0] = 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward_fn && n->requires_grad && !n->grad.empty()) n->backward_fn(*n);
        }
        // The tape is single-use: drop interior edges so the step's graph frees
        // as soon as intermediate handles go away. Leaf values and grads stay.
        for (Node* n : order) {
            n->backward_fn = nullptr;
            n->parents.clear();
        }
    }

private:
    static void topo(Node* n, std::unordered_set<Node*>& seen, std::vector<Node*>& order) {
        if (seen.count(n)) return;
        seen.insert(n);
        for (auto& p : n->parents) topo(p.get(), seen, order);
        order.push_back(n);
    }

    NodePtr node_;
};

namespace detail {

inline NodePtr make_op_node(Shape shape, const char* op,
                            std::vector<NodePtr> parents) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values.resize(shape_numel(node->shape));
    node->op = op;
    for (auto& p : parents)
        if (p->requires_grad) node->requires_grad = true;
    node->parents = std::move(parents);
    return node;
}

/// Adds `src` into the parent's grad buffer, allocating it on first touch.
inline void accumulate(Node& parent, std::span<const double> src) {
    parent.ensure_grad();
    for (size_t i = 0; i < src.size(); ++i) parent.grad[i] += src[i];
}

}  // namespace detail

/// Ordered, named collection of trainable leaves. Iteration order is the
/// registration order, which keeps updates and checkpoints deterministic.
struct ParamSet {
    std::vector<std::pair<std::string, Array>> items;

    Array& add(const std::string& name, Array a) {
        a.set_requires_grad(true);
        items.emplace_back(name, std::move(a));
        return items.back().second;
    }

    Array* find(const std::string& name) {
        for (auto& [n, a] : items)
            if (n == name) return &a;
        return nullptr;
    }
};

}  // namespace actalign
