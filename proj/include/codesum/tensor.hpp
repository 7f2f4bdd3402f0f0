#pragma once

// Dense tensor with reverse-mode automatic differentiation.
//
// A Tensor is a value-semantics handle onto a graph node.  Ops (ops.hpp)
// record parent links and a backprop closure on every node they create while
// gradient mode is enabled; Tensor::backward() replays the graph in reverse
// topological order.  Graph construction and backward are single-threaded;
// with a fixed creation order the whole pass is bitwise deterministic.

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "codesum/common.hpp"

namespace codesum {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily; same length as value once present
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;  // distributes this->grad into parents

    bool is_leaf() const { return parents.empty(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

// Disables graph recording in scope (inference / oracle evaluation).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), 0.0, requires_grad);
    }

    static Tensor filled(Shape shape, double v, bool requires_grad = false) {
        auto n = std::make_shared<detail::Node>();
        n->value.assign(shape_numel(shape), v);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw contract_error("Tensor::from: shape " + shape_str(shape) + " does not match data length " +
                                 std::to_string(data.size()));
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return node()->shape; }
    std::size_t numel() const { return node()->value.size(); }
    std::size_t dim(std::size_t i) const { return node()->shape.at(i); }

    std::vector<double>& values() { return node()->value; }
    const std::vector<double>& values() const { return node()->value; }

    double at(std::size_t i) const { return node()->value.at(i); }

    // 2-D convenience accessor, row-major
    double operator()(std::size_t r, std::size_t c) const {
        const auto& s = node()->shape;
        if (s.size() != 2) throw contract_error("Tensor::operator(): tensor is not 2-D");
        return node()->value[r * s[1] + c];
    }

    double item() const {
        if (numel() != 1) throw contract_error("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
        return node()->value[0];
    }

    bool requires_grad() const { return node()->requires_grad; }

    bool has_grad() const { return !node()->grad.empty(); }

    const std::vector<double>& grad() const {
        if (node()->grad.empty())
            throw contract_error("Tensor::grad: gradient not populated; call backward() first");
        return node()->grad;
    }

    void zero_grad() {
        node()->ensure_grad();
        std::fill(node()->grad.begin(), node()->grad.end(), 0.0);
    }

    // Copy of the values with no graph attachment.
    Tensor detach() const {
        auto n = std::make_shared<detail::Node>();
        n->shape = node()->shape;
        n->value = node()->value;
        return Tensor(std::move(n));
    }

    // Reverse pass from a scalar loss.  Gradients of intermediate nodes are
    // recomputed from scratch; leaf gradients accumulate, so repeated calls
    // without zero_grad() add up.
    void backward() const {
        detail::Node* root = node();
        if (root->value.size() != 1)
            throw contract_error("backward: loss must be a scalar, got shape " + shape_str(root->shape));

        // post-order DFS: parents end up before their consumers
        std::vector<detail::Node*> topo;
        std::unordered_set<detail::Node*> seen;
        struct Frame {
            detail::Node* n;
            std::size_t next;
        };
        std::vector<Frame> stack;
        stack.push_back({root, 0});
        seen.insert(root);
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.n->parents.size()) {
                detail::Node* p = f.n->parents[f.next++].get();
                if (seen.insert(p).second) stack.push_back({p, 0});
            } else {
                topo.push_back(f.n);
                stack.pop_back();
            }
        }

        for (detail::Node* n : topo) {
            if (!n->is_leaf()) {
                n->ensure_grad();
                std::fill(n->grad.begin(), n->grad.end(), 0.0);
            }
        }
        root->ensure_grad();
        root->grad[0] += 1.0;

        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            detail::Node* n = *it;
            if (n->backprop) n->backprop(*n);
        }
    }

    detail::Node* node() const {
        if (!node_) throw contract_error("Tensor: undefined");
        return node_.get();
    }

    const detail::NodePtr& node_ptr() const { return node_; }

private:
    detail::NodePtr node_;
};

}  // namespace codesum
