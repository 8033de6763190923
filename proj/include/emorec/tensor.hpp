#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "emorec/errors.hpp"

namespace emorec {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1; // empty shape is a scalar
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

// Reverse-mode autograd tensor. Value-semantics handle over a shared node;
// copying a Tensor aliases the same storage and graph edge.
template <typename T>
class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad; // allocated on demand, same length as data
        bool requires_grad = false;
        bool freed = false; // backward closures released
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn;
        const char* op = "leaf";
    };

    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        node_->shape = std::move(shape);
        node_->data.assign(shape_numel(node_->shape), T(0));
        node_->requires_grad = requires_grad;
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (data.size() != shape_numel(shape))
            throw ValidationError("tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T v) { return from({}, {v}); }

    static Tensor full(Shape shape, T v, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        for (auto& x : t.node_->data) x = v;
        return t;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), requires_grad);
    }

    static Tensor ones(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T(1), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }
    T* ptr() { return node_->data.data(); }
    const T* ptr() const { return node_->data.data(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) {
        if (rg && !node_->parents.empty())
            throw ValidationError("set_requires_grad: only leaf tensors");
        node_->requires_grad = rg;
    }

    bool is_leaf() const { return node_->parents.empty(); }

    std::vector<T>& grad() {
        ensure_grad();
        return node_->grad;
    }
    const std::vector<T>& grad() const {
        const_cast<Tensor*>(this)->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        node_->grad.assign(node_->data.size(), T(0));
    }
    void ensure_grad() {
        if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), T(0));
    }

    T item() const {
        if (numel() != 1)
            throw ValidationError("item: tensor has " + std::to_string(numel()) + " elements");
        return node_->data[0];
    }

    // Copy of the values without any graph history.
    Tensor detach() const {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        return t;
    }

    std::shared_ptr<Node> node() const { return node_; }

    // Reverse-mode sweep from a scalar. Gradients accumulate into every
    // requires_grad tensor reachable from this node; calling twice without
    // zero_grad doubles them. free_graph releases the closures afterwards,
    // after which another backward on the same graph throws.
    void backward(bool free_graph = false) {
        if (numel() != 1)
            throw ValidationError("backward: loss must be scalar, got shape " + shape_str(shape()));
        if (node_->freed) throw NumericError("backward: graph already freed");

        std::vector<Node*> order; // topological, parents before children
        topo_sort(order);

        // Interior node grads are per-sweep scratch; only leaf grads accumulate
        // across repeated backward calls.
        for (Node* n : order)
            if (!n->parents.empty()) n->grad.assign(n->data.size(), T(0));
        node_->grad.assign(1, T(1));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
        if (free_graph) {
            for (Node* n : order) {
                if (n->backward_fn) {
                    n->backward_fn = nullptr;
                    n->parents.clear();
                    n->freed = true;
                }
            }
            node_->freed = true;
        }
    }

    // -- graph construction (used by ops) --
    static Tensor make_result(Shape shape, std::vector<T> data, const char* op,
                              std::vector<Tensor> inputs,
                              std::function<void(Node&)> backward_fn) {
        Tensor out = from(std::move(shape), std::move(data));
        out.node_->op = op;
        bool needs = false;
        for (const auto& in : inputs) needs = needs || in.node_->requires_grad;
        if (needs && grad_enabled()) {
            out.node_->requires_grad = true;
            out.node_->parents.reserve(inputs.size());
            for (auto& in : inputs) out.node_->parents.push_back(in.node_);
            out.node_->backward_fn = std::move(backward_fn);
        }
        return out;
    }

    static bool& grad_enabled() {
        thread_local bool enabled = true;
        return enabled;
    }

private:
    void topo_sort(std::vector<Node*>& order) const {
        std::unordered_set<Node*> seen;
        // iterative post-order DFS
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                Node* p = n->parents[idx++].get();
                if (seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

// Scoped guard disabling graph recording (evaluation passes).
struct NoGradGuard {
    NoGradGuard() : prev_(Tensor<float>::grad_enabled()), prev_d_(Tensor<double>::grad_enabled()) {
        Tensor<float>::grad_enabled() = false;
        Tensor<double>::grad_enabled() = false;
    }
    ~NoGradGuard() {
        Tensor<float>::grad_enabled() = prev_;
        Tensor<double>::grad_enabled() = prev_d_;
    }
    bool prev_, prev_d_;
};

template <typename T>
void accumulate_grad(typename Tensor<T>::Node& node, std::size_t parent_index,
                     const std::vector<T>& contribution) {
    auto& p = *node.parents[parent_index];
    if (!p.requires_grad) return;
    if (p.grad.size() != p.data.size()) p.grad.assign(p.data.size(), T(0));
    for (std::size_t i = 0; i < contribution.size(); ++i) p.grad[i] += contribution[i];
}

} // namespace emorec
