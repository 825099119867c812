#ifndef AULLMXX_CORE_AUTOGRAD_HPP
#define AULLMXX_CORE_AUTOGRAD_HPP

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "aullmxx/core/tensor.hpp"

namespace aullmxx {

// Reverse-mode tape. Nodes are created in forward order, so a descending walk
// over creation indices is already a topological order for backward.
template <typename Real>
struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;  // allocated on demand, same shape as value
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // pulls this->grad into parents
    bool requires_grad{false};
    bool grad_alloc{false};
    std::uint64_t order{0};
    std::string name;  // set for named parameters only

    static std::uint64_t next_order() {
        static std::atomic<std::uint64_t> counter{0};
        return counter.fetch_add(1, std::memory_order_relaxed);
    }

    void ensure_grad() {
        if (!grad_alloc) {
            grad = Tensor<Real>(value.shape());
            grad_alloc = true;
        }
    }

    void zero_grad() {
        if (grad_alloc) grad.fill(Real(0));
    }
};

template <typename Real>
using Var = std::shared_ptr<Node<Real>>;

template <typename Real>
Var<Real> make_leaf(Tensor<Real> value, bool requires_grad = false, std::string name = {}) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->order = Node<Real>::next_order();
    n->name = std::move(name);
    return n;
}

template <typename Real>
Var<Real> constant(Tensor<Real> value) {
    return make_leaf(std::move(value), false);
}

template <typename Real>
Var<Real> make_node(Tensor<Real> value, std::vector<Var<Real>> parents,
                    std::function<void(Node<Real>&)> backprop) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p && p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) n->backprop = std::move(backprop);
    n->order = Node<Real>::next_order();
    return n;
}

// Value copy with no gradient link; phase-2 CCR reuses cached activations
// through this.
template <typename Real>
Var<Real> detach(const Var<Real>& v) {
    return make_leaf(Tensor<Real>(v->value), false);
}

template <typename Real>
void accumulate(const Var<Real>& p, const Tensor<Real>& contribution) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    Real* g = p->grad.ptr();
    const Real* c = contribution.ptr();
    for (std::size_t i = 0; i < p->grad.size(); ++i) g[i] += c[i];
}

// Backpropagate from a scalar root. Gradients accumulate into every reachable
// node with requires_grad; leaves keep them until zero_grad.
template <typename Real>
void backward(const Var<Real>& root) {
    if (root->value.size() != 1) throw ShapeError("backward() root must be scalar");
    if (!root->requires_grad) return;

    std::vector<Node<Real>*> reachable;
    std::unordered_set<Node<Real>*> seen;
    std::vector<Node<Real>*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node<Real>* n = stack.back();
        stack.pop_back();
        reachable.push_back(n);
        for (const auto& p : n->parents) {
            if (p && p->requires_grad && seen.insert(p.get()).second) {
                stack.push_back(p.get());
            }
        }
    }
    std::sort(reachable.begin(), reachable.end(),
              [](const Node<Real>* a, const Node<Real>* b) { return a->order > b->order; });

    root->ensure_grad();
    root->grad[0] += Real(1);
    for (Node<Real>* n : reachable) {
        if (n->backprop && n->grad_alloc) n->backprop(*n);
    }
}

}  // namespace aullmxx

#endif  // AULLMXX_CORE_AUTOGRAD_HPP
