#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "futh/tensor.hpp"

namespace futh {

// One recorded operation (or leaf) in the reverse-mode graph. Interior nodes
// are created by the ops:: builders; leaves are inputs or parameters.
template <class T>
struct NodeT {
    TensorT<T> value;
    TensorT<T> grad;  // allocated lazily; parameters keep it allocated permanently

    std::vector<std::shared_ptr<NodeT<T>>> inputs;
    std::function<void(NodeT<T>&)> backward_op;  // accumulates into inputs' grads
    const char* op = "leaf";

    bool requires_grad = false;
    bool is_param = false;
    bool frozen = false;       // parameters only; frozen => requires_grad stays false
    bool backward_done = false;
    std::string name;   // parameters only
    std::string group;  // parameter group tag for phase freezing

    void ensure_grad() {
        if (!grad.same_shape(value)) grad = TensorT<T>::zeros(value.shape());
    }
    void zero_grad() {
        ensure_grad();
        grad.fill(T(0));
    }
    void set_frozen(bool f) {
        frozen = f;
        requires_grad = is_param && !f;
    }
};

template <class T>
using VarT = std::shared_ptr<NodeT<T>>;

using Var = VarT<float>;

// Leaf that participates in differentiation (used by the gradient checker to
// treat op inputs as variables).
template <class T>
VarT<T> make_leaf(TensorT<T> value, bool requires_grad = false) {
    auto n = std::make_shared<NodeT<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return n;
}

// Plain data input; gradients never flow into it.
template <class T>
VarT<T> make_input(TensorT<T> value) {
    return make_leaf<T>(std::move(value), false);
}

template <class T>
VarT<T> make_param(std::string name, TensorT<T> value, std::string group = "") {
    auto n = make_leaf<T>(std::move(value), true);
    n->is_param = true;
    n->name = std::move(name);
    n->group = std::move(group);
    n->ensure_grad();
    return n;
}

namespace detail {

template <class T>
void topo_collect(const VarT<T>& root, std::vector<NodeT<T>*>& order) {
    std::unordered_set<NodeT<T>*> seen;
    std::vector<std::pair<NodeT<T>*, std::size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            NodeT<T>* child = node->inputs[next++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Reverse accumulation from a scalar loss node. Writes gradients of every
// reachable node with requires_grad set; frozen parameters are skipped because
// they never request gradients.
template <class T>
void backward(const VarT<T>& root) {
    if (!root) throw InputError("backward: null root");
    if (root->value.numel() != 1) throw InputError("backward: loss must be a scalar");
    if (root->backward_done) throw StateError("backward: called twice on the same recorded graph");
    if (!root->requires_grad)
        throw StateError("backward: loss does not depend on any trainable parameter");

    std::vector<NodeT<T>*> order;  // children before parents
    detail::topo_collect(root, order);

    root->ensure_grad();
    root->grad.fill(T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT<T>* n = *it;
        if (n->backward_op && n->grad.same_shape(n->value)) n->backward_op(*n);
    }
    root->backward_done = true;
}

}  // namespace futh
