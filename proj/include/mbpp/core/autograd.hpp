#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mbpp/core/error.hpp"
#include "mbpp/core/tensor.hpp"

namespace mbpp {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in the computation graph. Operations allocate a fresh Node per
/// forward evaluation; parameters are long-lived leaf nodes whose grad field
/// accumulates across backward passes until zeroed.
struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<Var> inputs;
    std::function<void(Node&)> backward;  // reads this->grad, accumulates into inputs

    Tensor& ensure_grad() {
        if (grad.empty()) grad = Tensor(value.shape());
        return grad;
    }
};

inline Var make_leaf(Tensor value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

/// Creates an op node. When no input requires grad, the inputs and backward
/// closure are dropped so evaluation-only passes do not grow a tape.
inline Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& in : inputs) {
        if (in->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) {
        n->inputs = std::move(inputs);
        n->backward = std::move(backward);
    }
    return n;
}

/// Reverse-mode sweep from a scalar root. Gradients accumulate into every
/// reachable node with requires_grad set.
inline void backward(const Var& root) {
    if (root->value.size() != 1) {
        throw ContractError("backward requires a scalar root, got shape " + root->value.shape_str());
    }

    // Iterative post-order topological sort.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

}  // namespace mbpp
