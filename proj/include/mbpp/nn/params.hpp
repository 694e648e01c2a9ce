#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mbpp/core/autograd.hpp"
#include "mbpp/core/rng.hpp"

namespace mbpp::nn {

/// Ordered registry of named trainable leaves. Names are hierarchical
/// ("mod0.enc.block1.attn.q.w") so parameter groups can be selected by
/// prefix, e.g. when freezing everything outside the classification head.
class ParamSet {
public:
    Var add(std::string name, Tensor init) {
        Var v = make_leaf(std::move(init), /*requires_grad=*/true);
        items_.emplace_back(std::move(name), v);
        return v;
    }

    const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

    const Var* find(const std::string& name) const {
        for (const auto& [n, v] : items_) {
            if (n == name) return &v;
        }
        return nullptr;
    }

    void zero_grad() {
        for (auto& [name, v] : items_) v->grad = Tensor();
    }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& [name, v] : items_) n += v->value.size();
        return n;
    }

    /// Deep copy of all parameter values, aligned with items() order.
    std::vector<Tensor> snapshot() const {
        std::vector<Tensor> out;
        out.reserve(items_.size());
        for (const auto& [name, v] : items_) out.push_back(v->value);
        return out;
    }

    void restore(const std::vector<Tensor>& snap) {
        if (snap.size() != items_.size()) throw ContractError("ParamSet::restore: size mismatch");
        for (std::size_t i = 0; i < items_.size(); ++i) items_[i].second->value = snap[i];
    }

private:
    std::vector<std::pair<std::string, Var>> items_;
};

namespace init {

inline Tensor trunc_normal(std::vector<std::size_t> shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.truncated_normal(stddev);
    return t;
}

inline Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

inline Tensor ones(std::vector<std::size_t> shape) { return Tensor(std::move(shape), 1.0); }

}  // namespace init

}  // namespace mbpp::nn
