#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mbpp/nn/params.hpp"

namespace mbpp::train {

enum class OptimKind { adamw, rmsprop, adam };

inline const char* to_string(OptimKind k) {
    switch (k) {
        case OptimKind::adamw: return "adamw";
        case OptimKind::rmsprop: return "rmsprop";
        case OptimKind::adam: return "adam";
    }
    return "?";
}

inline OptimKind optimizer_from_string(const std::string& s) {
    for (OptimKind k : {OptimKind::adamw, OptimKind::rmsprop, OptimKind::adam}) {
        if (s == to_string(k)) return k;
    }
    throw ValidationError("unknown optimizer '" + s + "'");
}

struct OptimConfig {
    OptimKind kind = OptimKind::adamw;
    double lr = 1e-3;
    double weight_decay = 0.0;
};

/// The three update rules behind the search space. Adam and RMSprop apply
/// weight decay as L2 added to the gradient; AdamW decays decoupled from the
/// moment estimates (theta -= lr * wd * theta).
class Optimizer {
public:
    Optimizer(OptimConfig cfg, const nn::ParamSet& params) : cfg_(cfg) {
        if (cfg_.lr <= 0.0) throw ValidationError("Optimizer: lr must be > 0");
        if (cfg_.weight_decay < 0.0) throw ValidationError("Optimizer: weight_decay must be >= 0");
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& [name, p] : params.items()) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }

    /// One update from the gradients currently held by the parameters.
    /// trainable[i] == false leaves both the value and the state of slot i
    /// untouched. Gradients are not cleared.
    void step(nn::ParamSet& params, const std::vector<bool>& trainable) {
        if (params.size() != m_.size() || trainable.size() != m_.size()) {
            throw ContractError("Optimizer::step: parameter count changed");
        }
        ++t_;
        constexpr double beta1 = 0.9, beta2 = 0.999, rho = 0.99, eps = 1e-8;
        const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(t_));

        for (std::size_t i = 0; i < m_.size(); ++i) {
            if (!trainable[i]) continue;
            Node& p = *params.items()[i].second;
            const bool has_grad = !p.grad.empty();
            Tensor& value = p.value;
            Tensor& m = m_[i];
            Tensor& v = v_[i];

            switch (cfg_.kind) {
                case OptimKind::adam:
                case OptimKind::adamw: {
                    const bool decoupled = cfg_.kind == OptimKind::adamw;
                    for (std::size_t j = 0; j < value.size(); ++j) {
                        double g = has_grad ? p.grad[j] : 0.0;
                        if (!decoupled) g += cfg_.weight_decay * value[j];
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                        const double mhat = m[j] / bias1;
                        const double vhat = v[j] / bias2;
                        if (decoupled) value[j] -= cfg_.lr * cfg_.weight_decay * value[j];
                        value[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + eps);
                    }
                    break;
                }
                case OptimKind::rmsprop: {
                    for (std::size_t j = 0; j < value.size(); ++j) {
                        const double g = (has_grad ? p.grad[j] : 0.0) + cfg_.weight_decay * value[j];
                        v[j] = rho * v[j] + (1.0 - rho) * g * g;
                        value[j] -= cfg_.lr * g / (std::sqrt(v[j]) + eps);
                    }
                    break;
                }
            }
        }
    }

    std::size_t steps_taken() const { return t_; }

private:
    OptimConfig cfg_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace mbpp::train
