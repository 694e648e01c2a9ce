#pragma once

#include <cmath>
#include <vector>

#include "mbpp/core/error.hpp"
#include "mbpp/core/tensor.hpp"

namespace mbpp::fusion {

// Decision-level fusion of per-modality logits: plain summation and the
// evidential route that maps logits to Dirichlet evidence and combines
// opinions with the reduced Dempster rule over singleton beliefs plus
// global uncertainty.

/// Per-modality logits, all [B, K].
struct LogitSet {
    std::vector<Tensor> per_modality;

    void validate() const {
        if (per_modality.empty()) throw ValidationError("LogitSet: at least one modality required");
        const auto& ref = per_modality[0].shape();
        if (ref.size() != 2) throw ShapeError("LogitSet: logits must be [B, K]");
        for (const auto& t : per_modality) {
            if (t.shape() != ref) {
                throw ShapeError("LogitSet: shape mismatch " + t.shape_str() + " vs " +
                                 Tensor::shape_string(ref));
            }
        }
    }

    std::size_t batch() const { return per_modality[0].dim(0); }
    std::size_t n_classes() const { return per_modality[0].dim(1); }
};

/// l_fused = sum_i l_i, elementwise and order-independent.
inline Tensor logit_sum(const LogitSet& ls) {
    ls.validate();
    Tensor out = ls.per_modality[0];
    for (std::size_t m = 1; m < ls.per_modality.size(); ++m) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += ls.per_modality[m][i];
    }
    return out;
}

/// Overflow-safe softplus: log(1 + exp(x)).
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// alpha_k = softplus(l_k) + 1; each entry is >= 1.
inline std::vector<double> evidence_from_logits(const std::vector<double>& logits) {
    std::vector<double> alpha(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) alpha[i] = softplus(logits[i]) + 1.0;
    return alpha;
}

/// Subjective-logic opinion: belief masses plus global uncertainty, with
/// sum(b) + u == 1.
struct EvidenceOpinion {
    std::vector<double> belief;
    double uncertainty = 1.0;

    std::size_t n_classes() const { return belief.size(); }
};

/// b_k = (alpha_k - 1) / S, u = K / S with S = sum(alpha).
inline EvidenceOpinion opinion_from_alpha(const std::vector<double>& alpha) {
    if (alpha.empty()) throw ValidationError("opinion_from_alpha: empty alpha");
    double s = 0.0;
    for (double a : alpha) {
        if (!(a >= 1.0)) throw ValidationError("opinion_from_alpha: alpha entries must be >= 1");
        s += a;
    }
    EvidenceOpinion o;
    o.belief.resize(alpha.size());
    for (std::size_t i = 0; i < alpha.size(); ++i) o.belief[i] = (alpha[i] - 1.0) / s;
    o.uncertainty = static_cast<double>(alpha.size()) / s;
    return o;
}

/// Inverse map: S = K / u, alpha_k = b_k * S + 1.
inline std::vector<double> alpha_from_opinion(const EvidenceOpinion& o) {
    if (o.uncertainty <= 0.0) throw ValidationError("alpha_from_opinion: uncertainty must be > 0");
    const double s = static_cast<double>(o.n_classes()) / o.uncertainty;
    std::vector<double> alpha(o.n_classes());
    for (std::size_t i = 0; i < alpha.size(); ++i) alpha[i] = o.belief[i] * s + 1.0;
    return alpha;
}

constexpr double kTotalConflictEps = 1e-12;

/// Reduced Dempster combination over singleton beliefs and uncertainty:
///   C    = sum_{i != j} b1_i b2_j
///   b_k  = (b1_k b2_k + b1_k u2 + b2_k u1) / (1 - C)
///   u    = u1 u2 / (1 - C)
inline EvidenceOpinion dempster_combine(const EvidenceOpinion& o1, const EvidenceOpinion& o2) {
    if (o1.n_classes() != o2.n_classes()) {
        throw ShapeError("dempster_combine: class counts differ");
    }
    const std::size_t k = o1.n_classes();
    double sum1 = 0.0, sum2 = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        sum1 += o1.belief[i];
        sum2 += o2.belief[i];
        dot += o1.belief[i] * o2.belief[i];
    }
    const double conflict = sum1 * sum2 - dot;
    const double denom = 1.0 - conflict;
    if (denom < kTotalConflictEps) {
        throw ConflictError("dempster_combine: total conflict between opinions");
    }
    EvidenceOpinion out;
    out.belief.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.belief[i] = (o1.belief[i] * o2.belief[i] + o1.belief[i] * o2.uncertainty +
                         o2.belief[i] * o1.uncertainty) /
                        denom;
    }
    out.uncertainty = o1.uncertainty * o2.uncertainty / denom;
    return out;
}

struct EvidentialFusion {
    Tensor alpha;                     // [B, K]
    Tensor probs;                     // [B, K], Dirichlet mean alpha / S
    std::vector<double> uncertainty;  // [B]
};

/// Per sample: map each modality's logits to evidence, left-fold the
/// Dempster combination over modalities in input order, report the Dirichlet
/// mean as class probabilities.
inline EvidentialFusion fuse_evidential(const LogitSet& ls) {
    ls.validate();
    const std::size_t b = ls.batch(), k = ls.n_classes();
    EvidentialFusion out;
    out.alpha = Tensor({b, k});
    out.probs = Tensor({b, k});
    out.uncertainty.resize(b);

    std::vector<double> row(k);
    for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t i = 0; i < k; ++i) row[i] = ls.per_modality[0].at(s, i);
        EvidenceOpinion fused = opinion_from_alpha(evidence_from_logits(row));
        for (std::size_t m = 1; m < ls.per_modality.size(); ++m) {
            for (std::size_t i = 0; i < k; ++i) row[i] = ls.per_modality[m].at(s, i);
            fused = dempster_combine(fused, opinion_from_alpha(evidence_from_logits(row)));
        }
        const std::vector<double> alpha = alpha_from_opinion(fused);
        double total = 0.0;
        for (double a : alpha) total += a;
        for (std::size_t i = 0; i < k; ++i) {
            out.alpha.at(s, i) = alpha[i];
            out.probs.at(s, i) = alpha[i] / total;
        }
        out.uncertainty[s] = fused.uncertainty;
    }
    return out;
}

}  // namespace mbpp::fusion
