#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mbpp/core/error.hpp"
#include "mbpp/core/tensor.hpp"

namespace mbpp::train {

enum class MetricKind { accuracy, macro_f1, auprc, mse };

inline const char* to_string(MetricKind m) {
    switch (m) {
        case MetricKind::accuracy: return "accuracy";
        case MetricKind::macro_f1: return "macro_f1";
        case MetricKind::auprc: return "auprc";
        case MetricKind::mse: return "mse";
    }
    return "?";
}

inline MetricKind metric_from_string(const std::string& s) {
    for (MetricKind m : {MetricKind::accuracy, MetricKind::macro_f1, MetricKind::auprc, MetricKind::mse}) {
        if (s == to_string(m)) return m;
    }
    throw ValidationError("unknown metric '" + s + "'");
}

/// +1 when larger is better, -1 for error metrics.
inline int metric_direction(MetricKind m) { return m == MetricKind::mse ? -1 : 1; }

namespace metric_detail {

inline void check_lengths(const Tensor& scores, const std::vector<std::uint32_t>& targets) {
    if (scores.rank() != 2) throw ShapeError("metrics: scores must be [n, K]");
    if (scores.dim(0) != targets.size()) {
        throw ValidationError("metrics: " + std::to_string(scores.dim(0)) + " predictions vs " +
                              std::to_string(targets.size()) + " targets");
    }
    if (targets.empty()) throw ValidationError("metrics: empty input");
    for (std::uint32_t t : targets) {
        if (t >= scores.dim(1)) throw ValidationError("metrics: target out of range");
    }
}

inline std::vector<std::uint32_t> argmax_rows(const Tensor& scores) {
    std::vector<std::uint32_t> out(scores.dim(0));
    for (std::size_t i = 0; i < scores.dim(0); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < scores.dim(1); ++c) {
            if (scores.at(i, c) > scores.at(i, best)) best = c;
        }
        out[i] = static_cast<std::uint32_t>(best);
    }
    return out;
}

/// Area under the precision-recall curve by step-wise interpolation over the
/// distinct score thresholds, descending. Returns -1 when the class never
/// occurs (caller skips it).
inline double auprc_binary(const std::vector<double>& score, const std::vector<bool>& positive) {
    const std::size_t n = score.size();
    std::size_t total_pos = 0;
    for (bool p : positive) total_pos += p ? 1 : 0;
    if (total_pos == 0) return -1.0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

    double area = 0.0;
    double prev_recall = 0.0;
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < n) {
        // consume the whole tie group so each distinct score is one threshold
        const double t = score[order[i]];
        while (i < n && score[order[i]] == t) {
            if (positive[order[i]]) {
                ++tp;
            } else {
                ++fp;
            }
            ++i;
        }
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

}  // namespace metric_detail

inline double accuracy(const Tensor& scores, const std::vector<std::uint32_t>& targets) {
    metric_detail::check_lengths(scores, targets);
    const auto pred = metric_detail::argmax_rows(scores);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == targets[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

/// Unweighted mean of per-class F1. A class absent from both predictions and
/// targets is skipped entirely; a class with zero precision + recall
/// contributes 0.
inline double macro_f1(const Tensor& scores, const std::vector<std::uint32_t>& targets) {
    metric_detail::check_lengths(scores, targets);
    const auto pred = metric_detail::argmax_rows(scores);
    const std::size_t k = scores.dim(1);
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const bool p = pred[i] == c, t = targets[i] == c;
            tp += (p && t) ? 1 : 0;
            fp += (p && !t) ? 1 : 0;
            fn += (!p && t) ? 1 : 0;
        }
        if (tp + fp + fn == 0) continue;  // class absent everywhere
        ++counted;
        if (tp == 0) continue;  // F1 = 0
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        total += 2.0 * precision * recall / (precision + recall);
    }
    if (counted == 0) throw ValidationError("macro_f1: no class present");
    return total / static_cast<double>(counted);
}

/// Binary inputs score the positive class (column 1); K > 2 macro-averages
/// one-vs-rest over the classes present in the targets.
inline double auprc(const Tensor& scores, const std::vector<std::uint32_t>& targets) {
    metric_detail::check_lengths(scores, targets);
    const std::size_t n = scores.dim(0), k = scores.dim(1);
    std::vector<double> col(n);
    std::vector<bool> pos(n);

    if (k == 2) {
        for (std::size_t i = 0; i < n; ++i) {
            col[i] = scores.at(i, 1);
            pos[i] = targets[i] == 1;
        }
        const double a = metric_detail::auprc_binary(col, pos);
        if (a < 0.0) throw ValidationError("auprc: positive class absent from targets");
        return a;
    }

    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            col[i] = scores.at(i, c);
            pos[i] = targets[i] == c;
        }
        const double a = metric_detail::auprc_binary(col, pos);
        if (a < 0.0) continue;
        total += a;
        ++counted;
    }
    if (counted == 0) throw ValidationError("auprc: no class present in targets");
    return total / static_cast<double>(counted);
}

inline double mse(const std::vector<double>& predictions, const std::vector<double>& targets) {
    if (predictions.size() != targets.size() || predictions.empty()) {
        throw ValidationError("mse: " + std::to_string(predictions.size()) + " predictions vs " +
                              std::to_string(targets.size()) + " targets");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = predictions[i] - targets[i];
        acc += d * d;
    }
    return acc / static_cast<double>(predictions.size());
}

/// Classification dispatcher on class scores [n, K]. For mse the scores are
/// compared against the one-hot target rows (mean squared error of the
/// probability vector).
inline double compute_metric(MetricKind kind, const Tensor& scores,
                             const std::vector<std::uint32_t>& targets) {
    switch (kind) {
        case MetricKind::accuracy: return accuracy(scores, targets);
        case MetricKind::macro_f1: return macro_f1(scores, targets);
        case MetricKind::auprc: return auprc(scores, targets);
        case MetricKind::mse: {
            metric_detail::check_lengths(scores, targets);
            std::vector<double> pred, want;
            pred.reserve(scores.size());
            want.reserve(scores.size());
            for (std::size_t i = 0; i < scores.dim(0); ++i) {
                for (std::size_t c = 0; c < scores.dim(1); ++c) {
                    pred.push_back(scores.at(i, c));
                    want.push_back(targets[i] == c ? 1.0 : 0.0);
                }
            }
            return mse(pred, want);
        }
    }
    throw ContractError("unhandled metric");
}

struct MetricReport {
    std::vector<std::pair<std::string, double>> values;

    double get(const std::string& name) const {
        for (const auto& [n, v] : values) {
            if (n == name) return v;
        }
        throw ValidationError("metric '" + name + "' not in report");
    }
};

/// Mean and population standard deviation (divisor n) per metric.
struct Aggregate {
    std::vector<std::pair<std::string, std::pair<double, double>>> per_metric;

    std::pair<double, double> get(const std::string& name) const {
        for (const auto& [n, v] : per_metric) {
            if (n == name) return v;
        }
        throw ValidationError("metric '" + name + "' not in aggregate");
    }
};

inline Aggregate aggregate_runs(const std::vector<MetricReport>& reports) {
    if (reports.empty()) throw ValidationError("aggregate_runs: no runs");
    Aggregate agg;
    for (const auto& [name, first_value] : reports[0].values) {
        double mean = 0.0;
        for (const auto& r : reports) mean += r.get(name);
        mean /= static_cast<double>(reports.size());
        double var = 0.0;
        for (const auto& r : reports) {
            const double d = r.get(name) - mean;
            var += d * d;
        }
        var /= static_cast<double>(reports.size());  // population convention
        agg.per_metric.emplace_back(name, std::make_pair(mean, std::sqrt(var)));
    }
    return agg;
}

}  // namespace mbpp::train
