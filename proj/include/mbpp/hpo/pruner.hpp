#pragma once

#include <algorithm>
#include <vector>

namespace mbpp::hpo {

/// Median pruner: a trial is cut when its intermediate value at a step falls
/// below the median of the completed trials' values at the same step. Steps
/// inside the warmup window are never pruned, and an empty ledger never
/// prunes.
struct MedianPruner {
    std::size_t warmup_steps = 3;

    bool should_prune(std::size_t step, double value, std::vector<double> completed_at_step) const {
        if (step < warmup_steps) return false;
        if (completed_at_step.empty()) return false;
        std::sort(completed_at_step.begin(), completed_at_step.end());
        const std::size_t n = completed_at_step.size();
        const double median = (n % 2 == 1)
                                  ? completed_at_step[n / 2]
                                  : 0.5 * (completed_at_step[n / 2 - 1] + completed_at_step[n / 2]);
        return value < median;  // maximization convention
    }
};

}  // namespace mbpp::hpo
