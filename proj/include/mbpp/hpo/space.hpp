#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include <json.hpp>

#include "mbpp/core/rng.hpp"
#include "mbpp/train/optim.hpp"

namespace mbpp::hpo {

/// The tuned dimensions: learning rate and weight decay are log-uniform,
/// the optimizer is categorical, and encoder freezing can optionally be
/// exposed as a fourth (boolean categorical) dimension.
struct SearchSpace {
    double lr_low = 1e-5;
    double lr_high = 1e-3;
    double wd_low = 1e-6;
    double wd_high = 1e-2;
    std::vector<train::OptimKind> optimizers = {train::OptimKind::adamw, train::OptimKind::rmsprop,
                                                train::OptimKind::adam};
    bool include_freeze = false;

    void validate() const {
        if (!(lr_low > 0.0) || !(lr_low < lr_high)) {
            throw ValidationError("SearchSpace: lr bounds must satisfy 0 < low < high");
        }
        if (!(wd_low > 0.0) || !(wd_low < wd_high)) {
            throw ValidationError("SearchSpace: weight_decay bounds must satisfy 0 < low < high");
        }
        if (optimizers.empty()) throw ValidationError("SearchSpace: optimizer choices must not be empty");
    }
};

enum class TrialState { running, complete, pruned, failed };

inline const char* to_string(TrialState s) {
    switch (s) {
        case TrialState::running: return "running";
        case TrialState::complete: return "complete";
        case TrialState::pruned: return "pruned";
        case TrialState::failed: return "failed";
    }
    return "?";
}

/// One sampled point of the search space.
struct TrialConfig {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    train::OptimKind optimizer = train::OptimKind::adamw;
    bool freeze_encoders = false;

    nlohmann::json to_json() const {
        return {{"lr", lr},
                {"weight_decay", weight_decay},
                {"optimizer", train::to_string(optimizer)},
                {"freeze_encoders", freeze_encoders}};
    }

    static TrialConfig from_json(const nlohmann::json& j) {
        TrialConfig c;
        c.lr = j.at("lr").get<double>();
        c.weight_decay = j.at("weight_decay").get<double>();
        c.optimizer = train::optimizer_from_string(j.at("optimizer").get<std::string>());
        c.freeze_encoders = j.value("freeze_encoders", false);
        return c;
    }
};

struct CompletedTrial {
    TrialConfig config;
    double objective = 0.0;
};

inline TrialConfig sample_random(const SearchSpace& space, Rng& rng) {
    space.validate();
    TrialConfig c;
    c.lr = std::exp(rng.uniform(std::log(space.lr_low), std::log(space.lr_high)));
    c.weight_decay = std::exp(rng.uniform(std::log(space.wd_low), std::log(space.wd_high)));
    c.optimizer = space.optimizers[rng.uniform_index(space.optimizers.size())];
    c.freeze_encoders = space.include_freeze ? rng.bernoulli(0.5) : false;
    return c;
}

class Sampler {
public:
    virtual ~Sampler() = default;
    virtual TrialConfig sample(const SearchSpace& space, const std::vector<CompletedTrial>& history,
                               Rng& rng) = 0;
    virtual const char* name() const = 0;
};

class RandomSampler final : public Sampler {
public:
    TrialConfig sample(const SearchSpace& space, const std::vector<CompletedTrial>&, Rng& rng) override {
        return sample_random(space, rng);
    }
    const char* name() const override { return "random"; }
};

struct TpeOptions {
    double gamma = 0.25;          // top quantile regarded as "good"
    std::size_t n_startup = 10;   // random trials before the model kicks in
    std::size_t n_candidates = 24;
};

/// Tree-structured Parzen estimator over the fixed space above. Continuous
/// dimensions are modeled with Gaussian kernel densities in log space (plus a
/// wide prior component); categoricals with add-one-smoothed frequencies.
/// Candidates are drawn from the good-trial density and ranked by the
/// good/bad density ratio.
class TpeSampler final : public Sampler {
public:
    explicit TpeSampler(TpeOptions opt = {}) : opt_(opt) {}

    TrialConfig sample(const SearchSpace& space, const std::vector<CompletedTrial>& history,
                       Rng& rng) override {
        space.validate();
        if (history.size() < opt_.n_startup) return sample_random(space, rng);

        // split at the gamma quantile, maximization convention
        std::vector<const CompletedTrial*> sorted;
        sorted.reserve(history.size());
        for (const auto& t : history) sorted.push_back(&t);
        std::sort(sorted.begin(), sorted.end(),
                  [](const CompletedTrial* a, const CompletedTrial* b) {
                      return a->objective > b->objective;
                  });
        const std::size_t n_good = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(opt_.gamma * static_cast<double>(sorted.size()))));
        if (n_good >= sorted.size()) return sample_random(space, rng);

        std::vector<const CompletedTrial*> good(sorted.begin(), sorted.begin() + n_good);
        std::vector<const CompletedTrial*> bad(sorted.begin() + n_good, sorted.end());

        const Kde lr_good = fit_kde(good, space.lr_low, space.lr_high, &TrialConfig::lr);
        const Kde lr_bad = fit_kde(bad, space.lr_low, space.lr_high, &TrialConfig::lr);
        const Kde wd_good = fit_kde(good, space.wd_low, space.wd_high, &TrialConfig::weight_decay);
        const Kde wd_bad = fit_kde(bad, space.wd_low, space.wd_high, &TrialConfig::weight_decay);
        const auto opt_good = categorical_weights(good, space);
        const auto opt_bad = categorical_weights(bad, space);
        const auto frz_good = freeze_weights(good);
        const auto frz_bad = freeze_weights(bad);

        TrialConfig best;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < opt_.n_candidates; ++c) {
            TrialConfig cand;
            cand.lr = std::exp(lr_good.draw(rng));
            cand.weight_decay = std::exp(wd_good.draw(rng));
            cand.optimizer = space.optimizers[draw_categorical(opt_good, rng)];
            cand.freeze_encoders = space.include_freeze ? (draw_categorical(frz_good, rng) == 1) : false;

            double score = lr_good.log_density(std::log(cand.lr)) -
                           lr_bad.log_density(std::log(cand.lr));
            score += wd_good.log_density(std::log(cand.weight_decay)) -
                     wd_bad.log_density(std::log(cand.weight_decay));
            const std::size_t oi = optimizer_index(space, cand.optimizer);
            score += std::log(opt_good[oi]) - std::log(opt_bad[oi]);
            if (space.include_freeze) {
                const std::size_t fi = cand.freeze_encoders ? 1 : 0;
                score += std::log(frz_good[fi]) - std::log(frz_bad[fi]);
            }
            if (score > best_score) {
                best_score = score;
                best = cand;
            }
        }
        return best;
    }

    const char* name() const override { return "tpe"; }

private:
    /// Equal-weight Gaussian mixture over observed log values plus one wide
    /// prior component spanning the range.
    struct Kde {
        std::vector<double> centers;
        std::vector<double> widths;
        double lo = 0.0, hi = 0.0;

        double draw(Rng& rng) const {
            const std::size_t i = rng.uniform_index(centers.size());
            return std::clamp(rng.normal(centers[i], widths[i]), lo, hi);
        }

        double log_density(double v) const {
            double acc = 0.0;
            for (std::size_t i = 0; i < centers.size(); ++i) {
                const double z = (v - centers[i]) / widths[i];
                acc += std::exp(-0.5 * z * z) / widths[i];
            }
            constexpr double inv_sqrt_2pi = 0.3989422804014326779;
            return std::log(acc * inv_sqrt_2pi / static_cast<double>(centers.size()));
        }
    };

    static Kde fit_kde(const std::vector<const CompletedTrial*>& set, double low, double high,
                       double TrialConfig::* field) {
        Kde kde;
        kde.lo = std::log(low);
        kde.hi = std::log(high);
        const double range = kde.hi - kde.lo;
        double mean = 0.0;
        for (const auto* t : set) mean += std::log(t->config.*field);
        mean /= static_cast<double>(set.size());
        double var = 0.0;
        for (const auto* t : set) {
            const double d = std::log(t->config.*field) - mean;
            var += d * d;
        }
        var /= static_cast<double>(set.size());
        double sigma = std::sqrt(var);
        if (sigma == 0.0) sigma = range / 8.0;
        const double scott =
            1.06 * sigma * std::pow(static_cast<double>(set.size()), -0.2);
        // A generous floor keeps the sampler mobile when the good set
        // collapses into a tight suboptimal cluster.
        const double bw = std::max(scott, range / 8.0);

        for (const auto* t : set) {
            kde.centers.push_back(std::log(t->config.*field));
            kde.widths.push_back(bw);
        }
        // wide prior keeps unexplored regions reachable
        kde.centers.push_back((kde.lo + kde.hi) / 2.0);
        kde.widths.push_back(range / 2.0);
        return kde;
    }

    static std::size_t optimizer_index(const SearchSpace& space, train::OptimKind k) {
        for (std::size_t i = 0; i < space.optimizers.size(); ++i) {
            if (space.optimizers[i] == k) return i;
        }
        throw ContractError("optimizer not in space");
    }

    /// Add-one-smoothed normalized frequencies.
    static std::vector<double> categorical_weights(const std::vector<const CompletedTrial*>& set,
                                                   const SearchSpace& space) {
        std::vector<double> w(space.optimizers.size(), 1.0);
        for (const auto* t : set) w[optimizer_index(space, t->config.optimizer)] += 1.0;
        double total = 0.0;
        for (double v : w) total += v;
        for (double& v : w) v /= total;
        return w;
    }

    static std::vector<double> freeze_weights(const std::vector<const CompletedTrial*>& set) {
        std::vector<double> w = {1.0, 1.0};
        for (const auto* t : set) w[t->config.freeze_encoders ? 1 : 0] += 1.0;
        const double total = w[0] + w[1];
        w[0] /= total;
        w[1] /= total;
        return w;
    }

    static std::size_t draw_categorical(const std::vector<double>& weights, Rng& rng) {
        double u = rng.uniform();
        for (std::size_t i = 0; i < weights.size(); ++i) {
            u -= weights[i];
            if (u < 0.0) return i;
        }
        return weights.size() - 1;
    }

    TpeOptions opt_;
};

}  // namespace mbpp::hpo
