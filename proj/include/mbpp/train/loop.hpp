#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <memory>

#include "mbpp/data/dataset.hpp"
#include "mbpp/fusion/feature.hpp"
#include "mbpp/fusion/logit.hpp"
#include "mbpp/train/metrics.hpp"
#include "mbpp/train/optim.hpp"

namespace mbpp::train {

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 0.0;
    OptimKind optimizer = OptimKind::adamw;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    bool freeze_encoders = false;
    std::uint64_t seed = 0;
    std::size_t early_stop_patience = 5;  // 0 disables early stopping
    MetricKind val_metric = MetricKind::accuracy;

    void validate() const {
        if (lr <= 0.0) throw ValidationError("TrainConfig.lr must be > 0");
        if (weight_decay < 0.0) throw ValidationError("TrainConfig.weight_decay must be >= 0");
        if (epochs == 0) throw ValidationError("TrainConfig.epochs must be >= 1");
        if (batch_size == 0) throw ValidationError("TrainConfig.batch_size must be >= 1");
    }
};

struct RunResult {
    std::vector<double> train_loss;   // per epoch
    std::vector<double> val_history;  // per epoch
    MetricReport test_metrics;
    std::uint64_t seed = 0;
    std::size_t best_epoch = 0;
    double wall_seconds = 0.0;
};

/// Called after each epoch with the validation metric; throwing aborts the
/// run (the HPO layer uses this for pruning).
using EpochHook = std::function<void(std::size_t epoch, double val_metric)>;

namespace loop_detail {

inline std::vector<Tensor> batch_inputs(const data::MultimodalDataset& ds,
                                        const std::vector<std::uint32_t>& rows) {
    std::vector<Tensor> xs;
    xs.reserve(ds.n_modalities());
    for (std::size_t m = 0; m < ds.n_modalities(); ++m) xs.push_back(ds.gather(m, rows));
    return xs;
}

inline Var model_loss(const fusion::FusionModel& model, const fusion::ModelOutput& out,
                      const std::vector<std::uint32_t>& labels) {
    if (!fusion::is_logit_level(model.config().arch)) {
        return ops::cross_entropy_mean(out.logits, labels);
    }
    // decision-level fusers train the per-modality classifiers jointly with
    // a mean of per-branch cross-entropies
    Var total = ops::cross_entropy_mean(out.branch_logits[0], labels);
    for (std::size_t m = 1; m < out.branch_logits.size(); ++m) {
        total = ops::add(total, ops::cross_entropy_mean(out.branch_logits[m], labels));
    }
    return ops::scale(total, 1.0 / static_cast<double>(out.branch_logits.size()));
}

inline Tensor softmax_rows(const Tensor& logits) {
    Tensor out(logits.shape());
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < logits.dim(0); ++i) {
        double mx = logits.at(i, 0);
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits.at(i, c));
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            out.at(i, c) = std::exp(logits.at(i, c) - mx);
            z += out.at(i, c);
        }
        for (std::size_t c = 0; c < k; ++c) out.at(i, c) /= z;
    }
    return out;
}

}  // namespace loop_detail

/// Class-probability scores [n, K] for a dataset under the model's
/// architecture: softmax head scores for feature-level fusers, summed-logit
/// softmax for logit summation, Dirichlet means for the evidential fuser.
inline Tensor eval_scores(const fusion::FusionModel& model, const data::MultimodalDataset& ds,
                          std::size_t batch_size = 256) {
    const std::size_t k = model.config().n_classes;
    Tensor scores({ds.n_samples, k});
    for (std::size_t start = 0; start < ds.n_samples; start += batch_size) {
        const std::size_t count = std::min(batch_size, ds.n_samples - start);
        std::vector<std::uint32_t> rows(count);
        for (std::size_t i = 0; i < count; ++i) rows[i] = static_cast<std::uint32_t>(start + i);

        fusion::ModelOutput out = model.forward(loop_detail::batch_inputs(ds, rows));
        Tensor batch_scores;
        switch (model.config().arch) {
            case fusion::Architecture::logit_sum: {
                fusion::LogitSet ls;
                for (const Var& l : out.branch_logits) ls.per_modality.push_back(l->value);
                batch_scores = loop_detail::softmax_rows(fusion::logit_sum(ls));
                break;
            }
            case fusion::Architecture::tmc: {
                fusion::LogitSet ls;
                for (const Var& l : out.branch_logits) ls.per_modality.push_back(l->value);
                batch_scores = fusion::fuse_evidential(ls).probs;
                break;
            }
            default: batch_scores = loop_detail::softmax_rows(out.logits->value);
        }
        for (std::size_t i = 0; i < count; ++i) {
            for (std::size_t c = 0; c < k; ++c) scores.at(start + i, c) = batch_scores.at(i, c);
        }
    }
    return scores;
}

inline MetricReport evaluate(const fusion::FusionModel& model, const data::MultimodalDataset& ds,
                             const std::vector<MetricKind>& metrics) {
    const Tensor scores = eval_scores(model, ds);
    MetricReport report;
    for (MetricKind m : metrics) {
        report.values.emplace_back(to_string(m), compute_metric(m, scores, ds.labels));
    }
    return report;
}

/// Mini-batch cross-entropy training with early stopping on the validation
/// metric. The parameters at the best validation epoch are restored before
/// the final test evaluation. Deterministic for a fixed config.
inline RunResult train_model(fusion::FusionModel& model, const data::DatasetSplits& splits,
                             const TrainConfig& cfg, const std::vector<MetricKind>& test_metrics,
                             const EpochHook& hook = {}) {
    cfg.validate();
    if (splits.train.n_samples == 0 || splits.val.n_samples == 0 || splits.test.n_samples == 0) {
        throw TrainError("train: empty split");
    }
    const auto t0 = std::chrono::steady_clock::now();

    nn::ParamSet& params = model.params();
    Optimizer optim({cfg.optimizer, cfg.lr, cfg.weight_decay}, params);
    std::vector<bool> trainable(params.size(), true);
    if (cfg.freeze_encoders) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            trainable[i] = params.items()[i].first.rfind("head", 0) == 0;
        }
    }

    Rng shuffle_root(cfg.seed);
    Rng dropout_rng = shuffle_root.fork(9001);
    nn::FwdCtx train_ctx{true, &dropout_rng};

    std::vector<std::uint32_t> order(splits.train.n_samples);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);

    RunResult result;
    result.seed = cfg.seed;
    const int direction = metric_direction(cfg.val_metric);
    double best_val = -1e300;
    std::vector<Tensor> best_params = params.snapshot();
    std::size_t since_best = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng = shuffle_root.fork(epoch + 1);
        epoch_rng.shuffle(order);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            const std::vector<std::uint32_t> rows(order.begin() + start, order.begin() + start + count);

            params.zero_grad();
            fusion::ModelOutput out =
                model.forward(loop_detail::batch_inputs(splits.train, rows), train_ctx);
            Var loss = loop_detail::model_loss(model, out, splits.train.gather_labels(rows));
            const double loss_value = loss->value[0];
            if (!std::isfinite(loss_value)) {
                throw TrainError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch offset " + std::to_string(start));
            }
            backward(loss);
            optim.step(params, trainable);
            epoch_loss += loss_value * static_cast<double>(count);
        }
        result.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));

        const Tensor val_scores = eval_scores(model, splits.val);
        const double val = compute_metric(cfg.val_metric, val_scores, splits.val.labels);
        result.val_history.push_back(val);
        if (hook) hook(epoch, val);

        if (direction * val > direction * best_val) {
            best_val = val;
            best_params = params.snapshot();
            result.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
            if (cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience) break;
        }
    }

    params.restore(best_params);
    result.test_metrics = evaluate(model, splits.test, test_metrics);
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

// ---------------------------------------------------------------------------
// Seeded multi-run protocol

using ModelFactory = std::function<std::unique_ptr<fusion::FusionModel>(std::uint64_t seed)>;

struct ProtocolResult {
    std::vector<RunResult> runs;
    Aggregate aggregate;
};

/// Runs train + evaluate n_runs times with seeds {base, base+1, ...} and
/// aggregates the test metrics as mean and population standard deviation.
inline ProtocolResult run_protocol(const ModelFactory& factory, const data::DatasetSplits& splits,
                                   TrainConfig base_cfg, const std::vector<MetricKind>& metrics,
                                   std::size_t n_runs = 3) {
    ProtocolResult result;
    std::vector<MetricReport> reports;
    for (std::size_t r = 0; r < n_runs; ++r) {
        const std::uint64_t seed = base_cfg.seed + r;
        std::unique_ptr<fusion::FusionModel> model = factory(seed);
        TrainConfig cfg = base_cfg;
        cfg.seed = seed;
        RunResult run = train_model(*model, splits, cfg, metrics);
        reports.push_back(run.test_metrics);
        result.runs.push_back(std::move(run));
    }
    result.aggregate = aggregate_runs(reports);
    return result;
}

}  // namespace mbpp::train
