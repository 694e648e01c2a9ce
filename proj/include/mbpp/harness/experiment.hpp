#pragma once

#include <chrono>
#include <filesystem>

#include "mbpp/harness/config.hpp"
#include "mbpp/harness/store.hpp"

namespace mbpp::harness {

inline std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

/// Generates a dataset to disk. Refuses to clobber an existing container
/// unless force is set.
inline void cmd_gen_data(const data::GeneratorSpec& spec, const std::string& out_path, bool force) {
    namespace fs = std::filesystem;
    if (fs::exists(fs::path(out_path) / "meta.json") && !force) {
        throw ValidationError("refusing to overwrite existing dataset at " + out_path +
                              " (use --force)");
    }
    data::write_dataset(data::generate(spec), out_path);
}

inline data::MultimodalDataset load_dataset(const ExperimentConfig& cfg) {
    if (!cfg.dataset_path.empty()) {
        if (!std::filesystem::exists(std::filesystem::path(cfg.dataset_path) / "meta.json")) {
            throw ValidationError("dataset not found at " + cfg.dataset_path);
        }
        return data::read_dataset(cfg.dataset_path);
    }
    return data::generate(*cfg.generator);
}

inline data::DatasetSplits make_splits(const ExperimentConfig& cfg,
                                       const data::MultimodalDataset& ds) {
    data::DatasetSplits splits = data::split(ds, cfg.split);
    if (cfg.val_is_test) splits.val = splits.test;
    return splits;
}

inline std::vector<fusion::ModalityDims> dims_of(const data::MultimodalDataset& ds) {
    std::vector<fusion::ModalityDims> dims;
    for (const auto& m : ds.modalities) dims.push_back({m.seq_len, m.feat_dim});
    return dims;
}

/// Full pipeline: load data, optionally run the hyper-parameter study, run
/// the 3-seed protocol with the selected configuration, and append one
/// record to the result store. Returns the record.
inline nlohmann::json cmd_run(const ExperimentConfig& cfg, bool require_search = false) {
    if (require_search && !cfg.search.has_value()) {
        throw ValidationError("tune requires a 'search' section in the config");
    }

    const data::MultimodalDataset ds = load_dataset(cfg);
    const std::vector<fusion::ModalityDims> dims = dims_of(ds);

    fusion::FusionConfig model_cfg = cfg.model;
    model_cfg.arch = cfg.architecture;
    model_cfg.n_classes = ds.n_classes;
    model_cfg.validate(dims.size());  // surfaces arity errors before any work

    const data::DatasetSplits splits = make_splits(cfg, ds);

    nlohmann::json record;
    record["config_hash"] = cfg.hash();
    record["dataset"] = cfg.dataset_label();
    record["architecture"] = fusion::to_string(cfg.architecture);
    record["timestamp"] = iso_timestamp();
    record["val_is_test"] = cfg.val_is_test;
    record["config"] = cfg.echo;

    train::TrainConfig selected_cfg = cfg.train_base;
    if (cfg.search.has_value()) {
        hpo::StudyConfig study_cfg;
        study_cfg.n_trials = cfg.search->n_trials;
        study_cfg.seed = cfg.seeds_base;
        study_cfg.sampler = cfg.search->sampler;
        study_cfg.pruning = cfg.search->pruning;
        study_cfg.space.include_freeze = cfg.search->include_freeze;
        const std::string tag = cfg.hash().substr(0, 12) + "-" + iso_timestamp();
        study_cfg.store_path =
            (std::filesystem::path(cfg.out_dir) / "studies" / (tag + ".jsonl")).string();
        study_cfg.checkpoint_dir =
            (std::filesystem::path(cfg.out_dir) / "checkpoints" / tag).string();

        const hpo::StudyResult study = hpo::run_study(
            [&](hpo::Trial& trial) {
                fusion::FusionModel model(model_cfg, dims, cfg.seeds_base);
                train::TrainConfig tc = cfg.train_base;
                tc.lr = trial.config().lr;
                tc.weight_decay = trial.config().weight_decay;
                tc.optimizer = trial.config().optimizer;
                tc.freeze_encoders = trial.config().freeze_encoders;
                tc.seed = cfg.seeds_base;
                const train::RunResult run = train::train_model(
                    model, splits, tc, {cfg.train_base.val_metric},
                    [&](std::size_t epoch, double val) {
                        trial.report(epoch, val);
                        if (trial.should_prune()) throw hpo::PrunedSignal{epoch};
                    });
                trial.set_checkpoint(hpo::param_table_from(model.params()));
                return train::metric_direction(cfg.train_base.val_metric) *
                       run.val_history[run.best_epoch];
            },
            study_cfg);

        if (!study.best_trial.has_value()) {
            throw Error("hyper-parameter study finished without a completed trial");
        }
        const hpo::TrialConfig& best = study.trials[*study.best_trial].config;
        selected_cfg.lr = best.lr;
        selected_cfg.weight_decay = best.weight_decay;
        selected_cfg.optimizer = best.optimizer;
        selected_cfg.freeze_encoders = best.freeze_encoders;

        record["selected"] = best.to_json();
        record["study"] = {{"n_trials", study.trials.size()},
                           {"best_trial", *study.best_trial},
                           {"best_value", *study.best_value},
                           {"store", study_cfg.store_path},
                           {"best_checkpoint", study.best_checkpoint_path}};
    }

    selected_cfg.seed = cfg.seeds_base;
    const train::ProtocolResult protocol = train::run_protocol(
        [&](std::uint64_t seed) { return std::make_unique<fusion::FusionModel>(model_cfg, dims, seed); },
        splits, selected_cfg, cfg.metrics, 3);

    nlohmann::json per_seed = nlohmann::json::array();
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& run : protocol.runs) {
        seeds.push_back(run.seed);
        nlohmann::json metrics_j;
        for (const auto& [name, value] : run.test_metrics.values) metrics_j[name] = value;
        per_seed.push_back({{"seed", run.seed},
                            {"metrics", metrics_j},
                            {"best_epoch", run.best_epoch},
                            {"wall_seconds", run.wall_seconds}});
    }
    record["seeds"] = seeds;
    record["per_seed"] = per_seed;
    nlohmann::json agg;
    for (const auto& [name, ms] : protocol.aggregate.per_metric) {
        agg[name] = {{"mean", ms.first}, {"std", ms.second}};
    }
    record["aggregate"] = agg;

    append_record((std::filesystem::path(cfg.out_dir) / "results.jsonl").string(), record);
    return record;
}

/// For each redundancy level, regenerates the dataset and runs every
/// requested architecture plus the concat anchor; returns the records.
inline std::vector<nlohmann::json> cmd_sweep(const ExperimentConfig& base,
                                             const std::vector<double>& rhos,
                                             std::vector<std::string> architectures) {
    if (!base.generator.has_value()) {
        throw ValidationError("sweep-redundancy requires a generator-based config");
    }
    if (rhos.empty()) throw ValidationError("sweep-redundancy: empty rho list");
    if (architectures.empty()) throw ValidationError("sweep-redundancy: empty architecture list");
    bool has_concat = false;
    for (const auto& a : architectures) has_concat |= (a == "concat");
    if (!has_concat) architectures.insert(architectures.begin(), "concat");

    std::vector<nlohmann::json> records;
    for (double rho : rhos) {
        if (rho < 0.0 || rho > 1.0) throw ValidationError("sweep-redundancy: rho must lie in [0, 1]");
        for (const auto& arch : architectures) {
            ExperimentConfig cfg = base;
            cfg.generator->redundancy = rho;
            cfg.architecture = fusion::architecture_from_string(arch);
            cfg.model.arch = cfg.architecture;
            cfg.search.reset();  // the sweep runs the base training config
            cfg.echo["dataset"]["generator"]["redundancy"] = rho;
            cfg.echo["architecture"] = arch;
            records.push_back(cmd_run(cfg));
        }
    }
    return records;
}

}  // namespace mbpp::harness
