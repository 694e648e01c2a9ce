#pragma once

#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>

#include "mbpp/data/container.hpp"
#include "mbpp/fusion/feature.hpp"
#include "mbpp/hpo/study.hpp"
#include "mbpp/train/loop.hpp"
#include "mbpp/util/sha1.hpp"

namespace mbpp::harness {

// Experiment configuration file: a single JSON document. Field-by-field
// schema is documented in the README; unknown keys are rejected nowhere (the
// echo keeps them), missing keys fall back to the defaults below.

struct SearchConfig {
    std::size_t n_trials = 10;
    hpo::SamplerKind sampler = hpo::SamplerKind::tpe;
    bool include_freeze = false;
    bool pruning = true;
};

struct ExperimentConfig {
    std::string dataset_path;                      // exclusive with generator
    std::optional<data::GeneratorSpec> generator;  // inline dataset recipe
    fusion::Architecture architecture = fusion::Architecture::concat;
    fusion::FusionConfig model;  // arch / n_classes filled in at run time
    data::SplitSpec split;
    bool val_is_test = false;
    train::TrainConfig train_base;
    std::optional<SearchConfig> search;
    std::vector<train::MetricKind> metrics = {train::MetricKind::accuracy};
    std::uint64_t seeds_base = 0;
    std::string out_dir = "results";
    nlohmann::json echo;  // the parsed document, hashed for record identity

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig cfg;
        cfg.echo = j;

        const auto ds = j.at("dataset");
        if (ds.contains("path") == ds.contains("generator")) {
            throw ValidationError("config.dataset needs exactly one of 'path' or 'generator'");
        }
        if (ds.contains("path")) {
            cfg.dataset_path = ds.at("path").get<std::string>();
        } else {
            cfg.generator = data::spec_from_json(ds.at("generator"));
            cfg.generator->validate();
        }

        cfg.architecture = fusion::architecture_from_string(j.at("architecture").get<std::string>());
        cfg.model.arch = cfg.architecture;

        if (j.contains("model")) {
            const auto& m = j.at("model");
            cfg.model.d_model = m.value("d_model", cfg.model.d_model);
            cfg.model.n_heads = m.value("n_heads", cfg.model.n_heads);
            cfg.model.modality_layers = m.value("modality_layers", cfg.model.modality_layers);
            cfg.model.fusion_layers = m.value("fusion_layers", cfg.model.fusion_layers);
            cfg.model.ff_mult = m.value("ff_mult", cfg.model.ff_mult);
            cfg.model.conv_kernel = m.value("conv_kernel", cfg.model.conv_kernel);
            cfg.model.dropout = m.value("dropout", cfg.model.dropout);
            if (m.contains("positional")) {
                const std::string p = m.at("positional").get<std::string>();
                if (p == "learned") {
                    cfg.model.positional = nn::Positional::learned;
                } else if (p == "sinusoidal") {
                    cfg.model.positional = nn::Positional::sinusoidal;
                } else if (p == "none") {
                    cfg.model.positional = nn::Positional::none;
                } else {
                    throw ValidationError("config.model.positional: unknown value '" + p + "'");
                }
            }
        }

        if (j.contains("split")) {
            const auto& s = j.at("split");
            cfg.split.train = s.value("train", cfg.split.train);
            cfg.split.val = s.value("val", cfg.split.val);
            cfg.split.test = s.value("test", cfg.split.test);
            cfg.split.seed = s.value("seed", cfg.split.seed);
            const std::string mode = s.value("mode", std::string("shuffled"));
            if (mode == "sequential") {
                cfg.split.mode = data::SplitMode::sequential;
            } else if (mode == "shuffled") {
                cfg.split.mode = data::SplitMode::shuffled;
            } else {
                throw ValidationError("config.split.mode: unknown value '" + mode + "'");
            }
            cfg.val_is_test = s.value("val_is_test", false);
            cfg.split.validate();
        } else {
            cfg.split.mode = data::SplitMode::shuffled;
        }

        if (j.contains("train")) {
            const auto& t = j.at("train");
            cfg.train_base.lr = t.value("lr", cfg.train_base.lr);
            cfg.train_base.weight_decay = t.value("weight_decay", cfg.train_base.weight_decay);
            if (t.contains("optimizer")) {
                cfg.train_base.optimizer =
                    train::optimizer_from_string(t.at("optimizer").get<std::string>());
            }
            cfg.train_base.epochs = t.value("epochs", cfg.train_base.epochs);
            cfg.train_base.batch_size = t.value("batch_size", cfg.train_base.batch_size);
            cfg.train_base.early_stop_patience =
                t.value("early_stop_patience", cfg.train_base.early_stop_patience);
            cfg.train_base.freeze_encoders = t.value("freeze_encoders", false);
            cfg.train_base.validate();
        }

        if (j.contains("search")) {
            const auto& s = j.at("search");
            SearchConfig sc;
            sc.n_trials = s.value("n_trials", sc.n_trials);
            if (s.contains("sampler")) {
                sc.sampler = hpo::sampler_from_string(s.at("sampler").get<std::string>());
            }
            sc.include_freeze = s.value("include_freeze", false);
            sc.pruning = s.value("pruning", true);
            if (sc.n_trials == 0) throw ValidationError("config.search.n_trials must be >= 1");
            cfg.search = sc;
        }

        if (j.contains("metrics")) {
            cfg.metrics.clear();
            for (const auto& m : j.at("metrics")) {
                cfg.metrics.push_back(train::metric_from_string(m.get<std::string>()));
            }
            if (cfg.metrics.empty()) throw ValidationError("config.metrics must not be empty");
        }
        cfg.train_base.val_metric = cfg.metrics[0];

        cfg.seeds_base = j.value("seeds_base", static_cast<std::uint64_t>(0));
        cfg.train_base.seed = cfg.seeds_base;
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        if (const char* env = std::getenv("MBPP_OUT"); env != nullptr && *env != '\0') {
            cfg.out_dir = env;
        }
        return cfg;
    }

    static ExperimentConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open config file " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path + ": invalid JSON: " + std::string(e.what()));
        }
        try {
            return from_json(j);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path + ": " + std::string(e.what()));
        }
    }

    /// Content hash of the configuration document (key-sorted JSON dump).
    std::string hash() const { return util::sha1_hex(echo.dump()); }

    std::string dataset_label() const {
        if (!dataset_path.empty()) return dataset_path;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "synthetic(seed=%llu,rho=%.2f)",
                      static_cast<unsigned long long>(generator->seed), generator->redundancy);
        return buf;
    }
};

}  // namespace mbpp::harness
