#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>

#include "mbpp/hpo/checkpoint.hpp"
#include "mbpp/hpo/pruner.hpp"
#include "mbpp/hpo/space.hpp"

namespace mbpp::hpo {

enum class SamplerKind { random, tpe };

inline const char* to_string(SamplerKind s) { return s == SamplerKind::random ? "random" : "tpe"; }

inline SamplerKind sampler_from_string(const std::string& s) {
    if (s == "random") return SamplerKind::random;
    if (s == "tpe") return SamplerKind::tpe;
    throw ValidationError("unknown sampler '" + s + "'");
}

struct StudyConfig {
    std::size_t n_trials = 10;
    std::uint64_t seed = 0;
    SamplerKind sampler = SamplerKind::tpe;
    TpeOptions tpe{};
    bool pruning = true;
    MedianPruner pruner{};
    SearchSpace space{};
    std::string store_path;      // JSON-lines event ledger, optional
    std::string checkpoint_dir;  // best-trial checkpoint directory, optional

    void validate() const {
        if (n_trials == 0) throw ValidationError("StudyConfig.n_trials must be >= 1");
        space.validate();
    }
};

/// Thrown by an objective when the pruner cut the trial short.
struct PrunedSignal {
    std::size_t step = 0;
};

struct TrialRecord {
    std::size_t id = 0;
    TrialConfig config;
    TrialState state = TrialState::running;
    std::optional<double> objective;
    std::vector<std::pair<std::size_t, double>> reported;
    std::string error;
};

struct StudyResult {
    std::vector<TrialRecord> trials;
    std::optional<std::size_t> best_trial;
    std::optional<double> best_value;
    std::string best_checkpoint_path;

    /// Rebuilds the trial ledger from a JSON-lines event store.
    static StudyResult replay(const std::string& store_path);
};

class Study;

/// Objective-side handle: exposes the sampled config, accepts intermediate
/// reports, answers pruning queries, and carries the candidate checkpoint.
class Trial {
public:
    std::size_t id() const { return record_->id; }
    const TrialConfig& config() const { return record_->config; }

    void report(std::size_t step, double value);
    bool should_prune() const;

    void set_checkpoint(ParamTable params) { checkpoint_ = std::move(params); }
    const std::optional<ParamTable>& checkpoint() const { return checkpoint_; }

private:
    friend class Study;
    Trial(Study* study, TrialRecord* record) : study_(study), record_(record) {}

    Study* study_;
    TrialRecord* record_;
    std::optional<ParamTable> checkpoint_;
};

using Objective = std::function<double(Trial&)>;

class Study {
public:
    explicit Study(StudyConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        if (cfg_.sampler == SamplerKind::tpe) {
            sampler_ = std::make_unique<TpeSampler>(cfg_.tpe);
        } else {
            sampler_ = std::make_unique<RandomSampler>();
        }
        if (!cfg_.store_path.empty()) {
            const auto parent = std::filesystem::path(cfg_.store_path).parent_path();
            if (!parent.empty()) std::filesystem::create_directories(parent);
            store_.open(cfg_.store_path, std::ios::app);
            if (!store_) throw Error("cannot open study store " + cfg_.store_path);
        }
        if (!cfg_.checkpoint_dir.empty()) std::filesystem::create_directories(cfg_.checkpoint_dir);
    }

    StudyResult run(const Objective& objective) {
        Rng root(cfg_.seed);
        for (std::size_t t = 0; t < cfg_.n_trials; ++t) {
            Rng trial_rng = root.fork(t + 1);
            TrialRecord record;
            record.id = t;
            record.config = sampler_->sample(cfg_.space, history_, trial_rng);
            result_.trials.push_back(record);
            TrialRecord* rec = &result_.trials.back();
            log_event({{"event", "sampled"}, {"trial", t}, {"config", rec->config.to_json()}});

            Trial handle(this, rec);
            try {
                const double value = objective(handle);
                rec->state = TrialState::complete;
                rec->objective = value;
                log_event({{"event", "complete"}, {"trial", t}, {"value", value}});
                on_complete(*rec, handle);
            } catch (const PrunedSignal& p) {
                rec->state = TrialState::pruned;
                log_event({{"event", "pruned"}, {"trial", t}, {"step", p.step}});
            } catch (const std::exception& e) {
                rec->state = TrialState::failed;
                rec->error = e.what();
                log_event({{"event", "failed"}, {"trial", t}, {"error", rec->error}});
            }
        }
        return result_;
    }

    const StudyConfig& config() const { return cfg_; }

private:
    friend class Trial;

    void on_complete(const TrialRecord& rec, const Trial& handle) {
        history_.push_back({rec.config, *rec.objective});
        for (const auto& [step, value] : rec.reported) completed_at_step_[step].push_back(value);

        const bool improves = !result_.best_value.has_value() || *rec.objective > *result_.best_value;
        if (!improves) return;
        result_.best_trial = rec.id;
        result_.best_value = rec.objective;
        if (!cfg_.checkpoint_dir.empty() && handle.checkpoint().has_value()) {
            const std::string path =
                (std::filesystem::path(cfg_.checkpoint_dir) / ("trial_" + std::to_string(rec.id) + ".mbck"))
                    .string();
            write_checkpoint(path, *handle.checkpoint(), rec.config);
            result_.best_checkpoint_path = path;
            log_event({{"event", "checkpoint"}, {"trial", rec.id}, {"path", path}});
        }
    }

    void record_report(TrialRecord& rec, std::size_t step, double value) {
        rec.reported.emplace_back(step, value);
        log_event({{"event", "reported"}, {"trial", rec.id}, {"step", step}, {"value", value}});
    }

    bool query_prune(const TrialRecord& rec) const {
        if (!cfg_.pruning || rec.reported.empty()) return false;
        const auto& [step, value] = rec.reported.back();
        const auto it = completed_at_step_.find(step);
        return cfg_.pruner.should_prune(step, value,
                                        it == completed_at_step_.end() ? std::vector<double>{}
                                                                       : it->second);
    }

    void log_event(const nlohmann::json& event) {
        if (!store_.is_open()) return;
        store_ << event.dump() << '\n';
        store_.flush();
    }

    StudyConfig cfg_;
    std::unique_ptr<Sampler> sampler_;
    std::ofstream store_;
    std::vector<CompletedTrial> history_;
    std::map<std::size_t, std::vector<double>> completed_at_step_;
    StudyResult result_;
};

inline void Trial::report(std::size_t step, double value) { study_->record_report(*record_, step, value); }

inline bool Trial::should_prune() const { return study_->query_prune(*record_); }

/// Samples, runs and records n_trials objective evaluations. Each trial gets
/// a freshly instantiated model inside the objective, so no state leaks
/// between trials; exceptions mark the trial failed and the study continues.
inline StudyResult run_study(const Objective& objective, const StudyConfig& cfg) {
    Study study(cfg);
    return study.run(objective);
}

inline StudyResult StudyResult::replay(const std::string& store_path) {
    std::ifstream in(store_path);
    if (!in) throw Error("cannot open study store " + store_path);

    StudyResult result;
    std::map<std::size_t, std::size_t> index;  // trial id -> position
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(ParseError::Kind::malformed,
                             store_path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        const std::string event = j.at("event").get<std::string>();
        const std::size_t id = j.at("trial").get<std::size_t>();
        if (event == "sampled") {
            index[id] = result.trials.size();
            TrialRecord rec;
            rec.id = id;
            rec.config = TrialConfig::from_json(j.at("config"));
            result.trials.push_back(std::move(rec));
            continue;
        }
        TrialRecord& rec = result.trials.at(index.at(id));
        if (event == "reported") {
            rec.reported.emplace_back(j.at("step").get<std::size_t>(), j.at("value").get<double>());
        } else if (event == "complete") {
            rec.state = TrialState::complete;
            rec.objective = j.at("value").get<double>();
            if (!result.best_value.has_value() || *rec.objective > *result.best_value) {
                result.best_value = rec.objective;
                result.best_trial = rec.id;
            }
        } else if (event == "pruned") {
            rec.state = TrialState::pruned;
        } else if (event == "failed") {
            rec.state = TrialState::failed;
            rec.error = j.value("error", "");
        } else if (event == "checkpoint") {
            result.best_checkpoint_path = j.at("path").get<std::string>();
        } else {
            throw ParseError(ParseError::Kind::malformed,
                             store_path + ":" + std::to_string(line_no) + ": unknown event " + event);
        }
    }
    return result;
}

}  // namespace mbpp::hpo
