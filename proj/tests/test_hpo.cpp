#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "mbpp/data/generator.hpp"
#include "mbpp/hpo/study.hpp"
#include "mbpp/train/loop.hpp"

using namespace mbpp;
using namespace mbpp::hpo;

namespace {

std::vector<CompletedTrial> seeded_history(std::size_t n, std::uint64_t seed,
                                           const SearchSpace& space,
                                           const std::function<double(const TrialConfig&)>& objective) {
    Rng rng(seed);
    std::vector<CompletedTrial> history;
    for (std::size_t i = 0; i < n; ++i) {
        const TrialConfig c = sample_random(space, rng);
        history.push_back({c, objective(c)});
    }
    return history;
}

double log_quadratic(const TrialConfig& c) {
    const double dl = std::log(c.lr) - std::log(1e-4);
    return -dl * dl;
}

double log_quadratic_2d(const TrialConfig& c) {
    const double dl = std::log(c.lr) - std::log(1e-4);
    const double dw = std::log(c.weight_decay) - std::log(1e-4);
    return -dl * dl - dw * dw;
}

}  // namespace

TEST_CASE("random samples respect all bounds") {
    SearchSpace space;
    space.include_freeze = true;
    Rng rng(1);
    std::size_t freeze_count = 0;
    for (int i = 0; i < 10000; ++i) {
        const TrialConfig c = sample_random(space, rng);
        REQUIRE(c.lr >= 1e-5);
        REQUIRE(c.lr <= 1e-3);
        REQUIRE(c.weight_decay >= 1e-6);
        REQUIRE(c.weight_decay <= 1e-2);
        REQUIRE((c.optimizer == train::OptimKind::adamw || c.optimizer == train::OptimKind::rmsprop ||
                 c.optimizer == train::OptimKind::adam));
        freeze_count += c.freeze_encoders ? 1 : 0;
    }
    REQUIRE(freeze_count > 4000);
    REQUIRE(freeze_count < 6000);

    SearchSpace bad;
    bad.lr_low = 1e-3;
    bad.lr_high = 1e-5;
    REQUIRE_THROWS_AS(sample_random(bad, rng), ValidationError);
}

TEST_CASE("equal-state samplers draw identical configs") {
    SearchSpace space;
    RandomSampler a, b;
    Rng ra(7), rb(7);
    for (int i = 0; i < 20; ++i) {
        const TrialConfig ca = a.sample(space, {}, ra);
        const TrialConfig cb = b.sample(space, {}, rb);
        REQUIRE(ca.lr == cb.lr);
        REQUIRE(ca.weight_decay == cb.weight_decay);
        REQUIRE(ca.optimizer == cb.optimizer);
    }
}

TEST_CASE("log-uniform sampling has the geometric midpoint as median") {
    SearchSpace space;
    Rng rng(3);
    std::vector<double> lrs;
    for (int i = 0; i < 10000; ++i) lrs.push_back(sample_random(space, rng).lr);
    std::sort(lrs.begin(), lrs.end());
    const double median = lrs[lrs.size() / 2];
    REQUIRE(median > 1e-4 / 1.3);
    REQUIRE(median < 1e-4 * 1.3);
}

TEST_CASE("tpe proposals concentrate near the optimum of a log quadratic") {
    SearchSpace space;
    const auto history = seeded_history(30, 11, space, log_quadratic);

    TpeSampler tpe;
    std::size_t inside = 0;
    for (int i = 0; i < 100; ++i) {
        Rng rng(1000 + i);
        const TrialConfig c = tpe.sample(space, history, rng);
        if (c.lr >= 3e-5 && c.lr <= 3e-4) ++inside;
    }
    INFO("proposals inside [3e-5, 3e-4]: " << inside << "/100");
    REQUIRE(inside >= 80);
}

TEST_CASE("tpe below the startup threshold matches the random sampler exactly") {
    SearchSpace space;
    const auto history = seeded_history(9, 5, space, log_quadratic);  // below default 10

    TpeSampler tpe;
    RandomSampler random;
    for (int i = 0; i < 10; ++i) {
        Rng ra(42 + i), rb(42 + i);
        const TrialConfig ct = tpe.sample(space, history, ra);
        const TrialConfig cr = random.sample(space, history, rb);
        REQUIRE(ct.lr == cr.lr);
        REQUIRE(ct.weight_decay == cr.weight_decay);
        REQUIRE(ct.optimizer == cr.optimizer);
    }
}

TEST_CASE("tpe favours the categorical choice of the good trials") {
    SearchSpace space;
    Rng rng(13);
    std::vector<CompletedTrial> history;
    for (std::size_t i = 0; i < 40; ++i) {
        TrialConfig c = sample_random(space, rng);
        // adam trials score high, everything else low
        const double objective = (c.optimizer == train::OptimKind::adam) ? 1.0 + 0.001 * i : 0.0;
        history.push_back({c, objective});
    }

    TpeSampler tpe;
    std::size_t adam_count = 0;
    const int n_proposals = 300;
    for (int i = 0; i < n_proposals; ++i) {
        Rng prop_rng(7000 + i);
        if (tpe.sample(space, history, prop_rng).optimizer == train::OptimKind::adam) ++adam_count;
    }
    INFO("adam proposals: " << adam_count << "/" << n_proposals);
    REQUIRE(static_cast<double>(adam_count) / n_proposals > 1.0 / 3.0);
}

TEST_CASE("median pruner") {
    MedianPruner pruner;  // warmup 3

    SECTION("no completed trials never prunes") {
        REQUIRE_FALSE(pruner.should_prune(5, 0.1, {}));
    }

    SECTION("worse than the median prunes past warmup") {
        REQUIRE(pruner.should_prune(4, 0.4, {0.6, 0.7, 0.8}));
        REQUIRE_FALSE(pruner.should_prune(4, 0.75, {0.6, 0.7, 0.8}));
        // even-sized ledger: median of {0.6, 0.8} = 0.7
        REQUIRE(pruner.should_prune(3, 0.69, {0.8, 0.6}));
        REQUIRE_FALSE(pruner.should_prune(3, 0.71, {0.8, 0.6}));
    }

    SECTION("warmup steps are exempt") {
        REQUIRE_FALSE(pruner.should_prune(0, -1e9, {0.5}));
        REQUIRE_FALSE(pruner.should_prune(2, -1e9, {0.5}));
        REQUIRE(pruner.should_prune(3, -1e9, {0.5}));
    }
}

TEST_CASE("run_study executes the configured number of trials") {
    StudyConfig cfg;
    cfg.n_trials = 10;
    cfg.seed = 4;
    cfg.sampler = SamplerKind::tpe;

    std::size_t calls = 0;
    StudyResult result = run_study(
        [&](Trial& trial) {
            ++calls;
            return log_quadratic(trial.config());
        },
        cfg);
    REQUIRE(calls == 10);
    REQUIRE(result.trials.size() == 10);
    REQUIRE(result.best_trial.has_value());
    for (const auto& t : result.trials) REQUIRE(t.state == TrialState::complete);

    // best is the max over completed trials
    double best = -1e300;
    for (const auto& t : result.trials) best = std::max(best, *t.objective);
    REQUIRE(*result.best_value == best);
}

TEST_CASE("constant objective ties break to the first trial") {
    StudyConfig cfg;
    cfg.n_trials = 6;
    cfg.seed = 9;
    StudyResult result = run_study([](Trial&) { return 0.5; }, cfg);
    REQUIRE(result.best_trial == 0);
}

TEST_CASE("a throwing objective marks only its own trial failed") {
    StudyConfig cfg;
    cfg.n_trials = 10;
    cfg.seed = 2;
    StudyResult result = run_study(
        [](Trial& trial) {
            if (trial.id() == 3) throw std::runtime_error("synthetic objective failure");
            return static_cast<double>(trial.id());
        },
        cfg);
    std::size_t complete = 0, failed = 0;
    for (const auto& t : result.trials) {
        if (t.state == TrialState::complete) ++complete;
        if (t.state == TrialState::failed) ++failed;
    }
    REQUIRE(complete == 9);
    REQUIRE(failed == 1);
    REQUIRE(result.trials[3].state == TrialState::failed);
    REQUIRE(result.trials[3].error == "synthetic objective failure");
    REQUIRE(result.best_trial == 9);
}

TEST_CASE("fresh models per trial leave no state between trials") {
    // checksum of a freshly instantiated model must not depend on how much
    // training previous trials did
    const std::vector<fusion::ModalityDims> dims = {{2, 3}, {2, 3}};
    fusion::FusionConfig arch;
    arch.arch = fusion::Architecture::concat;
    arch.n_classes = 2;
    arch.d_model = 8;
    arch.n_heads = 2;

    std::vector<std::uint64_t> checksums;
    auto checksum_of = [](const nn::ParamSet& ps) {
        std::uint64_t h = 1469598103934665603ULL;
        for (const auto& [name, v] : ps.items()) {
            for (std::size_t i = 0; i < v->value.size(); ++i) {
                std::uint64_t bits;
                std::memcpy(&bits, &v->value[i], 8);
                h = (h ^ bits) * 1099511628211ULL;
            }
        }
        return h;
    };

    StudyConfig cfg;
    cfg.n_trials = 4;
    cfg.seed = 21;
    run_study(
        [&](Trial& trial) {
            fusion::FusionModel model(arch, dims, 77);  // fresh instantiation
            checksums.push_back(checksum_of(model.params()));
            // perturb the params as a stand-in for training
            for (auto& [name, v] : model.params().items()) {
                for (std::size_t i = 0; i < v->value.size(); ++i) v->value[i] += 1.0;
            }
            return log_quadratic(trial.config());
        },
        cfg);
    REQUIRE(checksums.size() == 4);
    for (std::uint64_t c : checksums) REQUIRE(c == checksums[0]);
}

TEST_CASE("pruned trials report then stop and never become best") {
    StudyConfig cfg;
    cfg.n_trials = 8;
    cfg.seed = 33;
    cfg.pruning = true;
    cfg.pruner.warmup_steps = 1;

    // deterministic curves: plateau derived from the sampled lr, so later
    // weak trials fall below the median of completed ones
    auto plateau = [](const TrialConfig& c) {
        return (std::log(c.lr) - std::log(1e-5)) / (std::log(1e-3) - std::log(1e-5));
    };
    std::size_t steps_executed = 0;
    StudyResult result = run_study(
        [&](Trial& trial) {
            const double p = plateau(trial.config());
            double v = 0.0;
            for (std::size_t s = 0; s < 10; ++s) {
                v = p * (1.0 - std::pow(0.5, static_cast<double>(s + 1)));
                trial.report(s, v);
                ++steps_executed;
                if (trial.should_prune()) throw PrunedSignal{s};
            }
            return v;
        },
        cfg);

    std::size_t pruned = 0;
    for (const auto& t : result.trials) pruned += t.state == TrialState::pruned ? 1 : 0;
    INFO("pruned " << pruned << " of 8, steps " << steps_executed);
    REQUIRE(pruned > 0);
    REQUIRE(steps_executed < 80);
    REQUIRE(result.trials[*result.best_trial].state == TrialState::complete);

    // the best trial is the completed trial with the highest plateau
    double best_plateau = -1.0;
    std::size_t expect_best = 0;
    for (const auto& t : result.trials) {
        if (t.state == TrialState::complete && plateau(t.config) > best_plateau) {
            best_plateau = plateau(t.config);
            expect_best = t.id;
        }
    }
    REQUIRE(*result.best_trial == expect_best);
}

TEST_CASE("checkpoint files round trip") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "mbpp_test_ckpt.mbck";
    fs::remove(path);

    ParamTable table;
    table.push_back({"layer.w", {{2, 3}, {1.0f, -2.0f, 0.5f, 3.25f, 0.0f, -7.75f}}});
    table.push_back({"layer.b", {{3}, {0.125f, 2.5f, -1.0f}}});
    TrialConfig cfg;
    cfg.lr = 3.14e-4;
    cfg.weight_decay = 2e-3;
    cfg.optimizer = train::OptimKind::rmsprop;

    write_checkpoint(path.string(), table, cfg);
    const Checkpoint back = read_checkpoint(path.string());
    REQUIRE(back.params.size() == 2);
    REQUIRE(back.params[0].first == "layer.w");
    REQUIRE(back.params[0].second.shape == std::vector<std::size_t>{2, 3});
    REQUIRE(back.params[0].second.values == table[0].second.values);
    REQUIRE(back.params[1].second.values == table[1].second.values);
    REQUIRE(back.config.lr == cfg.lr);
    REQUIRE(back.config.optimizer == train::OptimKind::rmsprop);

    fs::remove(path);
}

TEST_CASE("best checkpoint reproduces the recorded validation metric") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mbpp_test_study";
    fs::remove_all(dir);

    data::GeneratorSpec spec;
    spec.n_samples = 300;
    spec.n_classes = 2;
    spec.modalities = {{"a", 2, 4, 0.0}, {"b", 2, 4, 0.0}};
    spec.redundancy = 1.0;
    spec.seed = 5;
    const data::DatasetSplits splits = data::split(data::generate(spec), data::SplitSpec{});
    const std::vector<fusion::ModalityDims> dims = {{2, 4}, {2, 4}};

    fusion::FusionConfig arch;
    arch.arch = fusion::Architecture::concat;
    arch.n_classes = 2;
    arch.d_model = 8;
    arch.n_heads = 2;
    arch.modality_layers = 0;
    arch.fusion_layers = 0;

    StudyConfig cfg;
    cfg.n_trials = 4;
    cfg.seed = 55;
    cfg.checkpoint_dir = (dir / "ckpt").string();
    cfg.store_path = (dir / "study.jsonl").string();

    StudyResult result = run_study(
        [&](Trial& trial) {
            fusion::FusionModel model(arch, dims, 66);
            train::TrainConfig tc;
            tc.lr = trial.config().lr * 20;  // scaled into a trainable band
            tc.weight_decay = trial.config().weight_decay;
            tc.optimizer = trial.config().optimizer;
            tc.epochs = 4;
            tc.batch_size = 32;
            tc.seed = 66;
            tc.early_stop_patience = 0;
            train::RunResult run =
                train::train_model(model, splits, tc, {train::MetricKind::accuracy});
            trial.set_checkpoint(param_table_from(model.params()));
            return run.val_history[run.best_epoch];
        },
        cfg);

    REQUIRE(result.best_trial.has_value());
    REQUIRE_FALSE(result.best_checkpoint_path.empty());

    const Checkpoint ckpt = read_checkpoint(result.best_checkpoint_path);
    fusion::FusionModel reloaded(arch, dims, 999);  // different init, fully overwritten
    load_param_table(reloaded.params(), ckpt.params);
    const double val =
        train::compute_metric(train::MetricKind::accuracy,
                              train::eval_scores(reloaded, splits.val), splits.val.labels);
    REQUIRE_THAT(val, Catch::Matchers::WithinAbs(*result.best_value, 1e-6));

    // the event store replays to the same ledger
    const StudyResult replayed = StudyResult::replay(cfg.store_path);
    REQUIRE(replayed.trials.size() == result.trials.size());
    REQUIRE(replayed.best_trial == result.best_trial);
    REQUIRE(replayed.best_value == result.best_value);
    REQUIRE(replayed.best_checkpoint_path == result.best_checkpoint_path);
    for (std::size_t i = 0; i < result.trials.size(); ++i) {
        REQUIRE(replayed.trials[i].state == result.trials[i].state);
        REQUIRE(replayed.trials[i].config.lr == result.trials[i].config.lr);
        REQUIRE(replayed.trials[i].reported == result.trials[i].reported);
    }

    fs::remove_all(dir);
}

TEST_CASE("tpe beats random search on the synthetic log quadratic") {
    SearchSpace space;
    auto best_of_study = [&](SamplerKind kind, std::uint64_t seed) {
        StudyConfig cfg;
        cfg.n_trials = 50;
        cfg.seed = seed;
        cfg.sampler = kind;
        cfg.pruning = false;
        const StudyResult r =
            run_study([](Trial& t) { return log_quadratic_2d(t.config()); }, cfg);
        return *r.best_value;
    };

    std::vector<double> tpe_best, random_best;
    for (std::uint64_t s = 0; s < 20; ++s) {
        tpe_best.push_back(best_of_study(SamplerKind::tpe, 100 + s));
        random_best.push_back(best_of_study(SamplerKind::random, 100 + s));
    }
    std::sort(tpe_best.begin(), tpe_best.end());
    std::sort(random_best.begin(), random_best.end());
    const double tpe_median = tpe_best[10];
    const double random_median = random_best[10];
    INFO("median best: tpe " << tpe_median << " vs random " << random_median);
    REQUIRE(tpe_median > random_median);
}
