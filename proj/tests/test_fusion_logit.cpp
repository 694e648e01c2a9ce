#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mbpp/core/rng.hpp"
#include "mbpp/fusion/logit.hpp"

using namespace mbpp;
using namespace mbpp::fusion;

namespace {

// Random valid opinion via random alpha >= 1.
EvidenceOpinion random_opinion(std::size_t k, Rng& rng, double max_evidence = 6.0) {
    std::vector<double> alpha(k);
    for (double& a : alpha) a = 1.0 + rng.uniform() * max_evidence;
    return opinion_from_alpha(alpha);
}

void require_normalized(const EvidenceOpinion& o, double tol = 1e-9) {
    double total = o.uncertainty;
    for (double b : o.belief) {
        REQUIRE(b >= 0.0);
        total += b;
    }
    REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, tol));
}

}  // namespace

TEST_CASE("logit_sum adds elementwise") {
    LogitSet ls;
    ls.per_modality.push_back(Tensor::from_data({1, 2}, {1.0, 2.0}));
    ls.per_modality.push_back(Tensor::from_data({1, 2}, {0.5, -1.0}));
    const Tensor fused = logit_sum(ls);
    REQUIRE(fused.at(0, 0) == 1.5);
    REQUIRE(fused.at(0, 1) == 1.0);

    LogitSet single;
    single.per_modality.push_back(Tensor::from_data({2, 2}, {1, 2, 3, 4}));
    REQUIRE(bit_equal(logit_sum(single), single.per_modality[0]));

    LogitSet three;
    three.per_modality.push_back(Tensor::from_data({1, 2}, {1.0, 0.0}));
    three.per_modality.push_back(Tensor::from_data({1, 2}, {0.0, 1.0}));
    three.per_modality.push_back(Tensor::from_data({1, 2}, {2.0, 2.0}));
    const Tensor t = logit_sum(three);
    REQUIRE(t.at(0, 0) == 3.0);
    REQUIRE(t.at(0, 1) == 3.0);

    LogitSet bad;
    bad.per_modality.push_back(Tensor({2, 3}));
    bad.per_modality.push_back(Tensor({2, 2}));
    REQUIRE_THROWS_AS(logit_sum(bad), ShapeError);
    REQUIRE_THROWS_AS(logit_sum(LogitSet{}), ValidationError);
}

TEST_CASE("logit_sum argmax equals mean logit argmax") {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        LogitSet ls;
        const std::size_t k = 2 + rng.uniform_index(3);
        for (std::size_t m = 0; m < k; ++m) {
            Tensor t({3, 4});
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * 3.0;
            ls.per_modality.push_back(t);
        }
        const Tensor sum = logit_sum(ls);
        for (std::size_t b = 0; b < 3; ++b) {
            std::size_t arg_sum = 0, arg_mean = 0;
            double best_sum = -1e300, best_mean = -1e300;
            for (std::size_t c = 0; c < 4; ++c) {
                if (sum.at(b, c) > best_sum) {
                    best_sum = sum.at(b, c);
                    arg_sum = c;
                }
                const double mean = sum.at(b, c) / static_cast<double>(k);
                if (mean > best_mean) {
                    best_mean = mean;
                    arg_mean = c;
                }
            }
            REQUIRE(arg_sum == arg_mean);
        }
    }
}

TEST_CASE("evidence_from_logits reference points") {
    const auto alpha = evidence_from_logits({0.0, -40.0, 50.0});
    REQUIRE_THAT(alpha[0], Catch::Matchers::WithinAbs(1.0 + std::log(2.0), 1e-12));
    REQUIRE_THAT(alpha[1], Catch::Matchers::WithinAbs(1.0, 1e-9));
    REQUIRE_THAT(alpha[2], Catch::Matchers::WithinAbs(51.0, 1e-9));

    // >= 1, finite and non-decreasing for |l| <= 1e4; strictly increasing
    // once softplus(l) clears the double-precision floor of 1 + eps
    // (alpha rounds to exactly 1.0 below l of about -36)
    double prev = 0.0;
    for (double l = -1e4; l <= 1e4; l += 97.3) {
        const double a = evidence_from_logits({l})[0];
        REQUIRE(std::isfinite(a));
        REQUIRE(a >= 1.0);
        REQUIRE(a >= prev);
        prev = a;
    }
    prev = evidence_from_logits({-35.0})[0];
    for (double l = -34.0; l <= 1e4; l += 11.7) {
        const double a = evidence_from_logits({l})[0];
        REQUIRE(a > prev);
        prev = a;
    }
}

TEST_CASE("opinion round trip") {
    SECTION("vacuous alpha") {
        const EvidenceOpinion o = opinion_from_alpha({1.0, 1.0});
        REQUIRE(o.belief[0] == 0.0);
        REQUIRE(o.belief[1] == 0.0);
        REQUIRE(o.uncertainty == 1.0);
    }

    SECTION("hand-evaluated case") {
        const EvidenceOpinion o = opinion_from_alpha({3.0, 1.0});
        REQUIRE_THAT(o.belief[0], Catch::Matchers::WithinAbs(0.5, 1e-12));
        REQUIRE_THAT(o.belief[1], Catch::Matchers::WithinAbs(0.0, 1e-12));
        REQUIRE_THAT(o.uncertainty, Catch::Matchers::WithinAbs(0.5, 1e-12));
    }

    SECTION("inverse pair on random alphas") {
        Rng rng(2);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t k = 2 + rng.uniform_index(5);
            std::vector<double> alpha(k);
            for (double& a : alpha) a = 1.0 + rng.uniform() * 9.0;
            const auto back = alpha_from_opinion(opinion_from_alpha(alpha));
            for (std::size_t i = 0; i < k; ++i) {
                REQUIRE_THAT(back[i], Catch::Matchers::WithinAbs(alpha[i], 1e-12));
            }
        }
    }

    REQUIRE_THROWS_AS(opinion_from_alpha({0.5, 1.0}), ValidationError);
}

TEST_CASE("dempster combination") {
    SECTION("vacuous opinion is a two-sided identity") {
        Rng rng(3);
        const EvidenceOpinion vac = opinion_from_alpha({1.0, 1.0, 1.0});
        for (int trial = 0; trial < 100; ++trial) {
            const EvidenceOpinion o = random_opinion(3, rng);
            const EvidenceOpinion left = dempster_combine(vac, o);
            const EvidenceOpinion right = dempster_combine(o, vac);
            for (std::size_t i = 0; i < 3; ++i) {
                REQUIRE_THAT(left.belief[i], Catch::Matchers::WithinAbs(o.belief[i], 1e-12));
                REQUIRE_THAT(right.belief[i], Catch::Matchers::WithinAbs(o.belief[i], 1e-12));
            }
            REQUIRE_THAT(left.uncertainty, Catch::Matchers::WithinAbs(o.uncertainty, 1e-12));
            REQUIRE_THAT(right.uncertainty, Catch::Matchers::WithinAbs(o.uncertainty, 1e-12));
        }
    }

    SECTION("hand-derived case alpha(3,1) + alpha(1,3) -> alpha(3,3)") {
        const EvidenceOpinion o1 = opinion_from_alpha({3.0, 1.0});
        const EvidenceOpinion o2 = opinion_from_alpha({1.0, 3.0});
        const EvidenceOpinion fused = dempster_combine(o1, o2);
        // C = 0.25, b = (1/3, 1/3), u = 1/3
        REQUIRE_THAT(fused.belief[0], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
        REQUIRE_THAT(fused.belief[1], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
        REQUIRE_THAT(fused.uncertainty, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
        const auto alpha = alpha_from_opinion(fused);
        REQUIRE_THAT(alpha[0], Catch::Matchers::WithinAbs(3.0, 1e-9));
        REQUIRE_THAT(alpha[1], Catch::Matchers::WithinAbs(3.0, 1e-9));
    }

    SECTION("commutativity, normalization and uncertainty monotonicity") {
        Rng rng(4);
        for (int trial = 0; trial < 1000; ++trial) {
            const std::size_t k = 2 + rng.uniform_index(4);
            const EvidenceOpinion o1 = random_opinion(k, rng);
            const EvidenceOpinion o2 = random_opinion(k, rng);
            const EvidenceOpinion ab = dempster_combine(o1, o2);
            const EvidenceOpinion ba = dempster_combine(o2, o1);
            require_normalized(ab);
            for (std::size_t i = 0; i < k; ++i) {
                REQUIRE_THAT(ab.belief[i], Catch::Matchers::WithinAbs(ba.belief[i], 1e-9));
            }
            REQUIRE_THAT(ab.uncertainty, Catch::Matchers::WithinAbs(ba.uncertainty, 1e-9));
            REQUIRE(ab.uncertainty <= std::min(o1.uncertainty, o2.uncertainty) + 1e-12);
        }
    }

    SECTION("associativity") {
        Rng rng(5);
        for (int trial = 0; trial < 1000; ++trial) {
            const std::size_t k = 2 + rng.uniform_index(4);
            const EvidenceOpinion a = random_opinion(k, rng);
            const EvidenceOpinion b = random_opinion(k, rng);
            const EvidenceOpinion c = random_opinion(k, rng);
            const EvidenceOpinion left = dempster_combine(dempster_combine(a, b), c);
            const EvidenceOpinion right = dempster_combine(a, dempster_combine(b, c));
            for (std::size_t i = 0; i < k; ++i) {
                REQUIRE_THAT(left.belief[i], Catch::Matchers::WithinAbs(right.belief[i], 1e-9));
            }
            REQUIRE_THAT(left.uncertainty, Catch::Matchers::WithinAbs(right.uncertainty, 1e-9));
        }
    }

    SECTION("total conflict is rejected") {
        // perfectly confident, fully disagreeing opinions
        EvidenceOpinion o1{{1.0, 0.0}, 0.0};
        EvidenceOpinion o2{{0.0, 1.0}, 0.0};
        REQUIRE_THROWS_AS(dempster_combine(o1, o2), ConflictError);

        EvidenceOpinion o3{{1.0, 0.0, 0.0}, 0.0};
        REQUIRE_THROWS_AS(dempster_combine(o3, EvidenceOpinion{{0.0, 0.5, 0.5}, 0.0}), ConflictError);
    }
}

TEST_CASE("fuse_evidential folds per sample") {
    SECTION("single modality is the base case") {
        LogitSet ls;
        ls.per_modality.push_back(Tensor::from_data({2, 3}, {0.0, 1.0, -1.0, 2.0, 0.5, 0.0}));
        const EvidentialFusion f = fuse_evidential(ls);
        for (std::size_t b = 0; b < 2; ++b) {
            std::vector<double> row(3);
            for (std::size_t c = 0; c < 3; ++c) row[c] = ls.per_modality[0].at(b, c);
            const auto alpha = evidence_from_logits(row);
            double total = 0.0;
            for (double a : alpha) total += a;
            for (std::size_t c = 0; c < 3; ++c) {
                REQUIRE_THAT(f.alpha.at(b, c), Catch::Matchers::WithinAbs(alpha[c], 1e-12));
                REQUIRE_THAT(f.probs.at(b, c), Catch::Matchers::WithinAbs(alpha[c] / total, 1e-12));
            }
        }
    }

    SECTION("vacuous logits fuse to the uniform vacuous opinion") {
        LogitSet ls;
        ls.per_modality.push_back(Tensor::from_data({1, 3}, {-40.0, -40.0, -40.0}));
        ls.per_modality.push_back(Tensor::from_data({1, 3}, {-40.0, -40.0, -40.0}));
        const EvidentialFusion f = fuse_evidential(ls);
        REQUIRE_THAT(f.uncertainty[0], Catch::Matchers::WithinAbs(1.0, 1e-9));
        for (std::size_t c = 0; c < 3; ++c) {
            REQUIRE_THAT(f.alpha.at(0, c), Catch::Matchers::WithinAbs(1.0, 1e-9));
            REQUIRE_THAT(f.probs.at(0, c), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-9));
        }
    }

    SECTION("three-way fold is parenthesization independent") {
        Rng rng(6);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<std::vector<double>> logits(3, std::vector<double>(4));
            for (auto& row : logits) {
                for (double& v : row) v = rng.normal() * 2.0;
            }
            LogitSet ls;
            for (const auto& row : logits) ls.per_modality.push_back(Tensor::from_data({1, 4}, row));

            const EvidentialFusion folded = fuse_evidential(ls);

            // brute-force right-associated fold as the oracle
            const auto o1 = opinion_from_alpha(evidence_from_logits(logits[0]));
            const auto o2 = opinion_from_alpha(evidence_from_logits(logits[1]));
            const auto o3 = opinion_from_alpha(evidence_from_logits(logits[2]));
            const auto right = dempster_combine(o1, dempster_combine(o2, o3));
            const auto alpha = alpha_from_opinion(right);
            for (std::size_t c = 0; c < 4; ++c) {
                REQUIRE_THAT(folded.alpha.at(0, c), Catch::Matchers::WithinAbs(alpha[c], 1e-9));
            }
            REQUIRE_THAT(folded.uncertainty[0], Catch::Matchers::WithinAbs(right.uncertainty, 1e-9));
        }
    }

    SECTION("probabilities normalize and uncertainty stays in (0, 1]") {
        Rng rng(7);
        LogitSet ls;
        for (int m = 0; m < 3; ++m) {
            Tensor t({8, 5});
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * 4.0;
            ls.per_modality.push_back(t);
        }
        const EvidentialFusion f = fuse_evidential(ls);
        for (std::size_t b = 0; b < 8; ++b) {
            double total = 0.0;
            for (std::size_t c = 0; c < 5; ++c) total += f.probs.at(b, c);
            REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-9));
            REQUIRE(f.uncertainty[b] > 0.0);
            REQUIRE(f.uncertainty[b] <= 1.0);
        }
    }
}
