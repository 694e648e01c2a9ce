#include <catch2/catch_amalgamated.hpp>

#include "helpers/gradcheck.hpp"
#include "mbpp/nn/encoder.hpp"

using namespace mbpp;
using namespace mbpp::nn;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
    return t;
}

void set_value(const Var& v, const Tensor& t) { v->value = t; }

}  // namespace

TEST_CASE("conv_project keeps sequence length") {
    Rng rng(1);
    ParamSet ps;
    Conv1dParams conv = make_conv1d(ps, "proj", 16, 32, 3, rng);
    SequenceBatch out = conv_project(conv, random_tensor({4, 5, 16}, rng));
    REQUIRE(out.values->value.shape() == std::vector<std::size_t>{4, 5, 32});
    REQUIRE_FALSE(out.has_cls);

    // degenerate length 1 with kernel 3 still works (same padding)
    SequenceBatch tiny = conv_project(conv, random_tensor({2, 1, 16}, rng));
    REQUIRE(tiny.values->value.shape() == std::vector<std::size_t>{2, 1, 32});

    REQUIRE_THROWS_AS(conv_project(conv, random_tensor({4, 5, 10}, rng)), ShapeError);
}

TEST_CASE("conv_project with kernel 1 is a per-position affine map") {
    Rng rng(2);
    ParamSet ps;
    Conv1dParams conv = make_conv1d(ps, "proj", 6, 9, 1, rng);
    set_value(conv.w, random_tensor({1, 6, 9}, rng));
    set_value(conv.b, random_tensor({9}, rng));

    const Tensor x = random_tensor({3, 4, 6}, rng);
    SequenceBatch out = conv_project(conv, x);

    // independent dense oracle: y = x W + b
    for (std::size_t b = 0; b < 3; ++b) {
        for (std::size_t t = 0; t < 4; ++t) {
            for (std::size_t o = 0; o < 9; ++o) {
                double acc = conv.b->value[o];
                for (std::size_t i = 0; i < 6; ++i) acc += x.at(b, t, i) * conv.w->value.at(0, i, o);
                REQUIRE_THAT(out.values->value.at(b, t, o), Catch::Matchers::WithinAbs(acc, 1e-6));
            }
        }
    }
}

TEST_CASE("linear_project is a per-position affine map") {
    Rng rng(3);
    ParamSet ps;
    LinearParams lin = make_linear(ps, "proj", 12, 32, rng);

    SECTION("zero weights leave only the bias") {
        set_value(lin.w, Tensor({12, 32}));
        Tensor bias = random_tensor({32}, rng);
        set_value(lin.b, bias);
        SequenceBatch out = linear_project(lin, random_tensor({2, 7, 12}, rng));
        REQUIRE(out.values->value.shape() == std::vector<std::size_t>{2, 7, 32});
        for (std::size_t b = 0; b < 2; ++b) {
            for (std::size_t t = 0; t < 7; ++t) {
                for (std::size_t o = 0; o < 32; ++o) {
                    REQUIRE(out.values->value.at(b, t, o) == bias[o]);
                }
            }
        }
    }

    SECTION("linearity: doubled input doubles output when bias is zero") {
        set_value(lin.b, Tensor({32}));
        Tensor x = random_tensor({2, 3, 12}, rng);
        Tensor x2 = x;
        for (std::size_t i = 0; i < x2.size(); ++i) x2[i] *= 2.0;
        const Tensor y1 = linear_project(lin, x).values->value;
        const Tensor y2 = linear_project(lin, x2).values->value;
        for (std::size_t i = 0; i < y1.size(); ++i) {
            REQUIRE_THAT(y2[i], Catch::Matchers::WithinRel(2.0 * y1[i], 1e-12));
        }
    }
}

TEST_CASE("prepend_cls and select_cls") {
    Rng rng(4);
    ParamSet ps;
    Var cls = ps.add("cls", Tensor::from_data({4}, {1.0, 2.0, 3.0, 4.0}));

    SequenceBatch raw{make_leaf(random_tensor({3, 5, 4}, rng)), false};
    REQUIRE_THROWS_AS(select_cls(raw), ContractError);

    SequenceBatch with_cls = prepend_cls(cls, raw);
    REQUIRE(with_cls.has_cls);
    REQUIRE(with_cls.length() == 6);

    const Tensor head = select_cls(with_cls)->value;
    REQUIRE(head.shape() == std::vector<std::size_t>{3, 4});
    for (std::size_t b = 0; b < 3; ++b) {
        for (std::size_t d = 0; d < 4; ++d) REQUIRE(head.at(b, d) == cls->value[d]);
    }

    // content positions do not leak into the selected token
    SequenceBatch other{make_leaf(random_tensor({3, 5, 4}, rng)), false};
    const Tensor head2 = select_cls(prepend_cls(cls, other))->value;
    REQUIRE(bit_equal(head, head2));
}

TEST_CASE("encode with zero layers is the exact identity") {
    Rng rng(5);
    ParamSet ps;
    EncoderConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 4;
    cfg.n_layers = 0;
    EncoderParams enc = make_encoder(ps, "enc", cfg, rng);
    REQUIRE(ps.size() == 0);  // identity encoder owns nothing

    SequenceBatch s{make_leaf(random_tensor({2, 9, 16}, rng)), false};
    SequenceBatch out = encode(enc, s);
    REQUIRE(out.values.get() == s.values.get());
    REQUIRE(bit_equal(out.values->value, s.values->value));
}

TEST_CASE("encode preserves shape and respects max_seq_len") {
    Rng rng(6);
    ParamSet ps;
    EncoderConfig cfg;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.n_layers = 2;
    cfg.max_seq_len = 16;
    EncoderParams enc = make_encoder(ps, "enc", cfg, rng);

    SequenceBatch s{make_leaf(random_tensor({3, 9, 32}, rng)), false};
    REQUIRE(encode(enc, s).values->value.shape() == std::vector<std::size_t>{3, 9, 32});

    SequenceBatch too_long{make_leaf(random_tensor({1, 17, 32}, rng)), false};
    REQUIRE_THROWS_AS(encode(enc, too_long), ValidationError);
}

TEST_CASE("without positional signal equal tokens stay equal") {
    Rng rng(7);
    ParamSet ps;
    EncoderConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.positional = Positional::none;
    EncoderParams enc = make_encoder(ps, "enc", cfg, rng);

    Tensor x({2, 6, 8});
    Rng content(8);
    for (std::size_t b = 0; b < 2; ++b) {
        std::vector<double> row(8);
        for (double& v : row) v = content.normal();
        for (std::size_t t = 0; t < 6; ++t) {
            for (std::size_t d = 0; d < 8; ++d) x.at(b, t, d) = row[d];
        }
    }
    const Tensor out = encode(enc, {make_leaf(x), false}).values->value;
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t t = 1; t < 6; ++t) {
            for (std::size_t d = 0; d < 8; ++d) {
                REQUIRE_THAT(out.at(b, t, d), Catch::Matchers::WithinAbs(out.at(b, 0, d), 1e-6));
            }
        }
    }
}

TEST_CASE("encode commutes with content permutations when positional is none") {
    Rng rng(9);
    ParamSet ps;
    EncoderConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.positional = Positional::none;
    EncoderParams enc = make_encoder(ps, "enc", cfg, rng);
    Var cls = ps.add("cls", random_tensor({8}, rng));

    const Tensor content = random_tensor({2, 5, 8}, rng);
    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    Tensor permuted({2, 5, 8});
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t t = 0; t < 5; ++t) {
            for (std::size_t d = 0; d < 8; ++d) permuted.at(b, t, d) = content.at(b, perm[t], d);
        }
    }

    const Tensor out_a = encode(enc, prepend_cls(cls, {make_leaf(content), false})).values->value;
    const Tensor out_b = encode(enc, prepend_cls(cls, {make_leaf(permuted), false})).values->value;

    for (std::size_t b = 0; b < 2; ++b) {
        // CLS output unchanged
        for (std::size_t d = 0; d < 8; ++d) {
            REQUIRE_THAT(out_b.at(b, 0, d), Catch::Matchers::WithinAbs(out_a.at(b, 0, d), 1e-5));
        }
        // content outputs permute with the inputs (positions shift by the CLS)
        for (std::size_t t = 0; t < 5; ++t) {
            for (std::size_t d = 0; d < 8; ++d) {
                REQUIRE_THAT(out_b.at(b, 1 + t, d),
                             Catch::Matchers::WithinAbs(out_a.at(b, 1 + perm[t], d), 1e-5));
            }
        }
    }
}

TEST_CASE("one layer encoder gradients match finite differences") {
    Rng rng(10);
    ParamSet ps;
    EncoderConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.ff_mult = 2;
    cfg.max_seq_len = 6;
    EncoderParams enc = make_encoder(ps, "enc", cfg, rng);
    Var cls = ps.add("cls", random_tensor({8}, rng, 0.5));
    const Tensor x = random_tensor({2, 3, 8}, rng);
    const std::vector<std::uint32_t> labels = {1, 0};
    LinearParams head = make_linear(ps, "head", 8, 2, rng);
    set_value(head.w, random_tensor({8, 2}, rng, 0.3));

    auto loss_fn = [&]() -> Var {
        SequenceBatch s = prepend_cls(cls, {make_leaf(x), false});
        s = encode(enc, s);
        Var logits = apply_linear(head, select_cls(s));
        return ops::cross_entropy_mean(logits, labels);
    };
    auto report = testutil::grad_check(ps, loss_fn);
    INFO("params " << report.checked << " worst " << report.worst_param << " rel "
                   << report.max_rel_err);
    REQUIRE(report.checked == ps.total_elements());
    REQUIRE(report.ok());
}

TEST_CASE("encoder config validation") {
    EncoderConfig cfg;
    cfg.d_model = 30;
    cfg.n_heads = 4;
    REQUIRE_THROWS_AS(cfg.validate(), ValidationError);

    cfg = EncoderConfig{};
    cfg.dropout = 1.0;
    REQUIRE_THROWS_AS(cfg.validate(), ValidationError);

    cfg = EncoderConfig{};
    REQUIRE_NOTHROW(cfg.validate());
}

TEST_CASE("sinusoidal table reference values") {
    const Tensor t = sinusoidal_table(4, 6);
    REQUIRE_THAT(t.at(0, 0), Catch::Matchers::WithinAbs(0.0, 1e-12));   // sin(0)
    REQUIRE_THAT(t.at(0, 1), Catch::Matchers::WithinAbs(1.0, 1e-12));   // cos(0)
    REQUIRE_THAT(t.at(1, 0), Catch::Matchers::WithinAbs(std::sin(1.0), 1e-12));
    REQUIRE_THAT(t.at(2, 2), Catch::Matchers::WithinAbs(std::sin(2.0 / std::pow(10000.0, 2.0 / 6.0)), 1e-12));
}

TEST_CASE("dropout is identity in eval and masks in train") {
    Rng rng(11);
    Var x = make_leaf(random_tensor({4, 4}, rng), true);
    REQUIRE(ops::dropout(x, 0.5, nullptr, false).get() == x.get());
    REQUIRE(ops::dropout(x, 0.0, nullptr, true).get() == x.get());

    Rng mask_rng(12);
    Var dropped = ops::dropout(x, 0.5, &mask_rng, true);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < dropped->value.size(); ++i) {
        if (dropped->value[i] == 0.0) {
            ++zeros;
        } else {
            REQUIRE_THAT(dropped->value[i], Catch::Matchers::WithinRel(x->value[i] * 2.0, 1e-12));
        }
    }
    REQUIRE(zeros > 0);
    REQUIRE(zeros < dropped->value.size());
}
