#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mbpp/core/ops.hpp"
#include "mbpp/nn/params.hpp"

namespace mbpp::nn {

enum class Positional { learned, sinusoidal, none };

struct EncoderConfig {
    std::size_t d_model = 32;
    std::size_t n_heads = 4;
    std::size_t n_layers = 1;
    std::size_t ff_mult = 4;
    double dropout = 0.0;
    std::size_t max_seq_len = 64;
    Positional positional = Positional::learned;

    void validate() const {
        if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
            throw ValidationError("EncoderConfig: d_model (" + std::to_string(d_model) +
                                  ") must be a positive multiple of n_heads (" +
                                  std::to_string(n_heads) + ")");
        }
        if (dropout < 0.0 || dropout >= 1.0) {
            throw ValidationError("EncoderConfig: dropout must lie in [0, 1)");
        }
        if (max_seq_len == 0) throw ValidationError("EncoderConfig: max_seq_len must be >= 1");
        if (ff_mult == 0) throw ValidationError("EncoderConfig: ff_mult must be >= 1");
    }
};

/// A [B, L, d_model] activation plus a flag marking position 0 as the
/// classification token.
struct SequenceBatch {
    Var values;
    bool has_cls = false;

    std::size_t batch() const { return values->value.dim(0); }
    std::size_t length() const { return values->value.dim(1); }
    std::size_t width() const { return values->value.dim(2); }
};

/// Per-forward evaluation context: training flag plus the RNG that feeds
/// dropout masks. Default is eval mode (dropout off).
struct FwdCtx {
    bool training = false;
    Rng* rng = nullptr;
};

constexpr double kInitStddev = 0.02;

// ---------------------------------------------------------------------------
// Projections

struct LinearParams {
    Var w;  // [in, out]
    Var b;  // [out]
};

inline LinearParams make_linear(ParamSet& ps, const std::string& name, std::size_t in,
                                std::size_t out, Rng& rng) {
    return {ps.add(name + ".w", init::trunc_normal({in, out}, kInitStddev, rng)),
            ps.add(name + ".b", init::zeros({out}))};
}

inline Var apply_linear(const LinearParams& p, const Var& x) {
    return ops::add_rowvec(ops::matmul(x, p.w), p.b);
}

struct Conv1dParams {
    Var w;  // [kernel, in, out]
    Var b;  // [out]
    std::size_t kernel = 3;
};

inline Conv1dParams make_conv1d(ParamSet& ps, const std::string& name, std::size_t in,
                                std::size_t out, std::size_t kernel, Rng& rng) {
    if (kernel % 2 == 0) {
        throw ValidationError("conv kernel size must be odd for same padding, got " +
                              std::to_string(kernel));
    }
    return {ps.add(name + ".w", init::trunc_normal({kernel, in, out}, kInitStddev, rng)),
            ps.add(name + ".b", init::zeros({out})), kernel};
}

inline Var to_input(const Tensor& x) { return make_leaf(x, /*requires_grad=*/false); }

/// Phi projection: 1D convolution along the sequence axis, length preserved.
inline SequenceBatch conv_project(const Conv1dParams& p, const Var& x) {
    const auto& s = x->value.shape();
    if (s.size() != 3) throw ShapeError("conv_project expects [B, L, D], got " + x->value.shape_str());
    if (s[2] != p.w->value.dim(1)) {
        throw ShapeError("conv_project: input width " + std::to_string(s[2]) +
                         " does not match configured width " + std::to_string(p.w->value.dim(1)));
    }
    return {ops::conv1d_same(x, p.w, p.b), false};
}

inline SequenceBatch conv_project(const Conv1dParams& p, const Tensor& x) {
    return conv_project(p, to_input(x));
}

/// Psi projection: per-position affine map.
inline SequenceBatch linear_project(const LinearParams& p, const Var& x) {
    const auto& s = x->value.shape();
    if (s.size() != 3) throw ShapeError("linear_project expects [B, L, D], got " + x->value.shape_str());
    if (s[2] != p.w->value.dim(0)) {
        throw ShapeError("linear_project: input width " + std::to_string(s[2]) +
                         " does not match configured width " + std::to_string(p.w->value.dim(0)));
    }
    return {apply_linear(p, x), false};
}

inline SequenceBatch linear_project(const LinearParams& p, const Tensor& x) {
    return linear_project(p, to_input(x));
}

/// Prepends a learned classification token; the result has length L + 1 and
/// position 0 reserved.
inline SequenceBatch prepend_cls(const Var& cls, const SequenceBatch& s) {
    if (cls->value.size() != s.width()) {
        throw ShapeError("prepend_cls: token width " + std::to_string(cls->value.size()) +
                         " vs sequence width " + std::to_string(s.width()));
    }
    Var tok = ops::broadcast_token(cls, s.batch());
    return {ops::concat({tok, s.values}, 1), true};
}

/// T(.): selects the classification token's embedding.
inline Var select_cls(const SequenceBatch& s) {
    if (!s.has_cls) throw ContractError("select_cls: sequence has no classification token");
    return ops::select_pos(s.values, 0);
}

// ---------------------------------------------------------------------------
// Multi-head attention

struct AttentionParams {
    LinearParams q, k, v, out;
    std::size_t n_heads = 1;
};

inline AttentionParams make_attention(ParamSet& ps, const std::string& name, std::size_t d_model,
                                      std::size_t n_heads, Rng& rng) {
    return {make_linear(ps, name + ".q", d_model, d_model, rng),
            make_linear(ps, name + ".k", d_model, d_model, rng),
            make_linear(ps, name + ".v", d_model, d_model, rng),
            make_linear(ps, name + ".o", d_model, d_model, rng), n_heads};
}

/// Scaled dot-product attention with separate query/key/value projections and
/// an output projection. Query and context may have different lengths; the
/// output keeps the query length.
inline Var multi_head_attention(const AttentionParams& p, const Var& query, const Var& context) {
    if (query->value.dim(2) != context->value.dim(2)) {
        throw ShapeError("attention: query width " + std::to_string(query->value.dim(2)) +
                         " vs context width " + std::to_string(context->value.dim(2)));
    }
    if (query->value.dim(0) != context->value.dim(0)) {
        throw ShapeError("attention: batch mismatch");
    }
    const std::size_t d_model = query->value.dim(2);
    const std::size_t dh = d_model / p.n_heads;

    Var q = ops::split_heads(apply_linear(p.q, query), p.n_heads);
    Var k = ops::split_heads(apply_linear(p.k, context), p.n_heads);
    Var v = ops::split_heads(apply_linear(p.v, context), p.n_heads);

    Var scores = ops::scale(ops::bmm(q, k, /*trans_b=*/true), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var weights = ops::softmax_last(scores);
    Var mixed = ops::merge_heads(ops::bmm(weights, v));
    return apply_linear(p.out, mixed);
}

/// Cross-attention between two projected sequences; both must already be at
/// d_model width. Output length equals the query length; the CLS flag of the
/// query is preserved.
inline SequenceBatch cross_attend(const AttentionParams& p, const SequenceBatch& query,
                                  const SequenceBatch& context) {
    return {multi_head_attention(p, query.values, context.values), query.has_cls};
}

// ---------------------------------------------------------------------------
// Transformer encoder

struct BlockParams {
    Var ln1_g, ln1_b;
    AttentionParams attn;
    Var ln2_g, ln2_b;
    LinearParams ff1, ff2;
};

struct EncoderParams {
    EncoderConfig cfg;
    Var pos_table;  // [max_seq_len, d_model] when positional == learned
    std::vector<BlockParams> blocks;
    Var final_ln_g, final_ln_b;
};

inline EncoderParams make_encoder(ParamSet& ps, const std::string& name, const EncoderConfig& cfg,
                                  Rng& rng) {
    cfg.validate();
    EncoderParams enc;
    enc.cfg = cfg;
    if (cfg.n_layers == 0) return enc;  // identity encoder owns no parameters
    if (cfg.positional == Positional::learned) {
        enc.pos_table = ps.add(name + ".pos",
                               init::trunc_normal({cfg.max_seq_len, cfg.d_model}, kInitStddev, rng));
    }
    const std::size_t d = cfg.d_model;
    const std::size_t ff = cfg.ff_mult * d;
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        const std::string base = name + ".block" + std::to_string(i);
        BlockParams b;
        b.ln1_g = ps.add(base + ".ln1.g", init::ones({d}));
        b.ln1_b = ps.add(base + ".ln1.b", init::zeros({d}));
        b.attn = make_attention(ps, base + ".attn", d, cfg.n_heads, rng);
        b.ln2_g = ps.add(base + ".ln2.g", init::ones({d}));
        b.ln2_b = ps.add(base + ".ln2.b", init::zeros({d}));
        b.ff1 = make_linear(ps, base + ".ff1", d, ff, rng);
        b.ff2 = make_linear(ps, base + ".ff2", ff, d, rng);
        enc.blocks.push_back(std::move(b));
    }
    enc.final_ln_g = ps.add(name + ".lnf.g", init::ones({d}));
    enc.final_ln_b = ps.add(name + ".lnf.b", init::zeros({d}));
    return enc;
}

inline Tensor sinusoidal_table(std::size_t length, std::size_t d_model) {
    Tensor t({length, d_model});
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < d_model; ++i) {
            const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
            t.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return t;
}

/// Pre-norm transformer stack. n_layers == 0 is the exact identity: the
/// block stack, positional injection and final norm are all bypassed.
inline SequenceBatch encode(const EncoderParams& enc, const SequenceBatch& s, const FwdCtx& ctx = {}) {
    const EncoderConfig& cfg = enc.cfg;
    if (cfg.n_layers == 0) return s;
    if (s.length() > cfg.max_seq_len) {
        throw ValidationError("encode: sequence length " + std::to_string(s.length()) +
                              " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    if (s.width() != cfg.d_model) {
        throw ShapeError("encode: width " + std::to_string(s.width()) + " vs d_model " +
                         std::to_string(cfg.d_model));
    }

    Var x = s.values;
    if (cfg.positional == Positional::learned) {
        x = ops::add_positional(x, enc.pos_table);
    } else if (cfg.positional == Positional::sinusoidal) {
        x = ops::add_positional(x, make_leaf(sinusoidal_table(s.length(), cfg.d_model)));
    }

    for (const BlockParams& b : enc.blocks) {
        Var normed = ops::layer_norm(x, b.ln1_g, b.ln1_b);
        Var attn = multi_head_attention(b.attn, normed, normed);
        attn = ops::dropout(attn, cfg.dropout, ctx.rng, ctx.training);
        x = ops::add(x, attn);

        normed = ops::layer_norm(x, b.ln2_g, b.ln2_b);
        Var h = apply_linear(b.ff2, ops::gelu(apply_linear(b.ff1, normed)));
        h = ops::dropout(h, cfg.dropout, ctx.rng, ctx.training);
        x = ops::add(x, h);
    }
    x = ops::layer_norm(x, enc.final_ln_g, enc.final_ln_b);
    return {x, s.has_cls};
}

}  // namespace mbpp::nn
