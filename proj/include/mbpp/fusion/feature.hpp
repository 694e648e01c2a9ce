#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mbpp/nn/encoder.hpp"

namespace mbpp::fusion {

enum class Architecture { multi_to_one, one_to_multi, caf, cacf, concat, logit_sum, tmc };

inline const char* to_string(Architecture a) {
    switch (a) {
        case Architecture::multi_to_one: return "multi_to_one";
        case Architecture::one_to_multi: return "one_to_multi";
        case Architecture::caf: return "caf";
        case Architecture::cacf: return "cacf";
        case Architecture::concat: return "concat";
        case Architecture::logit_sum: return "logit_sum";
        case Architecture::tmc: return "tmc";
    }
    return "?";
}

inline Architecture architecture_from_string(const std::string& s) {
    for (Architecture a : {Architecture::multi_to_one, Architecture::one_to_multi, Architecture::caf,
                           Architecture::cacf, Architecture::concat, Architecture::logit_sum,
                           Architecture::tmc}) {
        if (s == to_string(a)) return a;
    }
    throw ValidationError("unknown architecture '" + s + "'");
}

/// True for the two decision-level fusers that train per-modality classifier
/// branches and combine logits after the fact.
inline bool is_logit_level(Architecture a) {
    return a == Architecture::logit_sum || a == Architecture::tmc;
}

struct ModalityDims {
    std::size_t seq_len = 0;
    std::size_t feat_dim = 0;
};

struct FusionConfig {
    Architecture arch = Architecture::concat;
    std::size_t n_classes = 2;
    std::size_t d_model = 32;
    std::size_t n_heads = 4;
    std::size_t modality_layers = 1;  // shallow per-modality encoders
    std::size_t fusion_layers = 2;    // deeper fusion / shared / global encoder
    std::size_t ff_mult = 4;
    std::size_t conv_kernel = 3;
    double dropout = 0.0;
    nn::Positional positional = nn::Positional::learned;

    void validate(std::size_t n_modalities) const {
        if (n_classes < 2) throw ValidationError("FusionConfig.n_classes must be >= 2");
        if (n_modalities == 0) throw ValidationError("at least one modality is required");
        if ((arch == Architecture::caf || arch == Architecture::cacf) && n_modalities != 2) {
            throw ArityError(std::string(to_string(arch)) + " supports exactly 2 modalities, got " +
                             std::to_string(n_modalities));
        }
        nn::EncoderConfig probe;
        probe.d_model = d_model;
        probe.n_heads = n_heads;
        probe.ff_mult = ff_mult;
        probe.dropout = dropout;
        probe.validate();
    }
};

/// Forward result. Feature-level architectures populate g and logits;
/// decision-level architectures populate branch_logits (one [B, K] per
/// modality) and leave g empty.
struct ModelOutput {
    Var g;
    Var logits;
    std::vector<Var> branch_logits;
};

/// An encoder stack plus one of the fusion strategies, mapping per-modality
/// raw arrays to a unified representation g and class logits.
class FusionModel {
public:
    FusionModel(FusionConfig cfg, std::vector<ModalityDims> dims, std::uint64_t seed)
        : cfg_(cfg), dims_(std::move(dims)) {
        cfg_.validate(dims_.size());
        Rng rng(seed);
        build(rng);
    }

    const FusionConfig& config() const { return cfg_; }
    const std::vector<ModalityDims>& modality_dims() const { return dims_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

    /// Width of the unified representation g for feature-level architectures.
    std::size_t g_width() const {
        const std::size_t k = dims_.size();
        switch (cfg_.arch) {
            case Architecture::multi_to_one: return cfg_.d_model;
            case Architecture::one_to_multi: return k * cfg_.d_model;
            case Architecture::caf: return 2 * cfg_.d_model;
            case Architecture::cacf: return cfg_.d_model;
            case Architecture::concat: return k * cfg_.d_model;
            default: return 0;
        }
    }

    ModelOutput forward(const std::vector<Tensor>& xs, const nn::FwdCtx& ctx = {}) const {
        std::vector<Var> inputs;
        inputs.reserve(xs.size());
        for (const Tensor& x : xs) inputs.push_back(nn::to_input(x));
        return forward(inputs, ctx);
    }

    ModelOutput forward(const std::vector<Var>& xs, const nn::FwdCtx& ctx = {}) const {
        check_inputs(xs);
        ModelOutput out;
        if (is_logit_level(cfg_.arch)) {
            out.branch_logits = branch_forward(xs, ctx);
            return out;
        }
        switch (cfg_.arch) {
            case Architecture::multi_to_one: out.g = fuse_multi_to_one(xs, ctx); break;
            case Architecture::one_to_multi: out.g = fuse_one_to_multi(xs, ctx); break;
            case Architecture::caf: out.g = fuse_caf(xs, ctx); break;
            case Architecture::cacf: out.g = fuse_cacf(xs, ctx); break;
            case Architecture::concat: out.g = fuse_concat(xs, ctx); break;
            default: throw ContractError("unhandled architecture");
        }
        out.logits = classify(out.g);
        return out;
    }

    /// Affine head from g to class logits.
    Var classify(const Var& g) const { return nn::apply_linear(head_, g); }

private:
    void check_inputs(const std::vector<Var>& xs) const {
        if (xs.size() != dims_.size()) {
            throw ShapeError("expected " + std::to_string(dims_.size()) + " modalities, got " +
                             std::to_string(xs.size()));
        }
        for (std::size_t m = 0; m < xs.size(); ++m) {
            const auto& s = xs[m]->value.shape();
            if (s.size() != 3 || s[1] != dims_[m].seq_len || s[2] != dims_[m].feat_dim) {
                throw ShapeError("modality " + std::to_string(m) + ": expected [B, " +
                                 std::to_string(dims_[m].seq_len) + ", " +
                                 std::to_string(dims_[m].feat_dim) + "], got " +
                                 xs[m]->value.shape_str());
            }
            if (s[0] != xs[0]->value.dim(0)) {
                throw ShapeError("modality " + std::to_string(m) + ": batch size " +
                                 std::to_string(s[0]) + " disagrees with modality 0");
            }
        }
    }

    nn::EncoderConfig encoder_cfg(std::size_t n_layers, std::size_t max_seq_len) const {
        nn::EncoderConfig e;
        e.d_model = cfg_.d_model;
        e.n_heads = cfg_.n_heads;
        e.n_layers = n_layers;
        e.ff_mult = cfg_.ff_mult;
        e.dropout = cfg_.dropout;
        e.max_seq_len = max_seq_len;
        e.positional = cfg_.positional;
        return e;
    }

    void build(Rng& rng) {
        const std::size_t k = dims_.size();
        const std::size_t d = cfg_.d_model;

        switch (cfg_.arch) {
            case Architecture::multi_to_one:
            case Architecture::logit_sum:
            case Architecture::tmc: {
                for (std::size_t m = 0; m < k; ++m) {
                    const std::string base = "mod" + std::to_string(m);
                    conv_proj_.push_back(nn::make_conv1d(params_, base + ".proj", dims_[m].feat_dim,
                                                         d, cfg_.conv_kernel, rng));
                    mod_cls_.push_back(params_.add(base + ".cls",
                                                   nn::init::trunc_normal({d}, nn::kInitStddev, rng)));
                    mod_enc_.push_back(nn::make_encoder(
                        params_, base + ".enc",
                        encoder_cfg(cfg_.modality_layers, dims_[m].seq_len + 1), rng));
                }
                if (cfg_.arch == Architecture::multi_to_one) {
                    fuse_cls_ = params_.add("fuse.cls", nn::init::trunc_normal({d}, nn::kInitStddev, rng));
                    fuse_enc_ = nn::make_encoder(params_, "fuse.enc",
                                                 encoder_cfg(cfg_.fusion_layers, k + 1), rng);
                    head_ = nn::make_linear(params_, "head", g_width(), cfg_.n_classes, rng);
                } else {
                    for (std::size_t m = 0; m < k; ++m) {
                        branch_heads_.push_back(nn::make_linear(params_, "head" + std::to_string(m),
                                                                d, cfg_.n_classes, rng));
                    }
                }
                break;
            }
            case Architecture::one_to_multi: {
                std::size_t total_len = 0;
                for (const auto& dm : dims_) total_len += dm.seq_len;
                for (std::size_t m = 0; m < k; ++m) {
                    const std::string base = "mod" + std::to_string(m);
                    lin_proj_.push_back(nn::make_linear(params_, base + ".proj", dims_[m].feat_dim,
                                                        d, rng));
                }
                shared_enc_ = nn::make_encoder(params_, "shared.enc",
                                               encoder_cfg(cfg_.fusion_layers, total_len), rng);
                for (std::size_t m = 0; m < k; ++m) {
                    const std::string base = "seg" + std::to_string(m);
                    mod_cls_.push_back(params_.add(base + ".cls",
                                                   nn::init::trunc_normal({d}, nn::kInitStddev, rng)));
                    mod_enc_.push_back(nn::make_encoder(
                        params_, base + ".enc",
                        encoder_cfg(cfg_.modality_layers, dims_[m].seq_len + 1), rng));
                }
                head_ = nn::make_linear(params_, "head", g_width(), cfg_.n_classes, rng);
                break;
            }
            case Architecture::caf:
            case Architecture::cacf: {
                for (std::size_t m = 0; m < 2; ++m) {
                    const std::string base = "mod" + std::to_string(m);
                    lin_proj_.push_back(nn::make_linear(params_, base + ".proj", dims_[m].feat_dim,
                                                        d, rng));
                    mod_cls_.push_back(params_.add(base + ".cls",
                                                   nn::init::trunc_normal({d}, nn::kInitStddev, rng)));
                }
                attn_12_ = nn::make_attention(params_, "cross12", d, cfg_.n_heads, rng);
                attn_21_ = nn::make_attention(params_, "cross21", d, cfg_.n_heads, rng);
                if (cfg_.arch == Architecture::cacf) {
                    fuse_cls_ = params_.add("global.cls", nn::init::trunc_normal({d}, nn::kInitStddev, rng));
                    const std::size_t f_len = 1 + 2 * (dims_[0].seq_len + 1) + 2 * (dims_[1].seq_len + 1);
                    fuse_enc_ = nn::make_encoder(params_, "global.enc",
                                                 encoder_cfg(cfg_.fusion_layers, f_len), rng);
                }
                head_ = nn::make_linear(params_, "head", g_width(), cfg_.n_classes, rng);
                break;
            }
            case Architecture::concat: {
                for (std::size_t m = 0; m < k; ++m) {
                    const std::string base = "mod" + std::to_string(m);
                    conv_proj_.push_back(nn::make_conv1d(params_, base + ".proj", dims_[m].feat_dim,
                                                         d, cfg_.conv_kernel, rng));
                }
                head_ = nn::make_linear(params_, "head", g_width(), cfg_.n_classes, rng);
                break;
            }
        }
    }

    // z_i = T(E_i(Phi_i(x_i))); g = T(E_fuse([cls; z_1; ...; z_k]))
    Var fuse_multi_to_one(const std::vector<Var>& xs, const nn::FwdCtx& ctx) const {
        std::vector<Var> tokens;
        tokens.reserve(xs.size());
        for (std::size_t m = 0; m < xs.size(); ++m) {
            nn::SequenceBatch s = nn::conv_project(conv_proj_[m], xs[m]);
            s = nn::prepend_cls(mod_cls_[m], s);
            s = nn::encode(mod_enc_[m], s, ctx);
            tokens.push_back(as_token(nn::select_cls(s)));  // [B, 1, d]
        }
        nn::SequenceBatch joint{ops::concat(tokens, 1), false};
        joint = nn::prepend_cls(fuse_cls_, joint);
        joint = nn::encode(fuse_enc_, joint, ctx);
        return nn::select_cls(joint);
    }

    // h = E_shared([Psi_1(x_1); ...; Psi_k(x_k)]); split; g = [T(E_i(h_i)); ...]
    Var fuse_one_to_multi(const std::vector<Var>& xs, const nn::FwdCtx& ctx) const {
        std::vector<Var> projected;
        std::vector<std::size_t> lengths;
        for (std::size_t m = 0; m < xs.size(); ++m) {
            projected.push_back(nn::linear_project(lin_proj_[m], xs[m]).values);
            lengths.push_back(xs[m]->value.dim(1));
        }
        nn::SequenceBatch joint{ops::concat(projected, 1), false};
        joint = nn::encode(shared_enc_, joint, ctx);

        std::vector<Var> cls_outputs;
        std::size_t offset = 0;
        for (std::size_t m = 0; m < xs.size(); ++m) {
            nn::SequenceBatch seg{ops::slice(joint.values, 1, offset, lengths[m]), false};
            offset += lengths[m];
            seg = nn::prepend_cls(mod_cls_[m], seg);
            seg = nn::encode(mod_enc_[m], seg, ctx);
            cls_outputs.push_back(nn::select_cls(seg));
        }
        return ops::concat(cls_outputs, 1);  // feature-axis concat of [B, d] vectors
    }

    // z_{1<-2} = MultiHead(Q from x'_1, K/V from x'_2); g = [T(z_{1<-2}); T(z_{2<-1})]
    Var fuse_caf(const std::vector<Var>& xs, const nn::FwdCtx& ctx) const {
        (void)ctx;
        nn::SequenceBatch s1 = nn::prepend_cls(mod_cls_[0], nn::linear_project(lin_proj_[0], xs[0]));
        nn::SequenceBatch s2 = nn::prepend_cls(mod_cls_[1], nn::linear_project(lin_proj_[1], xs[1]));
        nn::SequenceBatch z12 = nn::cross_attend(attn_12_, s1, s2);
        nn::SequenceBatch z21 = nn::cross_attend(attn_21_, s2, s1);
        return ops::concat({nn::select_cls(z12), nn::select_cls(z21)}, 1);
    }

    // f = [cls; x'_1; z_{1<-2}; x'_2; z_{2<-1}]; g = T(E_global(f))
    Var fuse_cacf(const std::vector<Var>& xs, const nn::FwdCtx& ctx) const {
        nn::SequenceBatch s1 = nn::prepend_cls(mod_cls_[0], nn::linear_project(lin_proj_[0], xs[0]));
        nn::SequenceBatch s2 = nn::prepend_cls(mod_cls_[1], nn::linear_project(lin_proj_[1], xs[1]));
        nn::SequenceBatch z12 = nn::cross_attend(attn_12_, s1, s2);
        nn::SequenceBatch z21 = nn::cross_attend(attn_21_, s2, s1);
        nn::SequenceBatch f{ops::concat({s1.values, z12.values, s2.values, z21.values}, 1), false};
        f = nn::prepend_cls(fuse_cls_, f);
        f = nn::encode(fuse_enc_, f, ctx);
        return nn::select_cls(f);
    }

    // conv-project, mean-pool over the sequence, concatenate pooled vectors
    Var fuse_concat(const std::vector<Var>& xs, const nn::FwdCtx& ctx) const {
        (void)ctx;
        std::vector<Var> pooled;
        pooled.reserve(xs.size());
        for (std::size_t m = 0; m < xs.size(); ++m) {
            pooled.push_back(ops::mean_seq(nn::conv_project(conv_proj_[m], xs[m]).values));
        }
        return ops::concat(pooled, 1);
    }

    // Per-modality classifier branches for the decision-level fusers.
    std::vector<Var> branch_forward(const std::vector<Var>& xs, const nn::FwdCtx& ctx) const {
        std::vector<Var> logits;
        logits.reserve(xs.size());
        for (std::size_t m = 0; m < xs.size(); ++m) {
            nn::SequenceBatch s = nn::conv_project(conv_proj_[m], xs[m]);
            s = nn::prepend_cls(mod_cls_[m], s);
            s = nn::encode(mod_enc_[m], s, ctx);
            logits.push_back(nn::apply_linear(branch_heads_[m], nn::select_cls(s)));
        }
        return logits;
    }

    // [B, d] -> [B, 1, d]
    static Var as_token(const Var& z) {
        const std::size_t b = z->value.dim(0), d = z->value.dim(1);
        Tensor y({b, 1, d});
        for (std::size_t i = 0; i < b * d; ++i) y[i] = z->value[i];
        return make_node(std::move(y), {z}, [](Node& node) {
            const Var& z = node.inputs[0];
            if (!z->requires_grad) return;
            Tensor& g = z->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
        });
    }

    FusionConfig cfg_;
    std::vector<ModalityDims> dims_;
    nn::ParamSet params_;

    std::vector<nn::Conv1dParams> conv_proj_;
    std::vector<nn::LinearParams> lin_proj_;
    std::vector<Var> mod_cls_;
    std::vector<nn::EncoderParams> mod_enc_;
    Var fuse_cls_;
    nn::EncoderParams fuse_enc_;
    nn::EncoderParams shared_enc_;
    nn::AttentionParams attn_12_, attn_21_;
    nn::LinearParams head_;
    std::vector<nn::LinearParams> branch_heads_;
};

}  // namespace mbpp::fusion
