#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "mbpp/core/error.hpp"
#include "mbpp/core/rng.hpp"
#include "mbpp/core/tensor.hpp"

namespace mbpp::data {

struct ModalitySpec {
    std::string name;
    std::size_t seq_len = 1;
    std::size_t feat_dim = 1;
    double missing_rate = 0.0;
};

struct GeneratorSpec {
    std::size_t n_samples = 0;
    std::size_t n_classes = 2;
    std::vector<ModalitySpec> modalities;
    double redundancy = 1.0;  // rho in [0, 1]
    double label_noise = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_samples == 0) throw ValidationError("GeneratorSpec.n_samples must be >= 1");
        if (n_classes < 2) throw ValidationError("GeneratorSpec.n_classes must be >= 2");
        if (modalities.empty()) throw ValidationError("GeneratorSpec.modalities must not be empty");
        if (redundancy < 0.0 || redundancy > 1.0) {
            throw ValidationError("GeneratorSpec.redundancy must lie in [0, 1]");
        }
        if (label_noise < 0.0 || label_noise >= 1.0) {
            throw ValidationError("GeneratorSpec.label_noise must lie in [0, 1)");
        }
        for (const auto& m : modalities) {
            if (m.name.empty()) throw ValidationError("GeneratorSpec.modalities: name must not be empty");
            if (m.seq_len == 0) throw ValidationError("GeneratorSpec.modalities." + m.name + ".seq_len must be >= 1");
            if (m.feat_dim == 0) throw ValidationError("GeneratorSpec.modalities." + m.name + ".feat_dim must be >= 1");
            if (m.missing_rate < 0.0 || m.missing_rate >= 1.0) {
                throw ValidationError("GeneratorSpec.modalities." + m.name + ".missing_rate must lie in [0, 1)");
            }
        }
    }
};

/// One modality's values for all samples, shaped [n_samples, seq_len, feat_dim]
/// row-major. Stored as float32, the container precision.
struct ModalityArray {
    std::string name;
    std::size_t seq_len = 0;
    std::size_t feat_dim = 0;
    std::vector<float> values;

    float at(std::size_t sample, std::size_t t, std::size_t f) const {
        return values[(sample * seq_len + t) * feat_dim + f];
    }
};

struct MultimodalDataset {
    std::size_t n_samples = 0;
    std::size_t n_classes = 0;
    std::vector<ModalityArray> modalities;
    std::vector<std::uint32_t> labels;   // [n_samples]
    std::vector<std::uint8_t> presence;  // [n_samples, n_modalities] row-major, 1 = present
    std::optional<GeneratorSpec> origin;

    std::size_t n_modalities() const { return modalities.size(); }

    bool present(std::size_t sample, std::size_t modality) const {
        return presence[sample * modalities.size() + modality] != 0;
    }

    void validate() const {
        if (labels.size() != n_samples) throw ValidationError("dataset: labels length mismatch");
        if (presence.size() != n_samples * modalities.size()) {
            throw ValidationError("dataset: presence mask size mismatch");
        }
        for (const auto& m : modalities) {
            if (m.values.size() != n_samples * m.seq_len * m.feat_dim) {
                throw ValidationError("dataset: modality '" + m.name + "' has wrong element count");
            }
        }
        for (std::uint32_t l : labels) {
            if (l >= n_classes) throw ValidationError("dataset: label out of range");
        }
    }

    /// Lift selected samples of one modality into a double tensor [B, L, D].
    Tensor gather(std::size_t modality, const std::vector<std::uint32_t>& rows) const {
        const ModalityArray& m = modalities[modality];
        Tensor t({rows.size(), m.seq_len, m.feat_dim});
        std::size_t idx = 0;
        for (std::uint32_t r : rows) {
            const float* src = m.values.data() + r * m.seq_len * m.feat_dim;
            for (std::size_t i = 0; i < m.seq_len * m.feat_dim; ++i) t[idx++] = src[i];
        }
        return t;
    }

    std::vector<std::uint32_t> gather_labels(const std::vector<std::uint32_t>& rows) const {
        std::vector<std::uint32_t> out;
        out.reserve(rows.size());
        for (std::uint32_t r : rows) out.push_back(labels[r]);
        return out;
    }

    MultimodalDataset subset(const std::vector<std::uint32_t>& rows) const {
        MultimodalDataset out;
        out.n_samples = rows.size();
        out.n_classes = n_classes;
        out.origin = origin;
        for (const auto& m : modalities) {
            ModalityArray a{m.name, m.seq_len, m.feat_dim, {}};
            a.values.reserve(rows.size() * m.seq_len * m.feat_dim);
            for (std::uint32_t r : rows) {
                const float* src = m.values.data() + r * m.seq_len * m.feat_dim;
                a.values.insert(a.values.end(), src, src + m.seq_len * m.feat_dim);
            }
            out.modalities.push_back(std::move(a));
        }
        out.labels = gather_labels(rows);
        out.presence.reserve(rows.size() * modalities.size());
        for (std::uint32_t r : rows) {
            for (std::size_t m = 0; m < modalities.size(); ++m) {
                out.presence.push_back(presence[r * modalities.size() + m]);
            }
        }
        return out;
    }
};

inline bool bit_equal(const MultimodalDataset& a, const MultimodalDataset& b) {
    if (a.n_samples != b.n_samples || a.n_classes != b.n_classes) return false;
    if (a.labels != b.labels || a.presence != b.presence) return false;
    if (a.modalities.size() != b.modalities.size()) return false;
    for (std::size_t i = 0; i < a.modalities.size(); ++i) {
        const auto& ma = a.modalities[i];
        const auto& mb = b.modalities[i];
        if (ma.name != mb.name || ma.seq_len != mb.seq_len || ma.feat_dim != mb.feat_dim) return false;
        if (ma.values.size() != mb.values.size()) return false;
        for (std::size_t j = 0; j < ma.values.size(); ++j) {
            // NaN-safe bitwise comparison
            std::uint32_t xa, xb;
            std::memcpy(&xa, &ma.values[j], 4);
            std::memcpy(&xb, &mb.values[j], 4);
            if (xa != xb) return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Splitting

enum class SplitMode { sequential, shuffled };

struct SplitSpec {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
    SplitMode mode = SplitMode::sequential;
    std::uint64_t seed = 0;

    void validate() const {
        for (double f : {train, val, test}) {
            if (f < 0.0 || f > 1.0) throw ValidationError("SplitSpec: fractions must lie in [0, 1]");
        }
        if (std::abs(train + val + test - 1.0) > 1e-9) {
            throw ValidationError("SplitSpec: fractions must sum to 1");
        }
    }
};

struct SplitIndices {
    std::vector<std::uint32_t> train, val, test;
};

/// Partition [0, n) into train/val/test. Counts are floor(n * f_train) and
/// floor(n * f_val); the remainder goes to test. Shuffled mode permutes the
/// indices with the given seed before cutting.
inline SplitIndices split_indices(std::size_t n, const SplitSpec& spec) {
    spec.validate();
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
    if (spec.mode == SplitMode::shuffled) {
        Rng rng(spec.seed);
        rng.shuffle(order);
    }
    const std::size_t n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.train));
    const std::size_t n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.val));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
        throw ValidationError("split: a resulting split would be empty for n = " + std::to_string(n));
    }
    SplitIndices out;
    out.train.assign(order.begin(), order.begin() + n_train);
    out.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    out.test.assign(order.begin() + n_train + n_val, order.end());
    return out;
}

struct DatasetSplits {
    MultimodalDataset train, val, test;
};

inline DatasetSplits split(const MultimodalDataset& ds, const SplitSpec& spec) {
    const SplitIndices idx = split_indices(ds.n_samples, spec);
    return {ds.subset(idx.train), ds.subset(idx.val), ds.subset(idx.test)};
}

}  // namespace mbpp::data
