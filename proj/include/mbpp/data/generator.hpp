#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mbpp/core/rng.hpp"
#include "mbpp/data/dataset.hpp"

namespace mbpp::data {

// Synthetic multimodal classification data with a single redundancy knob rho.
//
// Construction: every sample draws a latent class vector composed of one
// block per modality. Block i holds
//   * a class prototype share (the class signal is spread over all blocks),
//   * a class-bit dimension whose amplitude scales with rho (linearly
//     readable from any single view once modalities are redundant), and
//   * a parity dimension whose amplitude scales with 1 - rho. The parity
//     signs are random per sample with their product fixed by the class bit,
//     so at low rho that share of the class information exists only in the
//     cross-modal interaction and no single modality suffices.
// Modality i observes a random linear embedding of its view of the latent
// (own block at full weight, other blocks scaled by rho; rho = 1 gives every
// modality the identical informative view) mixed with an independent
// nuisance signal, plus element-wise Gaussian noise.
//
// Within-pair prototype separation is kept weaker than across-pair
// separation, so a linear readout on concatenated views improves with more
// views but does not exhaust the class information at low rho.

namespace gen_detail {

constexpr std::size_t kProtoDims = 6;   // prototype share per block
constexpr std::size_t kBlockDims = kProtoDims + 2;  // + class-bit dim + parity dim
constexpr std::size_t kNuisanceDims = 4;
constexpr double kProtoScale = 1.5;
constexpr double kWithinPairScale = 0.22;
constexpr double kBitScale = 2.2;
constexpr double kParityScale = 2.6;
constexpr double kNuisanceScale = 0.7;
constexpr double kObsNoise = 1.0;

}  // namespace gen_detail

inline MultimodalDataset generate(const GeneratorSpec& spec) {
    using namespace gen_detail;
    spec.validate();

    const std::size_t k = spec.modalities.size();
    const std::size_t n = spec.n_samples;
    const std::size_t n_classes = spec.n_classes;
    const std::size_t n_pairs = (n_classes + 1) / 2;
    const std::size_t latent_dim = k * kBlockDims;
    const double rho = spec.redundancy;

    Rng root(spec.seed);
    Rng rng_struct = root.fork(1);
    Rng rng_sample = root.fork(2);
    Rng rng_label = root.fork(3);
    Rng rng_missing = root.fork(4);

    // Fixed structure: prototypes and observation maps.
    // proto[c] has k blocks of kProtoDims entries.
    std::vector<std::vector<double>> base(n_pairs, std::vector<double>(k * kProtoDims));
    for (auto& row : base) {
        for (double& v : row) v = rng_struct.normal() * kProtoScale;
    }
    std::vector<std::vector<double>> proto(n_classes, std::vector<double>(k * kProtoDims));
    for (std::size_t c = 0; c < n_classes; ++c) {
        proto[c] = base[c / 2];
        for (double& v : proto[c]) v += rng_struct.normal() * kProtoScale * kWithinPairScale;
    }

    struct ObsMap {
        std::size_t flat = 0;
        std::vector<double> signal;    // [flat, latent_dim]
        std::vector<double> nuisance;  // [flat, kNuisanceDims]
    };
    std::vector<ObsMap> maps(k);
    for (std::size_t m = 0; m < k; ++m) {
        const std::size_t flat = spec.modalities[m].seq_len * spec.modalities[m].feat_dim;
        maps[m].flat = flat;
        maps[m].signal.resize(flat * latent_dim);
        maps[m].nuisance.resize(flat * kNuisanceDims);
        const double sig_scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
        const double nui_scale = 1.0 / std::sqrt(static_cast<double>(kNuisanceDims));
        for (double& v : maps[m].signal) v = rng_struct.normal() * sig_scale;
        for (double& v : maps[m].nuisance) v = rng_struct.normal() * nui_scale;
    }

    MultimodalDataset ds;
    ds.n_samples = n;
    ds.n_classes = n_classes;
    ds.origin = spec;
    ds.labels.resize(n);
    ds.presence.assign(n * k, 1);
    for (std::size_t m = 0; m < k; ++m) {
        ds.modalities.push_back({spec.modalities[m].name, spec.modalities[m].seq_len,
                                 spec.modalities[m].feat_dim,
                                 std::vector<float>(n * maps[m].flat, 0.0f)});
    }

    std::vector<double> latent(latent_dim);
    std::vector<double> view(latent_dim);
    std::vector<double> nuis(kNuisanceDims);
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t cls = rng_sample.uniform_index(n_classes);
        const double bit = (cls % 2 == 0) ? -1.0 : 1.0;

        // Parity signs: random, with their product equal to the class bit.
        std::vector<double> parity(k, bit);
        if (k > 1) {
            double running = 1.0;
            for (std::size_t m = 0; m + 1 < k; ++m) {
                parity[m] = rng_sample.bernoulli(0.5) ? 1.0 : -1.0;
                running *= parity[m];
            }
            parity[k - 1] = bit * running;
        }

        for (std::size_t m = 0; m < k; ++m) {
            double* block = latent.data() + m * kBlockDims;
            for (std::size_t d = 0; d < kProtoDims; ++d) block[d] = proto[cls][m * kProtoDims + d];
            block[kProtoDims] = rho * kBitScale * bit;
            block[kProtoDims + 1] = (1.0 - rho) * kParityScale * parity[m];
        }

        for (std::size_t m = 0; m < k; ++m) {
            // View of modality m: own block full, other blocks scaled by rho.
            for (std::size_t b = 0; b < k; ++b) {
                const double w = (b == m) ? 1.0 : rho;
                for (std::size_t d = 0; d < kBlockDims; ++d) {
                    view[b * kBlockDims + d] = w * latent[b * kBlockDims + d];
                }
            }
            for (double& v : nuis) v = rng_sample.normal();

            float* out = ds.modalities[m].values.data() + s * maps[m].flat;
            for (std::size_t f = 0; f < maps[m].flat; ++f) {
                double acc = 0.0;
                const double* sig_row = maps[m].signal.data() + f * latent_dim;
                for (std::size_t d = 0; d < latent_dim; ++d) acc += sig_row[d] * view[d];
                const double* nui_row = maps[m].nuisance.data() + f * kNuisanceDims;
                for (std::size_t d = 0; d < kNuisanceDims; ++d) {
                    acc += kNuisanceScale * nui_row[d] * nuis[d];
                }
                acc += kObsNoise * rng_sample.normal();
                out[f] = static_cast<float>(acc);
            }
        }

        std::uint32_t label = static_cast<std::uint32_t>(cls);
        if (spec.label_noise > 0.0 && rng_label.bernoulli(spec.label_noise)) {
            label = static_cast<std::uint32_t>(rng_label.uniform_index(n_classes));
        }
        ds.labels[s] = label;
    }

    // Missing modalities: zero-filled with the presence bit cleared.
    for (std::size_t m = 0; m < k; ++m) {
        const double rate = spec.modalities[m].missing_rate;
        if (rate <= 0.0) continue;
        for (std::size_t s = 0; s < n; ++s) {
            if (rng_missing.bernoulli(rate)) {
                ds.presence[s * k + m] = 0;
                float* out = ds.modalities[m].values.data() + s * maps[m].flat;
                std::fill(out, out + maps[m].flat, 0.0f);
            }
        }
    }

    return ds;
}

}  // namespace mbpp::data
