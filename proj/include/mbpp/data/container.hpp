#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "mbpp/data/dataset.hpp"
#include "mbpp/util/binio.hpp"

namespace mbpp::data {

// On-disk dataset container: a directory holding meta.json plus one binary
// file per modality (mod_<name>.bin), labels.bin and an optional mask.bin.
// All binary files are little-endian and open with magic "MBPP", u32
// version = 1.

inline nlohmann::json spec_to_json(const GeneratorSpec& spec) {
    nlohmann::json mods = nlohmann::json::array();
    for (const auto& m : spec.modalities) {
        mods.push_back({{"name", m.name},
                        {"seq_len", m.seq_len},
                        {"feat_dim", m.feat_dim},
                        {"missing_rate", m.missing_rate}});
    }
    return {{"n_samples", spec.n_samples}, {"n_classes", spec.n_classes},
            {"modalities", mods},          {"redundancy", spec.redundancy},
            {"label_noise", spec.label_noise}, {"seed", spec.seed}};
}

inline GeneratorSpec spec_from_json(const nlohmann::json& j) {
    GeneratorSpec spec;
    spec.n_samples = j.at("n_samples").get<std::size_t>();
    spec.n_classes = j.at("n_classes").get<std::size_t>();
    spec.redundancy = j.at("redundancy").get<double>();
    spec.label_noise = j.at("label_noise").get<double>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& m : j.at("modalities")) {
        spec.modalities.push_back({m.at("name").get<std::string>(), m.at("seq_len").get<std::size_t>(),
                                   m.at("feat_dim").get<std::size_t>(),
                                   m.value("missing_rate", 0.0)});
    }
    return spec;
}

namespace container_detail {

constexpr char kMagic[4] = {'M', 'B', 'P', 'P'};
constexpr std::uint32_t kVersion = 1;

}  // namespace container_detail

inline void write_dataset(const MultimodalDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    using namespace container_detail;
    ds.validate();
    fs::create_directories(dir);

    nlohmann::json meta;
    meta["n_samples"] = ds.n_samples;
    meta["n_classes"] = ds.n_classes;
    nlohmann::json mods = nlohmann::json::array();
    bool any_missing = false;
    for (std::size_t i = 0; i < ds.n_samples * ds.n_modalities(); ++i) {
        if (ds.presence[i] == 0) {
            any_missing = true;
            break;
        }
    }
    for (const auto& m : ds.modalities) {
        mods.push_back({{"name", m.name}, {"seq_len", m.seq_len}, {"feat_dim", m.feat_dim}});
    }
    meta["modalities"] = mods;
    meta["has_mask"] = any_missing;
    if (ds.origin) meta["generator"] = spec_to_json(*ds.origin);
    {
        std::ofstream out(fs::path(dir) / "meta.json");
        if (!out) throw Error("cannot write meta.json in " + dir);
        out << meta.dump(2) << '\n';
    }

    for (const auto& m : ds.modalities) {
        io::Writer w((fs::path(dir) / ("mod_" + m.name + ".bin")).string());
        w.write_magic(kMagic);
        w.write_u32(kVersion);
        w.write_u32(static_cast<std::uint32_t>(ds.n_samples));
        w.write_u32(static_cast<std::uint32_t>(m.seq_len));
        w.write_u32(static_cast<std::uint32_t>(m.feat_dim));
        for (float v : m.values) w.write_f32(v);
        w.close();
    }

    {
        io::Writer w((fs::path(dir) / "labels.bin").string());
        w.write_magic(kMagic);
        w.write_u32(kVersion);
        w.write_u32(static_cast<std::uint32_t>(ds.n_samples));
        for (std::uint32_t l : ds.labels) w.write_u32(l);
        w.close();
    }

    if (any_missing) {
        io::Writer w((fs::path(dir) / "mask.bin").string());
        w.write_magic(kMagic);
        w.write_u32(kVersion);
        w.write_u32(static_cast<std::uint32_t>(ds.n_samples));
        w.write_u32(static_cast<std::uint32_t>(ds.n_modalities()));
        for (std::uint8_t b : ds.presence) w.write_u8(b ? 1 : 0);
        w.close();
    }
}

inline MultimodalDataset read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    using namespace container_detail;

    const fs::path meta_path = fs::path(dir) / "meta.json";
    std::ifstream meta_in(meta_path);
    if (!meta_in) throw Error("cannot open " + meta_path.string());
    nlohmann::json meta;
    try {
        meta_in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseError::Kind::malformed, meta_path.string() + ": " + e.what());
    }

    MultimodalDataset ds;
    try {
        ds.n_samples = meta.at("n_samples").get<std::size_t>();
        ds.n_classes = meta.at("n_classes").get<std::size_t>();
        if (meta.contains("generator")) ds.origin = spec_from_json(meta.at("generator"));

        for (const auto& m : meta.at("modalities")) {
            ModalityArray arr;
            arr.name = m.at("name").get<std::string>();
            arr.seq_len = m.at("seq_len").get<std::size_t>();
            arr.feat_dim = m.at("feat_dim").get<std::size_t>();
            ds.modalities.push_back(std::move(arr));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseError::Kind::malformed, meta_path.string() + ": " + e.what());
    }

    for (auto& m : ds.modalities) {
        io::Reader r = io::Reader::from_file((fs::path(dir) / ("mod_" + m.name + ".bin")).string());
        r.expect_magic(kMagic, "modality array");
        r.expect_version(kVersion);
        const std::uint32_t n = r.read_u32();
        const std::uint32_t seq = r.read_u32();
        const std::uint32_t feat = r.read_u32();
        if (n != ds.n_samples || seq != m.seq_len || feat != m.feat_dim) {
            throw ParseError(ParseError::Kind::malformed,
                             r.origin() + ": header disagrees with meta.json");
        }
        const std::size_t count = static_cast<std::size_t>(n) * seq * feat;
        if (r.remaining() < count * 4) r.fail_truncated("modality payload");
        m.values.resize(count);
        r.read_f32_block(m.values.data(), count);
    }

    {
        io::Reader r = io::Reader::from_file((fs::path(dir) / "labels.bin").string());
        r.expect_magic(kMagic, "labels");
        r.expect_version(kVersion);
        const std::uint32_t n = r.read_u32();
        if (n != ds.n_samples) {
            throw ParseError(ParseError::Kind::malformed, r.origin() + ": header disagrees with meta.json");
        }
        if (r.remaining() < static_cast<std::size_t>(n) * 4) r.fail_truncated("labels payload");
        ds.labels.resize(n);
        for (std::uint32_t i = 0; i < n; ++i) ds.labels[i] = r.read_u32();
    }

    const bool has_mask = meta.value("has_mask", false);
    if (has_mask) {
        io::Reader r = io::Reader::from_file((fs::path(dir) / "mask.bin").string());
        r.expect_magic(kMagic, "mask");
        r.expect_version(kVersion);
        const std::uint32_t n = r.read_u32();
        const std::uint32_t k = r.read_u32();
        if (n != ds.n_samples || k != ds.n_modalities()) {
            throw ParseError(ParseError::Kind::malformed, r.origin() + ": header disagrees with meta.json");
        }
        const std::size_t count = static_cast<std::size_t>(n) * k;
        if (r.remaining() < count) r.fail_truncated("mask payload");
        ds.presence.resize(count);
        for (std::size_t i = 0; i < count; ++i) ds.presence[i] = r.read_u8();
    } else {
        ds.presence.assign(ds.n_samples * ds.n_modalities(), 1);
    }

    ds.validate();
    return ds;
}

}  // namespace mbpp::data
