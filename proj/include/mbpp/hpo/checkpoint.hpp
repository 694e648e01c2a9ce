#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mbpp/hpo/space.hpp"
#include "mbpp/nn/params.hpp"
#include "mbpp/util/binio.hpp"

namespace mbpp::hpo {

// Single-file model checkpoint: magic "MBCK", u32 version, a length-prefixed
// name -> float32-array table of every parameter, then the serialized
// TrialConfig as JSON.

struct FloatArray {
    std::vector<std::size_t> shape;
    std::vector<float> values;
};

using ParamTable = std::vector<std::pair<std::string, FloatArray>>;

namespace ckpt_detail {
constexpr char kMagic[4] = {'M', 'B', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
}  // namespace ckpt_detail

inline ParamTable param_table_from(const nn::ParamSet& params) {
    ParamTable table;
    table.reserve(params.size());
    for (const auto& [name, var] : params.items()) {
        FloatArray arr;
        arr.shape = var->value.shape();
        arr.values.reserve(var->value.size());
        for (std::size_t i = 0; i < var->value.size(); ++i) {
            arr.values.push_back(static_cast<float>(var->value[i]));
        }
        table.emplace_back(name, std::move(arr));
    }
    return table;
}

/// Copies stored values into an existing parameter set; every stored name
/// must exist with the same shape.
inline void load_param_table(nn::ParamSet& params, const ParamTable& table) {
    for (const auto& [name, arr] : table) {
        const Var* var = params.find(name);
        if (var == nullptr) throw ValidationError("checkpoint: unknown parameter '" + name + "'");
        if ((*var)->value.shape() != arr.shape) {
            throw ValidationError("checkpoint: shape mismatch for '" + name + "'");
        }
        for (std::size_t i = 0; i < arr.values.size(); ++i) {
            (*var)->value[i] = static_cast<double>(arr.values[i]);
        }
    }
}

struct Checkpoint {
    ParamTable params;
    TrialConfig config;
};

inline void write_checkpoint(const std::string& path, const ParamTable& params,
                             const TrialConfig& config) {
    using namespace ckpt_detail;
    io::Writer w(path);
    w.write_magic(kMagic);
    w.write_u32(kVersion);
    w.write_u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, arr] : params) {
        w.write_u32(static_cast<std::uint32_t>(name.size()));
        w.write_bytes(name);
        w.write_u32(static_cast<std::uint32_t>(arr.shape.size()));
        std::size_t count = 1;
        for (std::size_t d : arr.shape) {
            w.write_u32(static_cast<std::uint32_t>(d));
            count *= d;
        }
        for (float v : arr.values) w.write_f32(v);
        if (count != arr.values.size()) throw ContractError("checkpoint: shape/value mismatch");
    }
    const std::string cfg = config.to_json().dump();
    w.write_u32(static_cast<std::uint32_t>(cfg.size()));
    w.write_bytes(cfg);
    w.close();
}

inline Checkpoint read_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    io::Reader r = io::Reader::from_file(path);
    r.expect_magic(kMagic, "checkpoint");
    r.expect_version(kVersion);

    Checkpoint out;
    const std::uint32_t n = r.read_u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t name_len = r.read_u32();
        const std::string name = r.read_bytes(name_len);
        const std::uint32_t rank = r.read_u32();
        FloatArray arr;
        std::size_t count = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            arr.shape.push_back(r.read_u32());
            count *= arr.shape.back();
        }
        if (r.remaining() < count * 4) r.fail_truncated("parameter '" + name + "'");
        arr.values.resize(count);
        r.read_f32_block(arr.values.data(), count);
        out.params.emplace_back(name, std::move(arr));
    }
    const std::uint32_t cfg_len = r.read_u32();
    try {
        out.config = TrialConfig::from_json(nlohmann::json::parse(r.read_bytes(cfg_len)));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseError::Kind::malformed, path + ": bad trial config: " + e.what());
    }
    return out;
}

}  // namespace mbpp::hpo
