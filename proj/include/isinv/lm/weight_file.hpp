#pragma once

// Tensor container shared by language-model ("MLMW"), detector ("AEDT") and
// inverter ("IVRT") checkpoints:
//
//   magic[4] | u16 version | u32 config_len | config (UTF-8 JSON)
//   | u32 tensor_count | { u16 name_len | name | u8 rank | u32 dims[rank]
//   | f32 row-major values } * tensor_count
//
// All integers little-endian. Values are stored as binary32, so tensors that
// are not already float-representable lose precision on save.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "isinv/core/binary_io.hpp"
#include "isinv/core/tensor.hpp"

namespace isinv {

inline constexpr std::uint16_t kWeightFileVersion = 1;

struct WeightFile {
    std::string magic;
    std::uint16_t version = kWeightFileVersion;
    std::string config_json = "{}";
    std::vector<std::pair<std::string, Tensor>> tensors;

    void add(std::string name, const Tensor& t) { tensors.emplace_back(std::move(name), t); }
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
};

Bytes encode_weight_file(const WeightFile& file);
/// Throws FormatError on bad magic, unsupported version or truncation.
WeightFile decode_weight_file(std::span<const std::uint8_t> bytes, const std::string& expected_magic);

void save_weight_file(const std::string& path, const WeightFile& file);
WeightFile load_weight_file(const std::string& path, const std::string& expected_magic);

}  // namespace isinv
