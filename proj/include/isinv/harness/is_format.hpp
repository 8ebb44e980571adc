#pragma once

// ISF1 frame, little-endian:
//
//   "ISF1" | u16 version | u16 layer | u32 n_tokens | u32 d_in | u8 dtype
//   | payload (row-major, n_tokens * d_in values) | u32 CRC-32 of payload
//
// dtype 0 is binary32, 1 is binary64. A container file holds a sequence of
// (text, frame) records:
//
//   "ISC1" | u16 version | u32 count | { u32 text_len | text | u32 frame_len | frame } * count

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "isinv/core/binary_io.hpp"
#include "isinv/core/tensor.hpp"
#include "isinv/lm/capture.hpp"

namespace isinv {

inline constexpr std::uint16_t kFrameVersion = 1;
inline constexpr std::uint16_t kContainerVersion = 1;

enum class FrameDtype : std::uint8_t { f32 = 0, f64 = 1 };

struct ISFrame {
    std::uint16_t version = kFrameVersion;
    std::uint16_t layer = 0;
    FrameDtype dtype = FrameDtype::f32;
    Tensor h;  // [n_tokens x d_in]
};

/// f32 frames round h to binary32.
Bytes encode_frame(const Tensor& h, std::size_t layer, FrameDtype dtype = FrameDtype::f32);
/// Throws FormatError on bad magic, version, dtype, length or checksum.
ISFrame decode_frame(std::span<const std::uint8_t> bytes);

struct ISRecord {
    std::string text;
    Bytes frame;
};

Bytes encode_container(std::span<const ISRecord> records);
/// Errors name the index of the first frame that fails to parse or verify.
std::vector<ISRecord> decode_container(std::span<const std::uint8_t> bytes);

void export_is(const std::string& path, std::span<const ISRecord> records);
std::vector<ISRecord> import_is(const std::string& path);

std::vector<ISRecord> records_from_capture(std::span<const CapturedIS> captured);

/// Decodes every frame of a container.
struct DecodedRecord {
    std::string text;
    ISFrame frame;
};
std::vector<DecodedRecord> decode_records(std::span<const ISRecord> records);

}  // namespace isinv
