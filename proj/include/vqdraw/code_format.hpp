#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqdraw/codec.hpp"

namespace vqdraw {

// True when bit-packing applies (K a power of two); otherwise the payload
// falls back to one byte per index.
bool code_is_bit_packed(int options);

// Bits per index for power-of-two K (0 for K=1).
int code_bits_per_index(int options);

// Payload size in bytes for a given K and N.
std::size_t code_payload_size(int options, int stages);

// Each index-1 becomes a log2(K)-bit big-endian field; fields are
// concatenated most-significant-bit first and zero-padded to a byte
// boundary. Non-power-of-two K stores one byte per index.
std::vector<std::uint8_t> pack_code(const LatentCode& code);

// Exact inverse; rejects truncated/oversized buffers and nonzero padding.
LatentCode unpack_code(const std::vector<std::uint8_t>& bytes, int stages,
                       int options);

// Container: magic "VQDC", version byte, K (u16 LE), N (u16 LE), packing
// mode byte (0 bit-packed, 1 byte-per-index), payload.
std::vector<std::uint8_t> serialize_code_file(const LatentCode& code);
LatentCode parse_code_file(const std::vector<std::uint8_t>& bytes);

void write_code_file(const std::string& path, const LatentCode& code);
LatentCode read_code_file(const std::string& path);

}  // namespace vqdraw
