#include "vqdraw/code_format.hpp"

#include <fstream>

#include "vqdraw/errors.hpp"

namespace vqdraw {

namespace {

constexpr char kMagic[4] = {'V', 'Q', 'D', 'C'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kModeBitPacked = 0;
constexpr std::uint8_t kModeBytePerIndex = 1;

void check_code(const LatentCode& code) {
  if (code.options < 1) throw ShapeError("pack_code: options (K) must be >= 1");
  for (int c : code.indices)
    if (c < 1 || c > code.options)
      throw ShapeError("pack_code: index " + std::to_string(c) +
                       " out of [1," + std::to_string(code.options) + "]");
}

}  // namespace

bool code_is_bit_packed(int options) {
  return options >= 1 && (options & (options - 1)) == 0;
}

int code_bits_per_index(int options) {
  int bits = 0;
  while ((1 << bits) < options) ++bits;
  return bits;
}

std::size_t code_payload_size(int options, int stages) {
  if (!code_is_bit_packed(options)) return (std::size_t)stages;
  return ((std::size_t)stages * code_bits_per_index(options) + 7) / 8;
}

std::vector<std::uint8_t> pack_code(const LatentCode& code) {
  check_code(code);
  if (!code_is_bit_packed(code.options)) {
    std::vector<std::uint8_t> out;
    for (int c : code.indices) out.push_back((std::uint8_t)(c - 1));
    return out;
  }
  const int bits = code_bits_per_index(code.options);
  std::vector<std::uint8_t> out(code_payload_size(code.options, code.stages()), 0);
  std::size_t bitpos = 0;  // MSB-first across the buffer
  for (int c : code.indices) {
    const unsigned field = (unsigned)(c - 1);
    for (int b = bits - 1; b >= 0; --b) {
      if ((field >> b) & 1u) out[bitpos / 8] |= (std::uint8_t)(0x80u >> (bitpos % 8));
      ++bitpos;
    }
  }
  return out;
}

LatentCode unpack_code(const std::vector<std::uint8_t>& bytes, int stages,
                       int options) {
  if (stages < 0 || options < 1)
    throw ShapeError("unpack_code: bad stages/options");
  const std::size_t expect = code_payload_size(options, stages);
  if (bytes.size() < expect)
    throw FormatError("unpack_code: truncated payload, " +
                      std::to_string(bytes.size()) + " bytes for " +
                      std::to_string(expect) + " expected");
  if (bytes.size() > expect)
    throw FormatError("unpack_code: oversized payload, " +
                      std::to_string(bytes.size()) + " bytes for " +
                      std::to_string(expect) + " expected");

  LatentCode code;
  code.options = options;
  if (!code_is_bit_packed(options)) {
    for (int i = 0; i < stages; ++i) {
      const int c = (int)bytes[i] + 1;
      if (c > options)
        throw FormatError("unpack_code: index " + std::to_string(c) +
                          " out of [1," + std::to_string(options) + "]");
      code.indices.push_back(c);
    }
    return code;
  }

  const int bits = code_bits_per_index(options);
  std::size_t bitpos = 0;
  for (int i = 0; i < stages; ++i) {
    unsigned field = 0;
    for (int b = 0; b < bits; ++b) {
      field <<= 1;
      field |= (bytes[bitpos / 8] >> (7 - bitpos % 8)) & 1u;
      ++bitpos;
    }
    code.indices.push_back((int)field + 1);
  }
  // Residual padding bits must be zero; anything else signals corruption.
  while (bitpos < bytes.size() * 8) {
    if ((bytes[bitpos / 8] >> (7 - bitpos % 8)) & 1u)
      throw FormatError("unpack_code: nonzero padding bits");
    ++bitpos;
  }
  return code;
}

std::vector<std::uint8_t> serialize_code_file(const LatentCode& code) {
  check_code(code);
  if (code.options > 0xFFFF || code.stages() > 0xFFFF)
    throw ShapeError("code file: K and N must fit in 16 bits");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kVersion);
  out.push_back((std::uint8_t)(code.options & 0xFF));
  out.push_back((std::uint8_t)(code.options >> 8));
  out.push_back((std::uint8_t)(code.stages() & 0xFF));
  out.push_back((std::uint8_t)(code.stages() >> 8));
  out.push_back(code_is_bit_packed(code.options) ? kModeBitPacked
                                                 : kModeBytePerIndex);
  const auto payload = pack_code(code);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

LatentCode parse_code_file(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 10) throw FormatError("code file: truncated header");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw FormatError("code file: bad magic");
  if (bytes[4] != kVersion)
    throw FormatError("code file: version " + std::to_string(bytes[4]) +
                      ", expected " + std::to_string(kVersion));
  const int options = bytes[5] | (bytes[6] << 8);
  const int stages = bytes[7] | (bytes[8] << 8);
  const std::uint8_t mode = bytes[9];
  const std::uint8_t expect_mode =
      code_is_bit_packed(options) ? kModeBitPacked : kModeBytePerIndex;
  if (mode != expect_mode)
    throw FormatError("code file: packing mode " + std::to_string(mode) +
                      " inconsistent with K=" + std::to_string(options));
  std::vector<std::uint8_t> payload(bytes.begin() + 10, bytes.end());
  return unpack_code(payload, stages, options);
}

void write_code_file(const std::string& path, const LatentCode& code) {
  const auto bytes = serialize_code_file(code);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("code file: cannot open '" + path + "' for writing");
  f.write((const char*)bytes.data(), (std::streamsize)bytes.size());
  if (!f) throw FormatError("code file: write failed for '" + path + "'");
}

LatentCode read_code_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("code file: cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return parse_code_file(bytes);
}

}  // namespace vqdraw
