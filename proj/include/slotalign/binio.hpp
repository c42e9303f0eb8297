#pragma once

// Raw float tensor container shared by feature files and checkpoints:
//
//   bytes 0..3   magic "FEAT"
//   bytes 4..7   format version (u32, little-endian) = 1
//   bytes 8..11  rows (u32 LE)
//   bytes 12..15 cols (u32 LE)
//   then rows*cols IEEE-754 binary32 values, little-endian, row-major.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>

#include "slotalign/error.hpp"
#include "slotalign/numkernel/tensor.hpp"

namespace slotalign::binio {

inline constexpr std::array<char, 4> kFeatureMagic{'F', 'E', 'A', 'T'};
inline constexpr std::uint32_t kFeatureVersion = 1;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw InvalidInput("truncated stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  const std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

inline void put_string(std::ostream& os, std::string_view s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw InvalidInput("truncated string");
  return s;
}

inline void write_tensor(std::ostream& os, const nk::Tensor<float>& t) {
  os.write(kFeatureMagic.data(), 4);
  put_u32(os, kFeatureVersion);
  put_u32(os, static_cast<std::uint32_t>(t.rows()));
  put_u32(os, static_cast<std::uint32_t>(t.cols()));
  for (float v : t.values()) put_u32(os, std::bit_cast<std::uint32_t>(v));
}

// Always yields a rank-2 tensor.
inline nk::Tensor<float> read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kFeatureMagic) {
    throw InvalidInput("bad feature magic");
  }
  const std::uint32_t version = get_u32(is);
  if (version != kFeatureVersion) {
    throw InvalidInput("unsupported feature version " + std::to_string(version));
  }
  const std::uint32_t rows = get_u32(is);
  const std::uint32_t cols = get_u32(is);
  auto t = nk::Tensor<float>::matrix(rows, cols);
  for (float& v : t.values()) v = std::bit_cast<float>(get_u32(is));
  return t;
}

inline void save_features(const std::filesystem::path& path, const nk::Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(path.string(), "cannot open for writing");
  write_tensor(os, t);
  if (!os) throw IoError(path.string(), "write failed");
}

inline nk::Tensor<float> load_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string(), "cannot open");
  try {
    return read_tensor(is);
  } catch (const InvalidInput& e) {
    throw IoError(path.string(), e.what());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string(), "cannot open");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(path.string(), "cannot open for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError(path.string(), "write failed");
}

// 64-bit FNV-1a. Used for provenance hashes; not cryptographic.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
  return s;
}

}  // namespace slotalign::binio
