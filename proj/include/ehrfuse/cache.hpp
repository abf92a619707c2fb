#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ehrfuse/embedding.hpp"
#include "ehrfuse/error.hpp"
#include "json.hpp"

namespace ehrfuse {

// Cache layout, little-endian:
//   "CEMB" | u32 version=1 | u64 N | u32 m | u32 d | u32 provider | u64 seed |
//   u64 schema hash | N*m*d f32, row-major (row, column, component).
inline constexpr std::array<char, 4> kCacheMagic{'C', 'E', 'M', 'B'};
inline constexpr std::uint32_t kCacheVersion = 1;
inline constexpr std::size_t kCacheHeaderBytes = 44;

namespace detail {

template <class T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    out.push_back(static_cast<char>(u & 0xffu));
    if constexpr (sizeof(T) > 1) u = static_cast<U>(u >> 8);
  }
}

template <class T>
T get_le(const unsigned char* p) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t b = sizeof(T); b-- > 0;) u = static_cast<U>((u << 8) | p[b]);
  return static_cast<T>(u);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

}  // namespace detail

inline std::string encode_cache(const CellEmbeddingMatrix& m) {
  if (m.values.size() != m.rows * m.columns * m.dim) throw DataError("embedding matrix shape does not match payload");
  std::string out;
  out.reserve(kCacheHeaderBytes + m.values.size() * 4);
  out.append(kCacheMagic.data(), kCacheMagic.size());
  detail::put_le<std::uint32_t>(out, kCacheVersion);
  detail::put_le<std::uint64_t>(out, m.rows);
  detail::put_le<std::uint32_t>(out, m.columns);
  detail::put_le<std::uint32_t>(out, m.dim);
  detail::put_le<std::uint32_t>(out, m.provider_id);
  detail::put_le<std::uint64_t>(out, m.provider_seed);
  detail::put_le<std::uint64_t>(out, m.schema_hash);
  for (float v : m.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline CellEmbeddingMatrix decode_cache(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8 || std::memcmp(p, kCacheMagic.data(), 4) != 0 ||
      detail::get_le<std::uint32_t>(p + 4) != kCacheVersion) {
    throw DataError("incompatible cache: bad magic or version");
  }
  if (bytes.size() < kCacheHeaderBytes) throw DataError("corrupt cache: truncated header");
  CellEmbeddingMatrix m;
  m.rows = detail::get_le<std::uint64_t>(p + 8);
  m.columns = detail::get_le<std::uint32_t>(p + 16);
  m.dim = detail::get_le<std::uint32_t>(p + 20);
  m.provider_id = detail::get_le<std::uint32_t>(p + 24);
  m.provider_seed = detail::get_le<std::uint64_t>(p + 28);
  m.schema_hash = detail::get_le<std::uint64_t>(p + 36);
  const unsigned __int128 count = static_cast<unsigned __int128>(m.rows) * m.columns * m.dim;
  if (count * 4 != bytes.size() - kCacheHeaderBytes) {
    throw DataError("corrupt cache: payload holds " + std::to_string(bytes.size() - kCacheHeaderBytes) +
                    " bytes, header implies " + std::to_string(static_cast<std::uint64_t>(count * 4)));
  }
  m.values.resize(static_cast<std::size_t>(count));
  const unsigned char* payload = p + kCacheHeaderBytes;
  for (std::size_t k = 0; k < m.values.size(); ++k) {
    m.values[k] = std::bit_cast<float>(detail::get_le<std::uint32_t>(payload + 4 * k));
    if (!std::isfinite(m.values[k])) throw DataError("corrupt cache: non-finite value at index " + std::to_string(k));
  }
  return m;
}

inline void write_cache(const CellEmbeddingMatrix& m, const std::filesystem::path& path) {
  detail::write_file(path, encode_cache(m));
}

inline CellEmbeddingMatrix read_cache(const std::filesystem::path& path) {
  return decode_cache(detail::read_file(path));
}

/// What a consumer expects of a cache; unset fields are not checked.
struct CacheExpectation {
  std::optional<std::uint64_t> rows;
  std::optional<std::uint32_t> columns;
  std::optional<std::uint32_t> dim;
  std::optional<std::uint64_t> schema_hash;
  std::optional<RenderMode> render_mode;
};

inline void check_cache(const CellEmbeddingMatrix& m, const CacheExpectation& want) {
  if (want.schema_hash && *want.schema_hash != m.schema_hash) throw DataError("cache built for different schema");
  if (want.dim && *want.dim != m.dim) {
    throw DataError("cache dimension mismatch: cache has d=" + std::to_string(m.dim) + ", run configured d=" +
                    std::to_string(*want.dim));
  }
  if (want.rows && *want.rows != m.rows) {
    throw DataError("cache has " + std::to_string(m.rows) + " rows, dataset has " + std::to_string(*want.rows));
  }
  if (want.columns && *want.columns != m.columns) {
    throw DataError("cache has " + std::to_string(m.columns) + " columns, dataset has " + std::to_string(*want.columns));
  }
  if (want.render_mode && *want.render_mode != render_mode_of(m.provider_id)) {
    throw DataError(*want.render_mode == RenderMode::raw ? "cache was built from prompts, raw-value cache required"
                                                        : "cache was built from raw values, prompt cache required");
  }
}

inline CellEmbeddingMatrix read_cache(const std::filesystem::path& path, const CacheExpectation& want) {
  auto m = read_cache(path);
  check_cache(m, want);
  return m;
}

/// Prompt dump consumed by the external encoder: a header record
/// {"format","version","N","m","schema_hash","render"} followed by one
/// {"i","j","text"} record per cell, newline-delimited. schema_hash is the
/// 16-digit hex form of the value the cache header must carry.
inline std::size_t dump_prompts(const Dataset& dataset, RenderMode mode, std::ostream& out) {
  nlohmann::json header{{"format", "ehrfuse-prompts"},
                        {"version", 1},
                        {"N", dataset.size()},
                        {"m", dataset.width()},
                        {"schema_hash", hex64(schema_hash(dataset.schema))},
                        {"render", mode == RenderMode::raw ? "raw" : "prompts"}};
  out << header.dump() << '\n';
  std::size_t n = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (std::size_t j = 0; j < dataset.width(); ++j) {
      nlohmann::json rec{{"i", i}, {"j", j}, {"text", render_cell(dataset.schema.features[j], dataset.rows[i][j], mode)}};
      out << rec.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
      ++n;
    }
  }
  return n;
}

}  // namespace ehrfuse
