#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ehrfuse/dataset.hpp"
#include "ehrfuse/error.hpp"
#include "ehrfuse/prompt.hpp"
#include "ehrfuse/random.hpp"

namespace ehrfuse {

/// Identifies the embedding source in cache headers.
enum class ProviderId : std::uint32_t {
  hashing = 1,
  random_frozen = 2,
  external = 3,
};

/// Set in the cache provider-id field when cells were rendered without templates.
inline constexpr std::uint32_t kRawRenderFlag = 0x100;

enum class RenderMode { prompts, raw };

/// Lower-cased ASCII alphanumeric runs; bytes >= 0x80 stay inside tokens so
/// UTF-8 words are kept whole.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

inline void l2_normalize(std::span<double> v) noexcept {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) return;
  for (double& x : v) x /= norm;
}

/// Frozen sentence encoder: prompt text to a fixed-length vector.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const noexcept = 0;
  virtual ProviderId id() const noexcept = 0;
  virtual std::uint64_t seed() const noexcept = 0;
  virtual std::vector<double> embed(std::string_view prompt) const = 0;
};

struct HashingEncoderConfig {
  std::size_t dim = 32;
  std::uint64_t seed = 0;
};

/// Signed feature hashing with mean pooling. Each token lands on one bucket
/// with a +-1 sign; the sentence vector is the token mean, L2-normalized.
class HashingEncoder final : public EmbeddingProvider {
 public:
  explicit HashingEncoder(HashingEncoderConfig config) : config_(config) {
    if (config_.dim < 2) throw ConfigError("hashing encoder needs dim >= 2");
  }

  std::size_t dim() const noexcept override { return config_.dim; }
  ProviderId id() const noexcept override { return ProviderId::hashing; }
  std::uint64_t seed() const noexcept override { return config_.seed; }

  std::vector<double> embed(std::string_view prompt) const override {
    std::vector<double> out(config_.dim, 0.0);
    const auto tokens = tokenize(prompt);
    if (tokens.empty()) return out;
    for (const auto& t : tokens) {
      const std::uint64_t h = splitmix64(fnv1a(t) ^ splitmix64(config_.seed));
      const double sign = (h >> 63) != 0 ? -1.0 : 1.0;
      out[h % config_.dim] += sign;
    }
    for (double& v : out) v /= static_cast<double>(tokens.size());
    l2_normalize(out);
    return out;
  }

 private:
  HashingEncoderConfig config_;
};

/// Stand-in for an encoder with random weights. Every token vector is drawn
/// from a seeded stream keyed by the whole token sequence and the position,
/// the way a randomly initialized contextual encoder mixes its input, so the
/// pooled output carries no compositional or semantic structure.
class RandomFrozenEncoder final : public EmbeddingProvider {
 public:
  RandomFrozenEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim_ < 2) throw ConfigError("random encoder needs dim >= 2");
  }

  std::size_t dim() const noexcept override { return dim_; }
  ProviderId id() const noexcept override { return ProviderId::random_frozen; }
  std::uint64_t seed() const noexcept override { return seed_; }

  std::vector<double> embed(std::string_view prompt) const override {
    std::vector<double> out(dim_, 0.0);
    const auto tokens = tokenize(prompt);
    if (tokens.empty()) return out;
    std::uint64_t context = splitmix64(seed_ ^ 0x5eed5eed5eed5eedULL);
    for (const auto& t : tokens) context = splitmix64(fnv1a(t, context) ^ (context >> 17));
    for (std::size_t k = 0; k < tokens.size(); ++k) {
      Rng rng(splitmix64(context + k));
      for (double& v : out) v += rng.normal();
    }
    for (double& v : out) v /= static_cast<double>(tokens.size());
    l2_normalize(out);
    return out;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

inline std::vector<double> hashing_embed(const HashingEncoderConfig& config, std::string_view prompt) {
  return HashingEncoder(config).embed(prompt);
}

inline std::vector<double> random_frozen_embed(std::uint64_t seed, std::string_view prompt, std::size_t dim = 32) {
  return RandomFrozenEncoder(dim, seed).embed(prompt);
}

/// N x m x d cell embeddings (row outer, column middle, component inner).
struct CellEmbeddingMatrix {
  std::uint64_t rows = 0;
  std::uint32_t columns = 0;
  std::uint32_t dim = 0;
  std::uint32_t provider_id = 0;
  std::uint64_t provider_seed = 0;
  std::uint64_t schema_hash = 0;
  std::vector<float> values;

  std::span<const float> cell(std::size_t i, std::size_t j) const noexcept {
    return {values.data() + (i * columns + j) * dim, dim};
  }
  std::span<float> cell(std::size_t i, std::size_t j) noexcept { return {values.data() + (i * columns + j) * dim, dim}; }

  /// Cells of row i as a contiguous m*d block.
  std::span<const float> row(std::size_t i) const noexcept {
    return {values.data() + i * columns * dim, static_cast<std::size_t>(columns) * dim};
  }

  bool operator==(const CellEmbeddingMatrix&) const = default;
};

inline std::uint32_t provider_field(ProviderId id, RenderMode mode) noexcept {
  return static_cast<std::uint32_t>(id) | (mode == RenderMode::raw ? kRawRenderFlag : 0u);
}

inline RenderMode render_mode_of(std::uint32_t provider_field) noexcept {
  return (provider_field & kRawRenderFlag) != 0 ? RenderMode::raw : RenderMode::prompts;
}

inline ProviderId provider_of(std::uint32_t provider_field) noexcept {
  return static_cast<ProviderId>(provider_field & 0xffu);
}

inline std::string render_cell(const FeatureSpec& spec, const Cell& cell, RenderMode mode) {
  return mode == RenderMode::raw ? render_raw(spec, cell).text : render_prompt(spec, cell).text;
}

/// Embeds every cell of an imputed dataset. Identical prompt texts are
/// embedded once.
inline CellEmbeddingMatrix embed_dataset(const Dataset& dataset, const EmbeddingProvider& provider,
                                         RenderMode mode = RenderMode::prompts) {
  CellEmbeddingMatrix out;
  out.rows = dataset.size();
  out.columns = static_cast<std::uint32_t>(dataset.width());
  out.dim = static_cast<std::uint32_t>(provider.dim());
  out.provider_id = provider_field(provider.id(), mode);
  out.provider_seed = provider.seed();
  out.schema_hash = schema_hash(dataset.schema);
  out.values.resize(out.rows * out.columns * out.dim);
  std::unordered_map<std::string, std::vector<float>> memo;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (std::size_t j = 0; j < dataset.width(); ++j) {
      auto text = render_cell(dataset.schema.features[j], dataset.rows[i][j], mode);
      auto it = memo.find(text);
      if (it == memo.end()) {
        const auto e = provider.embed(text);
        if (e.size() != provider.dim()) throw NumericalError("provider returned a vector of the wrong length");
        std::vector<float> f(e.begin(), e.end());
        for (float v : f) {
          if (!std::isfinite(v)) throw NumericalError("provider returned a non-finite embedding for \"" + text + "\"");
        }
        it = memo.emplace(std::move(text), std::move(f)).first;
      }
      std::copy(it->second.begin(), it->second.end(), out.cell(i, j).begin());
    }
  }
  return out;
}

}  // namespace ehrfuse
