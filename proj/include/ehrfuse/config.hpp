#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ehrfuse/corruption.hpp"
#include "ehrfuse/error.hpp"
#include "ehrfuse/random.hpp"
#include "ehrfuse/train.hpp"
#include "json.hpp"

namespace ehrfuse {

struct DataConfig {
  std::filesystem::path schema;
  std::filesystem::path table;
  /// Empty means <run_root>/cache-<embedding hash>.cemb.
  std::filesystem::path cache;
  std::filesystem::path run_root = "runs";
  std::uint64_t split_seed = 0;
};

struct EvalConfig {
  double threshold = 0.5;
  std::size_t grid_points = 101;
};

struct ExperimentConfig {
  Variant variant = Variant::full;
  std::vector<double> rates{0.0, 0.05, 0.1, 0.15, 0.2};
  std::uint64_t corruption_seed = 0;
  CorruptionScope scope = CorruptionScope::all_splits;
};

struct RunConfig {
  DataConfig data;
  ProviderConfig provider;
  TrainConfig train;  // train.fusion.dim always equals provider.dim
  EvalConfig eval;
  ExperimentConfig experiment;
};

inline std::string_view to_string(ProviderKind k) noexcept {
  switch (k) {
    case ProviderKind::hashing: return "hashing";
    case ProviderKind::random: return "random";
    case ProviderKind::external: return "external";
  }
  return "?";
}

inline std::string_view to_string(CorruptionScope s) noexcept {
  return s == CorruptionScope::all_splits ? "all" : "test";
}

/// Every accepted key with its default value.
inline nlohmann::json default_config_json() {
  const RunConfig d;
  return {
      {"data",
       {{"schema", ""}, {"table", ""}, {"cache", ""}, {"run_root", d.data.run_root.string()},
        {"split_seed", d.data.split_seed}}},
      {"provider", {{"kind", to_string(d.provider.kind)}, {"dim", d.provider.dim}, {"seed", d.provider.seed}}},
      {"fusion",
       {{"layers", d.train.fusion.layers},
        {"heads", d.train.fusion.heads},
        {"ffn_dim", d.train.fusion.ffn_dim},
        {"ln_eps", d.train.fusion.ln_eps}}},
      {"train",
       {{"lr", d.train.lr},
        {"batch_size", d.train.batch_size},
        {"max_epochs", d.train.max_epochs},
        {"patience", d.train.patience},
        {"seeds", d.train.seeds},
        {"beta1", d.train.beta1},
        {"beta2", d.train.beta2},
        {"adam_eps", d.train.adam_eps},
        {"threads", d.train.threads}}},
      {"eval", {{"threshold", d.eval.threshold}, {"grid_points", d.eval.grid_points}}},
      {"experiment",
       {{"variant", to_string(d.experiment.variant)},
        {"rates", d.experiment.rates},
        {"corruption_seed", d.experiment.corruption_seed},
        {"scope", to_string(d.experiment.scope)}}},
  };
}

namespace detail {

inline void merge_known(nlohmann::json& into, const nlohmann::json& from, const std::string& prefix) {
  if (!from.is_object()) throw ConfigError((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
  for (const auto& [key, value] : from.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!into.contains(key)) throw ConfigError("unknown config key \"" + path + "\"");
    if (into[key].is_object()) {
      merge_known(into[key], value, path);
    } else {
      into[key] = value;
    }
  }
}

inline const nlohmann::json& field(const nlohmann::json& j, const std::string& section, const std::string& key) {
  return j.at(section).at(key);
}

inline std::uint64_t get_uint(const nlohmann::json& j, const std::string& section, const std::string& key) {
  const auto& v = field(j, section, key);
  if (!v.is_number_unsigned()) {
    throw ConfigError(section + "." + key + ": expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline double get_real(const nlohmann::json& j, const std::string& section, const std::string& key) {
  const auto& v = field(j, section, key);
  if (!v.is_number()) throw ConfigError(section + "." + key + ": expected a number");
  return v.get<double>();
}

inline std::string get_string(const nlohmann::json& j, const std::string& section, const std::string& key) {
  const auto& v = field(j, section, key);
  if (!v.is_string()) throw ConfigError(section + "." + key + ": expected a string");
  return v.get<std::string>();
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : (base / path).lexically_normal();
}

}  // namespace detail

/// Applies one "section.key=value" override. The value is parsed as JSON and
/// falls back to a plain string.
inline void apply_override(nlohmann::json& cfg, const std::string& assignment) {
  std::string text = assignment;
  if (text.rfind("--", 0) == 0) text.erase(0, 2);
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("override \"" + assignment + "\" must look like --section.key=value");
  const std::string path = text.substr(0, eq);
  const std::string raw = text.substr(eq + 1);
  const auto dot = path.find('.');
  if (dot == std::string::npos) throw ConfigError("override \"" + path + "\" must name section.key");
  const std::string section = path.substr(0, dot);
  const std::string key = path.substr(dot + 1);
  if (!cfg.contains(section) || !cfg[section].is_object() || !cfg[section].contains(key)) {
    throw ConfigError("unknown config key \"" + path + "\"");
  }
  auto value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  cfg[section][key] = std::move(value);
}

/// Fills the typed config from a merged document. Relative data paths
/// resolve against `base`.
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  using namespace detail;
  RunConfig c;
  c.data.schema = resolve(base, get_string(j, "data", "schema"));
  c.data.table = resolve(base, get_string(j, "data", "table"));
  c.data.cache = resolve(base, get_string(j, "data", "cache"));
  c.data.run_root = resolve(base, get_string(j, "data", "run_root"));
  c.data.split_seed = get_uint(j, "data", "split_seed");

  const auto kind = get_string(j, "provider", "kind");
  if (kind == "hashing") {
    c.provider.kind = ProviderKind::hashing;
  } else if (kind == "random") {
    c.provider.kind = ProviderKind::random;
  } else if (kind == "external") {
    c.provider.kind = ProviderKind::external;
  } else {
    throw ConfigError("provider.kind: expected hashing, random or external, got \"" + kind + "\"");
  }
  c.provider.dim = get_uint(j, "provider", "dim");
  c.provider.seed = get_uint(j, "provider", "seed");
  if (c.provider.dim < 2) throw ConfigError("provider.dim must be >= 2");

  auto& f = c.train.fusion;
  f.dim = c.provider.dim;
  f.layers = get_uint(j, "fusion", "layers");
  f.heads = get_uint(j, "fusion", "heads");
  f.ffn_dim = get_uint(j, "fusion", "ffn_dim");
  f.ln_eps = get_real(j, "fusion", "ln_eps");
  if (f.heads >= 1 && f.dim % f.heads != 0) {
    throw ConfigError("fusion.heads must divide provider.dim (" + std::to_string(f.dim) + ")");
  }
  if (!(f.ln_eps > 0.0)) throw ConfigError("fusion.ln_eps must be positive");

  auto& t = c.train;
  t.lr = get_real(j, "train", "lr");
  t.batch_size = get_uint(j, "train", "batch_size");
  t.max_epochs = get_uint(j, "train", "max_epochs");
  t.patience = get_uint(j, "train", "patience");
  t.beta1 = get_real(j, "train", "beta1");
  t.beta2 = get_real(j, "train", "beta2");
  t.adam_eps = get_real(j, "train", "adam_eps");
  t.threads = get_uint(j, "train", "threads");
  t.seeds.clear();
  const auto& seeds = field(j, "train", "seeds");
  if (!seeds.is_array()) throw ConfigError("train.seeds: expected an array of integers");
  for (const auto& s : seeds) {
    if (!s.is_number_unsigned()) throw ConfigError("train.seeds: expected an array of non-negative integers");
    t.seeds.push_back(s.get<std::uint64_t>());
  }
  if (!(t.beta1 >= 0.0 && t.beta1 < 1.0)) throw ConfigError("train.beta1 must lie in [0, 1)");
  if (!(t.beta2 >= 0.0 && t.beta2 < 1.0)) throw ConfigError("train.beta2 must lie in [0, 1)");
  if (!(t.adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");

  c.eval.threshold = get_real(j, "eval", "threshold");
  c.eval.grid_points = get_uint(j, "eval", "grid_points");
  if (!(c.eval.threshold >= 0.0 && c.eval.threshold <= 1.0)) throw ConfigError("eval.threshold must lie in [0, 1]");
  if (c.eval.grid_points < 2) throw ConfigError("eval.grid_points must be >= 2");

  auto& e = c.experiment;
  e.variant = parse_variant(get_string(j, "experiment", "variant"));
  t.variant = e.variant;
  const auto& rates = field(j, "experiment", "rates");
  if (!rates.is_array()) throw ConfigError("experiment.rates: expected an array of numbers");
  e.rates.clear();
  for (const auto& r : rates) {
    if (!r.is_number()) throw ConfigError("experiment.rates: expected an array of numbers");
    const double v = r.get<double>();
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("experiment.rates: every rate must lie in [0, 1]");
    e.rates.push_back(v);
  }
  e.corruption_seed = get_uint(j, "experiment", "corruption_seed");
  const auto scope = get_string(j, "experiment", "scope");
  if (scope == "all") {
    e.scope = CorruptionScope::all_splits;
  } else if (scope == "test") {
    e.scope = CorruptionScope::test_only;
  } else {
    throw ConfigError("experiment.scope: expected all or test, got \"" + scope + "\"");
  }

  try {
    t.validate();
  } catch (const ConfigError& err) {
    std::string msg = err.what();
    if (msg.rfind("fusion.dim", 0) == 0) msg.replace(0, 10, "provider.dim");
    throw ConfigError(msg);
  }
  return c;
}

/// Defaults, then the file, then overrides. Returns the merged document.
inline nlohmann::json merged_config_json(const std::optional<std::filesystem::path>& file,
                                         const std::vector<std::string>& overrides = {}) {
  auto cfg = default_config_json();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file " + file->string());
    auto parsed = nlohmann::json::parse(in, nullptr, false);
    if (parsed.is_discarded()) throw ConfigError("config file " + file->string() + " is not valid JSON");
    detail::merge_known(cfg, parsed, "");
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

struct LoadedConfig {
  RunConfig config;
  nlohmann::json document;
};

inline LoadedConfig load_run_config(const std::optional<std::filesystem::path>& file,
                                    const std::vector<std::string>& overrides = {}) {
  auto doc = merged_config_json(file, overrides);
  const std::filesystem::path base = file ? file->parent_path() : std::filesystem::path{};
  return {run_config_from_json(doc, base), std::move(doc)};
}

/// Hash of the whole merged document; names the run directory.
inline std::string config_hash(const nlohmann::json& doc) { return hex64(fnv1a(doc.dump())); }

/// Hash of the inputs that determine the cell embeddings only.
inline std::string embedding_hash(const nlohmann::json& doc, Variant variant) {
  const nlohmann::json key{{"data", {{"schema", doc["data"]["schema"]},
                                     {"table", doc["data"]["table"]},
                                     {"split_seed", doc["data"]["split_seed"]}}},
                           {"provider", doc["provider"]},
                           {"variant", to_string(variant)}};
  return hex64(fnv1a(key.dump()));
}

inline std::filesystem::path run_dir(const LoadedConfig& lc) {
  return lc.config.data.run_root / config_hash(lc.document);
}

/// Cache path for a variant. An explicit data.cache applies to the
/// configured variant only.
inline std::filesystem::path cache_path(const LoadedConfig& lc, Variant variant) {
  if (!lc.config.data.cache.empty() && variant == lc.config.experiment.variant) return lc.config.data.cache;
  return lc.config.data.run_root / ("cache-" + embedding_hash(lc.document, variant) + ".cemb");
}

}  // namespace ehrfuse
