#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ehrfuse/error.hpp"
#include "ehrfuse/prompt_template.hpp"
#include "ehrfuse/random.hpp"
#include "json.hpp"

namespace ehrfuse {

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::numerical;
  PromptTemplate tmpl;

  bool structured() const noexcept { return kind != FeatureKind::freetext; }
  bool operator==(const FeatureSpec&) const = default;
};

enum class TaskKind { classification, regression };

struct LabelSpec {
  std::string name;
  TaskKind task = TaskKind::classification;
  std::size_t num_classes = 2;  // ignored for regression

  bool operator==(const LabelSpec&) const = default;
};

/// Ordered feature list plus label. Feature order fixes the column index
/// used by every downstream stage.
struct Schema {
  std::vector<FeatureSpec> features;
  LabelSpec label;

  std::size_t width() const noexcept { return features.size(); }

  std::optional<std::size_t> index_of(std::string_view name) const noexcept {
    for (std::size_t j = 0; j < features.size(); ++j) {
      if (features[j].name == name) return j;
    }
    return std::nullopt;
  }

  bool has_freetext() const noexcept {
    for (const auto& f : features) {
      if (f.kind == FeatureKind::freetext) return true;
    }
    return false;
  }

  bool operator==(const Schema&) const = default;
};

inline void validate_schema(const Schema& schema) {
  if (schema.features.empty()) throw ConfigError("schema must declare at least one feature");
  std::set<std::string> seen;
  for (const auto& f : schema.features) {
    if (f.name.empty()) throw ConfigError("feature name must be non-empty");
    if (!seen.insert(f.name).second) throw ConfigError("duplicate feature name \"" + f.name + "\"");
    validate_template(f.name, f.kind, f.tmpl);
  }
  if (schema.label.name.empty()) throw ConfigError("label name must be non-empty");
  if (seen.count(schema.label.name) != 0) {
    throw ConfigError("label \"" + schema.label.name + "\" collides with a feature name");
  }
  if (schema.label.task == TaskKind::classification && schema.label.num_classes < 2) {
    throw ConfigError("classification label needs num_classes >= 2");
  }
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                                const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key \"" + key + "\"");
  }
}

inline std::string require_string(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_string()) {
    throw ConfigError(where + ": \"" + key + "\" must be a string");
  }
  return obj[key].get<std::string>();
}

}  // namespace detail

inline Schema schema_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("schema: top level must be an object");
  detail::reject_unknown_keys(doc, {"features", "label"}, "schema");
  if (!doc.contains("features") || !doc["features"].is_array()) {
    throw ConfigError("schema: \"features\" must be an array");
  }
  Schema schema;
  for (const auto& item : doc["features"]) {
    if (!item.is_object()) throw ConfigError("schema: feature entries must be objects");
    detail::reject_unknown_keys(item, {"name", "kind", "template", "template_pos", "template_neg"},
                                "schema feature");
    FeatureSpec f;
    f.name = detail::require_string(item, "name", "schema feature");
    const std::string where = "schema feature \"" + f.name + "\"";
    f.kind = parse_feature_kind(detail::require_string(item, "kind", where));
    if (f.kind == FeatureKind::binary) {
      if (item.contains("template")) throw ConfigError(where + ": binary features use template_pos/template_neg");
      const bool has_pos = item.contains("template_pos");
      const bool has_neg = item.contains("template_neg");
      if (has_pos != has_neg) throw ConfigError(where + ": template_pos and template_neg must come together");
      f.tmpl = has_pos ? PromptTemplate{BinaryTemplate{detail::require_string(item, "template_pos", where),
                                                       detail::require_string(item, "template_neg", where)}}
                       : default_template(f.name, f.kind);
    } else {
      if (item.contains("template_pos") || item.contains("template_neg")) {
        throw ConfigError(where + ": template_pos/template_neg apply to binary features only");
      }
      f.tmpl = item.contains("template") ? PromptTemplate{ScalarTemplate{detail::require_string(item, "template", where)}}
                                         : default_template(f.name, f.kind);
    }
    schema.features.push_back(std::move(f));
  }
  if (!doc.contains("label") || !doc["label"].is_object()) throw ConfigError("schema: \"label\" must be an object");
  const auto& label = doc["label"];
  detail::reject_unknown_keys(label, {"name", "task", "num_classes"}, "schema label");
  schema.label.name = detail::require_string(label, "name", "schema label");
  const auto task = detail::require_string(label, "task", "schema label");
  if (task == "classification") {
    schema.label.task = TaskKind::classification;
    if (label.contains("num_classes")) {
      if (!label["num_classes"].is_number_unsigned()) throw ConfigError("schema label: num_classes must be a positive integer");
      schema.label.num_classes = label["num_classes"].get<std::size_t>();
    }
  } else if (task == "regression") {
    schema.label.task = TaskKind::regression;
    schema.label.num_classes = 0;
  } else {
    throw ConfigError("schema label: task must be \"classification\" or \"regression\"");
  }
  validate_schema(schema);
  return schema;
}

/// Canonical form: resolved templates, sorted keys, compact separators.
inline nlohmann::json schema_to_json(const Schema& schema) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : schema.features) {
    nlohmann::json item{{"name", f.name}, {"kind", std::string(to_string(f.kind))}};
    if (const auto* bin = std::get_if<BinaryTemplate>(&f.tmpl)) {
      item["template_pos"] = bin->positive_text;
      item["template_neg"] = bin->negative_text;
    } else {
      item["template"] = std::get<ScalarTemplate>(f.tmpl).text;
    }
    features.push_back(std::move(item));
  }
  nlohmann::json label{{"name", schema.label.name}};
  if (schema.label.task == TaskKind::classification) {
    label["task"] = "classification";
    label["num_classes"] = schema.label.num_classes;
  } else {
    label["task"] = "regression";
  }
  return nlohmann::json{{"features", std::move(features)}, {"label", std::move(label)}};
}

/// FNV-1a over the canonical schema JSON; recorded in embedding caches.
inline std::uint64_t schema_hash(const Schema& schema) { return fnv1a(schema_to_json(schema).dump()); }

inline Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("schema " + path.string() + ": " + e.what());
  }
  return schema_from_json(doc);
}

inline void save_schema(const Schema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write schema file " + path.string());
  out << schema_to_json(schema).dump(2) << '\n';
}

}  // namespace ehrfuse
