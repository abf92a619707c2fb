#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <variant>

#include "ehrfuse/error.hpp"

namespace ehrfuse {

enum class FeatureKind { categorical, numerical, binary, freetext };

inline constexpr std::string_view kValuePlaceholder = "[value]";

inline std::string_view to_string(FeatureKind kind) noexcept {
  switch (kind) {
    case FeatureKind::categorical: return "categorical";
    case FeatureKind::numerical: return "numerical";
    case FeatureKind::binary: return "binary";
    case FeatureKind::freetext: return "freetext";
  }
  return "unknown";
}

inline FeatureKind parse_feature_kind(std::string_view text) {
  if (text == "categorical") return FeatureKind::categorical;
  if (text == "numerical") return FeatureKind::numerical;
  if (text == "binary") return FeatureKind::binary;
  if (text == "freetext") return FeatureKind::freetext;
  throw ConfigError("unknown feature kind \"" + std::string(text) + "\"");
}

/// Sentence with exactly one "[value]" placeholder.
struct ScalarTemplate {
  std::string text;
  bool operator==(const ScalarTemplate&) const = default;
};

/// Two complete sentences selected by the binary cell value.
struct BinaryTemplate {
  std::string positive_text;
  std::string negative_text;
  bool operator==(const BinaryTemplate&) const = default;
};

using PromptTemplate = std::variant<ScalarTemplate, BinaryTemplate>;

inline std::size_t count_placeholders(std::string_view text) noexcept {
  std::size_t n = 0;
  for (auto pos = text.find(kValuePlaceholder); pos != std::string_view::npos;
       pos = text.find(kValuePlaceholder, pos + kValuePlaceholder.size())) {
    ++n;
  }
  return n;
}

/// Throws ConfigError naming the feature when the template does not fit its kind.
inline void validate_template(std::string_view feature, FeatureKind kind, const PromptTemplate& tmpl) {
  const std::string where = "feature \"" + std::string(feature) + "\": ";
  if (kind == FeatureKind::binary) {
    const auto* bin = std::get_if<BinaryTemplate>(&tmpl);
    if (bin == nullptr) throw ConfigError(where + "binary features need template_pos and template_neg");
    if (bin->positive_text.empty() || bin->negative_text.empty()) {
      throw ConfigError(where + "binary template sentences must be non-empty");
    }
    if (count_placeholders(bin->positive_text) != 0 || count_placeholders(bin->negative_text) != 0) {
      throw ConfigError(where + "binary templates must not contain [value]");
    }
    return;
  }
  const auto* scalar = std::get_if<ScalarTemplate>(&tmpl);
  if (scalar == nullptr) throw ConfigError(where + "scalar features need a single \"template\"");
  const auto n = count_placeholders(scalar->text);
  if (n != 1) {
    throw ConfigError(where + "template must contain [value] exactly once (found " + std::to_string(n) + ")");
  }
}

/// Feature name as it reads inside a sentence: lower-cased, underscores as spaces.
inline std::string humanize_name(std::string_view name) {
  std::string out;
  out.reserve(name.size());
  for (char c : name) {
    out.push_back(c == '_' ? ' ' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

/// Fallback phrasing used when a schema entry carries no template.
inline PromptTemplate default_template(std::string_view name, FeatureKind kind) {
  const std::string human = humanize_name(name);
  switch (kind) {
    case FeatureKind::numerical:
    case FeatureKind::categorical:
      return ScalarTemplate{"The " + human + " of the patient is [value]."};
    case FeatureKind::binary:
      return BinaryTemplate{"The patient has " + human + ".", "The patient does not have " + human + "."};
    case FeatureKind::freetext:
      return ScalarTemplate{human + ": [value]"};
  }
  return ScalarTemplate{"[value]"};
}

}  // namespace ehrfuse
