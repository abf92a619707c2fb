#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <vector>

#include "ehrfuse/dataset.hpp"
#include "ehrfuse/prompt_template.hpp"
#include "ehrfuse/schema.hpp"

namespace ehrfuse {

struct MedicalPrompt {
  std::string text;
  std::size_t row = 0;
  std::size_t column = 0;
};

/// Integers print without a decimal point; other values use the shortest
/// round-trip decimal, cut to at most four fractional digits.
inline std::string format_number(double value) {
  if (value == 0.0) return "0";
  if (value == std::floor(value) && std::abs(value) < 1e15) {
    return std::to_string(static_cast<long long>(value));
  }
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed);
  std::string text(buf, res.ptr);
  const auto dot = text.find('.');
  if (dot != std::string::npos && text.size() - dot - 1 > 4) {
    res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed, 4);
    text.assign(buf, res.ptr);
    while (text.back() == '0') text.pop_back();
    if (text.back() == '.') text.pop_back();
    if (text == "-0") text = "0";
  }
  return text;
}

/// Bare cell text, as used by the prompt-free ablation.
inline std::string format_cell(const Cell& cell) {
  if (const auto* v = std::get_if<double>(&cell)) return format_number(*v);
  if (const auto* s = std::get_if<std::string>(&cell)) return *s;
  if (const auto* b = std::get_if<bool>(&cell)) return *b ? "yes" : "no";
  throw DataError("cannot render a missing cell; impute first");
}

inline std::string substitute(std::string_view tmpl, std::string_view value) {
  const auto pos = tmpl.find(kValuePlaceholder);
  std::string out;
  out.reserve(tmpl.size() + value.size());
  out.append(tmpl.substr(0, pos));
  out.append(value);
  out.append(tmpl.substr(pos + kValuePlaceholder.size()));
  return out;
}

inline MedicalPrompt render_prompt(const FeatureSpec& spec, const Cell& cell, std::size_t row = 0,
                                   std::size_t column = 0) {
  MedicalPrompt p{{}, row, column};
  if (const auto* bin = std::get_if<BinaryTemplate>(&spec.tmpl)) {
    const auto* b = std::get_if<bool>(&cell);
    if (b == nullptr) throw DataError("feature \"" + spec.name + "\": binary template needs a yes/no cell");
    p.text = *b ? bin->positive_text : bin->negative_text;
  } else {
    p.text = substitute(std::get<ScalarTemplate>(spec.tmpl).text, format_cell(cell));
  }
  return p;
}

inline MedicalPrompt render_raw(const FeatureSpec& /*spec*/, const Cell& cell, std::size_t row = 0,
                                std::size_t column = 0) {
  return MedicalPrompt{format_cell(cell), row, column};
}

inline std::vector<MedicalPrompt> render_row(const Schema& schema, const std::vector<Cell>& row,
                                             std::size_t row_index = 0) {
  if (schema.features.empty()) throw ConfigError("cannot render a row for an empty schema");
  if (row.size() != schema.width()) throw DataError("row width does not match schema");
  std::vector<MedicalPrompt> out;
  out.reserve(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out.push_back(render_prompt(schema.features[j], row[j], row_index, j));
  return out;
}

}  // namespace ehrfuse
