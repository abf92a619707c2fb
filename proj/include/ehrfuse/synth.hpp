#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ehrfuse/csv.hpp"
#include "ehrfuse/dataset.hpp"
#include "ehrfuse/error.hpp"
#include "ehrfuse/prompt.hpp"
#include "ehrfuse/random.hpp"
#include "ehrfuse/schema.hpp"
#include "json.hpp"

namespace ehrfuse {

/// Synthetic table with a planted signal.
///
/// Classification: logit = numeric_weight * (u0 - c) + keyword_weight * (k - keyword_rate),
/// where u0 = num_0 / (levels - 1), c = u1 (num_1 scaled the same way) when
/// `ambiguous_pair` is set and 0.5 otherwise, and k marks the keyword in
/// note_0. The label is Bernoulli(sigmoid(logit)).
///
/// Regression: y = 2 num_0 + num_1 + 3 k + N(0, noise_sd^2).
///
/// Missing terms (no numerical column, no freetext column) drop out.
struct SynthSpec {
  std::size_t n_rows = 1000;
  std::size_t n_numerical = 2;
  std::size_t n_categorical = 1;
  std::size_t n_binary = 1;
  std::size_t n_freetext = 1;
  TaskKind task = TaskKind::classification;
  std::uint64_t seed = 0;
  std::size_t numeric_levels = 8;
  double numeric_weight = 6.0;
  double keyword_weight = 6.0;
  double keyword_rate = 0.5;
  bool ambiguous_pair = false;
  double missing_rate = 0.0;
  double noise_sd = 1.0;
  std::string keyword = "suspected septic shock";
};

struct SynthData {
  Schema schema;
  csv::Record header;
  std::vector<csv::Record> rows;
  nlohmann::json params;
};

namespace detail {

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words{"patient", "stable", "overnight", "vitals", "reviewed", "monitoring",
                                              "continued", "mild", "pain", "chest", "clear", "rhythm",
                                              "fluids", "given", "tolerated", "diet"};
  return words;
}

inline const std::vector<std::string>& category_values() {
  static const std::vector<std::string> values{"emergency", "elective", "urgent", "transfer"};
  return values;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

inline SynthData generate_synthetic(const SynthSpec& spec) {
  if (spec.n_rows == 0) throw ConfigError("synth: n_rows must be positive");
  if (spec.n_numerical + spec.n_categorical + spec.n_binary + spec.n_freetext == 0) {
    throw ConfigError("synth: at least one feature column is required");
  }
  if (spec.numeric_levels < 2) throw ConfigError("synth: numeric_levels must be >= 2");
  if (spec.ambiguous_pair && spec.n_numerical < 2) throw ConfigError("synth: ambiguous_pair needs two numerical columns");
  if (!(spec.keyword_rate >= 0.0 && spec.keyword_rate <= 1.0)) throw ConfigError("synth: keyword_rate outside [0,1]");
  if (!(spec.missing_rate >= 0.0 && spec.missing_rate < 1.0)) throw ConfigError("synth: missing_rate outside [0,1)");

  SynthData out;
  auto add = [&](const std::string& name, FeatureKind kind) {
    out.schema.features.push_back({name, kind, default_template(name, kind)});
    out.header.push_back(name);
  };
  for (std::size_t k = 0; k < spec.n_numerical; ++k) add("num_" + std::to_string(k), FeatureKind::numerical);
  for (std::size_t k = 0; k < spec.n_categorical; ++k) add("cat_" + std::to_string(k), FeatureKind::categorical);
  for (std::size_t k = 0; k < spec.n_binary; ++k) add("bin_" + std::to_string(k), FeatureKind::binary);
  for (std::size_t k = 0; k < spec.n_freetext; ++k) add("note_" + std::to_string(k), FeatureKind::freetext);
  out.schema.label.name = "label";
  out.schema.label.task = spec.task;
  out.schema.label.num_classes = spec.task == TaskKind::classification ? 2 : 0;
  out.header.push_back("label");
  validate_schema(out.schema);

  Rng rng(spec.seed);
  const double top = static_cast<double>(spec.numeric_levels - 1);
  const auto& words = detail::filler_words();
  const auto& cats = detail::category_values();
  std::size_t positives = 0;
  std::size_t keyword_rows = 0;
  for (std::size_t i = 0; i < spec.n_rows; ++i) {
    csv::Record rec;
    std::vector<double> nums;
    for (std::size_t k = 0; k < spec.n_numerical; ++k) {
      nums.push_back(static_cast<double>(rng.below(spec.numeric_levels)));
      rec.push_back(format_number(nums.back()));
    }
    for (std::size_t k = 0; k < spec.n_categorical; ++k) rec.push_back(cats[rng.below(cats.size())]);
    for (std::size_t k = 0; k < spec.n_binary; ++k) rec.push_back(rng.bernoulli(0.5) ? "yes" : "no");
    bool keyword = false;
    for (std::size_t k = 0; k < spec.n_freetext; ++k) {
      const std::size_t len = 5 + rng.below(5);
      std::vector<std::string> note;
      for (std::size_t w = 0; w < len; ++w) note.push_back(words[rng.below(words.size())]);
      if (k == 0 && rng.bernoulli(spec.keyword_rate)) {
        keyword = true;
        note.insert(note.begin() + static_cast<std::ptrdiff_t>(rng.below(note.size() + 1)), spec.keyword);
      }
      std::string text;
      for (const auto& w : note) text += (text.empty() ? "" : " ") + w;
      text += ".";
      text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
      rec.push_back(std::move(text));
    }
    keyword_rows += keyword ? 1 : 0;
    const double kw = keyword ? 1.0 : 0.0;
    double label = 0.0;
    if (spec.task == TaskKind::classification) {
      double logit = 0.0;
      if (!nums.empty()) {
        const double centre = spec.ambiguous_pair ? nums[1] / top : 0.5;
        logit += spec.numeric_weight * (nums[0] / top - centre);
      }
      if (spec.n_freetext > 0) logit += spec.keyword_weight * (kw - spec.keyword_rate);
      label = rng.bernoulli(detail::sigmoid(logit)) ? 1.0 : 0.0;
      positives += label != 0.0 ? 1 : 0;
    } else {
      label = 3.0 * kw + rng.normal(0.0, spec.noise_sd);
      if (!nums.empty()) label += 2.0 * nums[0];
      if (nums.size() > 1) label += nums[1];
    }
    for (auto& cell : rec) {
      if (spec.missing_rate > 0.0 && rng.bernoulli(spec.missing_rate)) cell.clear();
    }
    rec.push_back(spec.task == TaskKind::classification ? format_number(label) : [&] {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", label);
      return std::string(buf);
    }());
    out.rows.push_back(std::move(rec));
  }

  out.params = {
      {"n_rows", spec.n_rows},
      {"n_numerical", spec.n_numerical},
      {"n_categorical", spec.n_categorical},
      {"n_binary", spec.n_binary},
      {"n_freetext", spec.n_freetext},
      {"task", spec.task == TaskKind::classification ? "classification" : "regression"},
      {"seed", spec.seed},
      {"numeric_levels", spec.numeric_levels},
      {"numeric_weight", spec.numeric_weight},
      {"keyword_weight", spec.keyword_weight},
      {"keyword_rate", spec.keyword_rate},
      {"keyword", spec.keyword},
      {"ambiguous_pair", spec.ambiguous_pair},
      {"missing_rate", spec.missing_rate},
      {"noise_sd", spec.noise_sd},
      {"signal_columns", nlohmann::json::array()},
      {"keyword_rows", keyword_rows},
  };
  if (spec.n_numerical > 0) out.params["signal_columns"].push_back("num_0");
  if (spec.ambiguous_pair || (spec.task == TaskKind::regression && spec.n_numerical > 1)) {
    out.params["signal_columns"].push_back("num_1");
  }
  if (spec.n_freetext > 0) out.params["signal_columns"].push_back("note_0");
  if (spec.task == TaskKind::classification) {
    out.params["positives"] = positives;
    out.params["label_rule"] = spec.n_freetext > 0 ? "Bernoulli(sigmoid(numeric_weight*(num_0/(levels-1) - centre) + "
                                                     "keyword_weight*(keyword_in_note_0 - keyword_rate)))"
                                                   : "Bernoulli(sigmoid(numeric_weight*(num_0/(levels-1) - centre)))";
    out.params["centre"] = spec.ambiguous_pair ? "num_1/(levels-1)" : "0.5";
  } else {
    out.params["label_rule"] = "2*num_0 + num_1 + 3*keyword_in_note_0 + Normal(0, noise_sd^2)";
  }
  return out;
}

/// Parsed in memory exactly as load_dataset would read the written table.
inline Dataset synthetic_dataset(const SynthData& data) {
  std::vector<csv::Record> records{data.header};
  records.insert(records.end(), data.rows.begin(), data.rows.end());
  return dataset_from_records(data.schema, std::move(records), "<synthetic>");
}

inline void write_synthetic(const SynthData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_schema(data.schema, dir / "schema.json");
  std::ofstream table(dir / "table.csv", std::ios::binary);
  if (!table) throw DataError("cannot write " + (dir / "table.csv").string());
  csv::write_record(table, data.header);
  for (const auto& r : data.rows) csv::write_record(table, r);
  std::ofstream params(dir / "params.json");
  params << data.params.dump(2) << '\n';
}

}  // namespace ehrfuse
