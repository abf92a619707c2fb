#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ehrfuse/csv.hpp"
#include "ehrfuse/error.hpp"
#include "ehrfuse/random.hpp"
#include "ehrfuse/schema.hpp"

namespace ehrfuse {

inline constexpr std::string_view kMissingTextSentinel = "There is no data available.";

struct Missing {
  bool operator==(const Missing&) const = default;
};

/// One table cell. Numerical cells hold double, categorical and freetext hold
/// string, binary holds bool.
using Cell = std::variant<Missing, double, std::string, bool>;

inline bool is_missing(const Cell& c) noexcept { return std::holds_alternative<Missing>(c); }

enum class SplitTag : std::uint8_t { unassigned, train, val, test };

struct Dataset {
  Schema schema;
  std::vector<std::vector<Cell>> rows;
  /// Class index (as an integral double) or regression target.
  std::vector<double> labels;
  std::vector<SplitTag> tags;
  /// Structured cells that were present but unparseable at load time.
  std::size_t parse_warnings = 0;

  std::size_t size() const noexcept { return rows.size(); }
  std::size_t width() const noexcept { return schema.width(); }

  std::size_t class_of(std::size_t i) const noexcept { return static_cast<std::size_t>(labels[i]); }

  std::vector<std::size_t> indices(SplitTag tag) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < tags.size(); ++i) {
      if (tags[i] == tag) out.push_back(i);
    }
    return out;
  }

  std::size_t count_missing() const noexcept {
    std::size_t n = 0;
    for (const auto& row : rows) {
      for (const auto& c : row) n += is_missing(c) ? 1 : 0;
    }
    return n;
  }

  bool operator==(const Dataset&) const = default;
};

/// Parses "yes/no/true/false/1/0" in any case.
inline std::optional<bool> parse_binary(std::string_view text) {
  std::string lower;
  for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "yes" || lower == "true" || lower == "1") return true;
  if (lower == "no" || lower == "false" || lower == "0") return false;
  return std::nullopt;
}

inline std::optional<double> parse_number(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

/// Parses a raw string into a cell for the given kind. Empty means missing.
/// Sets *unparseable when a non-empty structured value had to be dropped.
inline Cell parse_cell(FeatureKind kind, const std::string& raw, bool* unparseable = nullptr) {
  if (unparseable != nullptr) *unparseable = false;
  if (raw.empty()) return Missing{};
  switch (kind) {
    case FeatureKind::numerical:
      if (auto v = parse_number(raw)) return *v;
      break;
    case FeatureKind::binary:
      if (auto b = parse_binary(raw)) return *b;
      break;
    case FeatureKind::categorical:
    case FeatureKind::freetext:
      return raw;
  }
  if (unparseable != nullptr) *unparseable = true;
  return Missing{};
}

/// Header record first. `origin` names the table in error messages.
inline Dataset dataset_from_records(const Schema& schema, std::vector<csv::Record> records,
                                    const std::string& origin) {
  std::erase_if(records, [](const csv::Record& r) { return r.size() == 1 && r[0].empty(); });
  if (records.empty()) throw DataError("table " + origin + " is empty");

  const auto& header = records.front();
  std::map<std::string, std::size_t> position;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!position.emplace(header[c], c).second) throw DataError("duplicate column \"" + header[c] + "\" in table");
  }
  const auto label_it = position.find(schema.label.name);
  if (label_it == position.end()) throw DataError("label column not found: \"" + schema.label.name + "\"");
  std::vector<std::size_t> source(schema.width());
  for (std::size_t j = 0; j < schema.width(); ++j) {
    const auto it = position.find(schema.features[j].name);
    if (it == position.end()) throw DataError("feature column not found: \"" + schema.features[j].name + "\"");
    source[j] = it->second;
  }
  for (const auto& col : header) {
    if (col != schema.label.name && !schema.index_of(col)) {
      throw DataError("table column \"" + col + "\" is not declared in the schema");
    }
  }
  if (records.size() == 1) throw DataError("table " + origin + " has no data rows");

  Dataset ds;
  ds.schema = schema;
  ds.rows.reserve(records.size() - 1);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() != header.size()) {
      throw DataError("table row " + std::to_string(r) + " has " + std::to_string(rec.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    std::vector<Cell> row(schema.width());
    for (std::size_t j = 0; j < schema.width(); ++j) {
      bool bad = false;
      row[j] = parse_cell(schema.features[j].kind, rec[source[j]], &bad);
      ds.parse_warnings += bad ? 1 : 0;
    }
    const auto& raw_label = rec[label_it->second];
    const auto label = parse_number(raw_label);
    if (!label) throw DataError("table row " + std::to_string(r) + ": label \"" + raw_label + "\" is not a number");
    if (schema.label.task == TaskKind::classification) {
      const double k = *label;
      if (k != std::floor(k) || k < 0 || k >= static_cast<double>(schema.label.num_classes)) {
        throw DataError("table row " + std::to_string(r) + ": class label " + raw_label + " outside [0, " +
                        std::to_string(schema.label.num_classes) + ")");
      }
    }
    ds.rows.push_back(std::move(row));
    ds.labels.push_back(*label);
  }
  ds.tags.assign(ds.rows.size(), SplitTag::unassigned);
  return ds;
}

inline Dataset load_dataset(const Schema& schema, const std::filesystem::path& table_file) {
  std::ifstream in(table_file, std::ios::binary);
  if (!in) throw DataError("cannot open table file " + table_file.string());
  return dataset_from_records(schema, csv::read(in), table_file.string());
}

inline Dataset load_dataset(const std::filesystem::path& schema_file, const std::filesystem::path& table_file) {
  return load_dataset(load_schema(schema_file), table_file);
}

struct SplitRatios {
  std::size_t train = 3;
  std::size_t val = 1;
  std::size_t test = 1;
};

/// Seeded permutation, then floor(N*train/total) train rows, floor(N*val/total)
/// val rows, remainder test.
inline Dataset split(Dataset dataset, SplitRatios ratios, std::uint64_t seed) {
  const std::size_t n = dataset.size();
  if (n < 5) throw DataError("split needs at least 5 rows, got " + std::to_string(n));
  const std::size_t total = ratios.train + ratios.val + ratios.test;
  if (total == 0 || ratios.train == 0) throw ConfigError("split ratios must give the training split a share");
  const std::size_t n_train = n * ratios.train / total;
  const std::size_t n_val = n * ratios.val / total;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  dataset.tags.assign(n, SplitTag::test);
  for (std::size_t k = 0; k < n_train; ++k) dataset.tags[order[k]] = SplitTag::train;
  for (std::size_t k = n_train; k < n_train + n_val; ++k) dataset.tags[order[k]] = SplitTag::val;
  return dataset;
}

/// Per-feature fill value: mean for numerical, mode for categorical/binary.
/// Freetext entries stay empty (the sentinel sentence is used instead).
struct ImputationStats {
  std::vector<std::optional<Cell>> fill;
};

/// Statistics over rows tagged train. Mode ties go to the value seen first.
inline ImputationStats fit_imputation(const Dataset& dataset) {
  const auto train = dataset.indices(SplitTag::train);
  if (train.empty()) throw DataError("imputation statistics need rows tagged train");
  ImputationStats stats;
  stats.fill.resize(dataset.width());
  for (std::size_t j = 0; j < dataset.width(); ++j) {
    const auto kind = dataset.schema.features[j].kind;
    if (kind == FeatureKind::freetext) continue;
    if (kind == FeatureKind::numerical) {
      double sum = 0.0;
      std::size_t count = 0;
      for (auto i : train) {
        if (const auto* v = std::get_if<double>(&dataset.rows[i][j])) {
          sum += *v;
          ++count;
        }
      }
      if (count > 0) stats.fill[j] = sum / static_cast<double>(count);
      continue;
    }
    // first-seen order, then counts
    std::vector<std::pair<Cell, std::size_t>> tally;
    for (auto i : train) {
      const auto& c = dataset.rows[i][j];
      if (is_missing(c)) continue;
      auto it = std::find_if(tally.begin(), tally.end(), [&](const auto& e) { return e.first == c; });
      if (it == tally.end()) {
        tally.emplace_back(c, 1);
      } else {
        ++it->second;
      }
    }
    const auto best = std::max_element(tally.begin(), tally.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    if (best != tally.end()) stats.fill[j] = best->first;
  }
  return stats;
}

inline Dataset impute(Dataset dataset, const ImputationStats& stats) {
  if (stats.fill.size() != dataset.width()) {
    throw DataError("imputation statistics cover " + std::to_string(stats.fill.size()) + " features, dataset has " +
                    std::to_string(dataset.width()));
  }
  for (auto& row : dataset.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (!is_missing(row[j])) continue;
      const auto& f = dataset.schema.features[j];
      if (f.kind == FeatureKind::freetext) {
        row[j] = std::string(kMissingTextSentinel);
      } else if (stats.fill[j]) {
        row[j] = *stats.fill[j];
      } else {
        throw DataError("no imputation statistic for feature \"" + f.name + "\" (no observed training values)");
      }
    }
  }
  return dataset;
}

/// Keeps the listed feature columns, in the given order.
inline Dataset select_features(const Dataset& dataset, const std::vector<std::size_t>& keep) {
  Dataset out;
  out.schema.label = dataset.schema.label;
  for (auto j : keep) out.schema.features.push_back(dataset.schema.features.at(j));
  out.rows.reserve(dataset.size());
  for (const auto& row : dataset.rows) {
    std::vector<Cell> r;
    r.reserve(keep.size());
    for (auto j : keep) r.push_back(row[j]);
    out.rows.push_back(std::move(r));
  }
  out.labels = dataset.labels;
  out.tags = dataset.tags;
  out.parse_warnings = dataset.parse_warnings;
  return out;
}

struct ClassWeights {
  std::vector<double> w;
};

inline std::vector<std::size_t> class_counts(const Dataset& dataset, SplitTag tag) {
  std::vector<std::size_t> counts(dataset.schema.label.num_classes, 0);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset.tags[i] == tag) ++counts.at(dataset.class_of(i));
  }
  return counts;
}

/// Balanced weighting w_k = N / (K * n_k).
inline ClassWeights class_weights_from_counts(const std::vector<std::size_t>& counts) {
  const double k = static_cast<double>(counts.size());
  const double n = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  ClassWeights out;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw DataError("class " + std::to_string(c) + " not present in training split");
    out.w.push_back(n / (k * static_cast<double>(counts[c])));
  }
  return out;
}

inline ClassWeights compute_class_weights(const Dataset& dataset) {
  if (dataset.schema.label.task != TaskKind::classification) {
    throw ConfigError("class weights apply to classification tasks only");
  }
  return class_weights_from_counts(class_counts(dataset, SplitTag::train));
}

}  // namespace ehrfuse
