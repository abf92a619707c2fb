#pragma once

#include <cmath>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "ehrfuse/corruption.hpp"
#include "ehrfuse/csv.hpp"
#include "ehrfuse/metrics.hpp"
#include "ehrfuse/train.hpp"
#include "json.hpp"

namespace ehrfuse {

/// Shortest text that parses back to the same double.
inline std::string format_real(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// JSON text with every floating-point value written round-trip exact.
inline void write_json(std::string& out, const nlohmann::json& j, int indent = 2, int depth = 0) {
  const std::string pad = indent > 0 ? std::string(static_cast<std::size_t>(indent * (depth + 1)), ' ') : "";
  const std::string close_pad = indent > 0 ? std::string(static_cast<std::size_t>(indent * depth), ' ') : "";
  const char* nl = indent > 0 ? "\n" : "";
  switch (j.type()) {
    case nlohmann::json::value_t::number_float:
      out += format_real(j.get<double>());
      return;
    case nlohmann::json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{";
      out += nl;
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) {
          out += ",";
          out += nl;
        }
        first = false;
        out += pad + nlohmann::json(k).dump() + (indent > 0 ? ": " : ":");
        write_json(out, v, indent, depth + 1);
      }
      out += nl + close_pad + "}";
      return;
    }
    case nlohmann::json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[";
      out += nl;
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i != 0) {
          out += ",";
          out += nl;
        }
        out += pad;
        write_json(out, j[i], indent, depth + 1);
      }
      out += nl + close_pad + "]";
      return;
    }
    default:
      out += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  }
}

inline std::string dump_json(const nlohmann::json& j, int indent = 2) {
  std::string out;
  write_json(out, j, indent);
  out += '\n';
  return out;
}

inline void save_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << dump_json(j);
}

inline nlohmann::json to_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

inline nlohmann::json to_json(const SeedMetrics& m) {
  nlohmann::json j{{"seed", m.seed}, {"best_epoch", m.best_epoch}, {"stop_epoch", m.stop_epoch}};
  if (m.bacc) j["bacc"] = *m.bacc;
  if (m.auroc) j["auroc"] = *m.auroc;
  if (m.rmse) j["rmse"] = *m.rmse;
  if (m.mae) j["mae"] = *m.mae;
  if (m.confusion) j["confusion"] = to_json(*m.confusion);
  return j;
}

/// {per_seed:[...], mean:{...}, std:{...}}
inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per_seed = nlohmann::json::array();
  for (const auto& s : r.per_seed) per_seed.push_back(to_json(s));
  nlohmann::json mean = nlohmann::json::object();
  nlohmann::json sd = nlohmann::json::object();
  for (const auto& [k, v] : r.mean) mean[k] = v;
  for (const auto& [k, v] : r.stddev) sd[k] = v;
  return {{"per_seed", per_seed}, {"mean", mean}, {"std", sd}};
}

inline nlohmann::json to_json(const TrainHistory& h) {
  return {{"train_loss", h.train_loss},
          {"val_loss", h.val_loss},
          {"epoch_seconds", h.epoch_seconds},
          {"best_epoch", h.best_epoch},
          {"stop_epoch", h.stop_epoch}};
}

/// Parallel arrays, one entry per threshold.
inline nlohmann::json to_json(const ThresholdCurve& c) {
  nlohmann::json j{{"threshold", nlohmann::json::array()},
                   {"sensitivity", nlohmann::json::array()},
                   {"specificity", nlohmann::json::array()},
                   {"bacc", nlohmann::json::array()}};
  for (const auto& p : c.points) {
    j["threshold"].push_back(p.threshold);
    j["sensitivity"].push_back(p.sensitivity);
    j["specificity"].push_back(p.specificity);
    j["bacc"].push_back(p.bacc);
  }
  return j;
}

inline void save_curve_csv(const ThresholdCurve& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  csv::write_record(out, {"threshold", "sensitivity", "specificity", "bacc", "tp", "fp", "tn", "fn"});
  for (const auto& p : c.points) {
    csv::write_record(out, {format_real(p.threshold), format_real(p.sensitivity), format_real(p.specificity),
                            format_real(p.bacc), std::to_string(p.counts.tp), std::to_string(p.counts.fp),
                            std::to_string(p.counts.tn), std::to_string(p.counts.fn)});
  }
}

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"bacc", "auroc", "rmse", "mae"};
  return names;
}

/// [{rate, selected_cells, eligible_cells, mean:{...}, std:{...}, per_seed:[...]}]
inline nlohmann::json to_json(const std::vector<SweepPoint>& sweep) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : sweep) {
    auto j = to_json(p.report);
    j["rate"] = p.rate;
    j["selected_cells"] = p.selected_cells;
    j["eligible_cells"] = p.eligible_cells;
    arr.push_back(std::move(j));
  }
  return arr;
}

template <class Row>
void save_summary_csv(const std::vector<Row>& rows, const std::string& key_name,
                      const std::function<std::string(const Row&)>& key, const std::function<const MetricsReport&(const Row&)>& report,
                      const std::filesystem::path& path) {
  std::vector<std::string> present;
  for (const auto& name : metric_names()) {
    for (const auto& r : rows) {
      if (report(r).mean.count(name) != 0) {
        present.push_back(name);
        break;
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  csv::Record header{key_name};
  for (const auto& n : present) {
    header.push_back(n + "_mean");
    header.push_back(n + "_std");
  }
  csv::write_record(out, header);
  for (const auto& r : rows) {
    csv::Record rec{key(r)};
    const auto& rep = report(r);
    for (const auto& n : present) {
      const auto m = rep.mean.find(n);
      const auto s = rep.stddev.find(n);
      rec.push_back(m == rep.mean.end() ? "" : format_real(m->second));
      rec.push_back(s == rep.stddev.end() ? "" : format_real(s->second));
    }
    csv::write_record(out, rec);
  }
}

}  // namespace ehrfuse
