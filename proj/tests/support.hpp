#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>

#include "ehrfuse/dataset.hpp"
#include "ehrfuse/schema.hpp"

namespace ehrfuse::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ehrfuse-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline FeatureSpec feature(const std::string& name, FeatureKind kind) {
  return {name, kind, default_template(name, kind)};
}

inline Schema make_schema(std::vector<FeatureSpec> features, TaskKind task = TaskKind::classification,
                          std::size_t classes = 2) {
  Schema s;
  s.features = std::move(features);
  s.label = {"label", task, task == TaskKind::classification ? classes : 0};
  return s;
}

/// Dataset with every row tagged train unless tags are given.
inline Dataset make_dataset(Schema schema, std::vector<std::vector<Cell>> rows, std::vector<double> labels,
                            std::vector<SplitTag> tags = {}) {
  Dataset ds;
  ds.schema = std::move(schema);
  ds.rows = std::move(rows);
  ds.labels = std::move(labels);
  ds.tags = tags.empty() ? std::vector<SplitTag>(ds.rows.size(), SplitTag::train) : std::move(tags);
  return ds;
}

}  // namespace ehrfuse::testing
