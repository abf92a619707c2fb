#include <gtest/gtest.h>

#include <cctype>
#include <cmath>

#include "ehrfuse/synth.hpp"
#include "support.hpp"

namespace ehrfuse {
namespace {

TEST(Synth, Deterministic) {
  SynthSpec spec;
  spec.n_rows = 300;
  spec.seed = 4;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  EXPECT_EQ(a.rows, b.rows);
  EXPECT_EQ(a.params, b.params);
  spec.seed = 5;
  EXPECT_NE(generate_synthetic(spec).rows, a.rows);
}

TEST(Synth, ShapeAndColumnOrder) {
  SynthSpec spec;
  spec.n_rows = 20;
  const auto d = generate_synthetic(spec);
  EXPECT_EQ(d.header, (csv::Record{"num_0", "num_1", "cat_0", "bin_0", "note_0", "label"}));
  EXPECT_EQ(d.rows.size(), 20u);
  for (const auto& r : d.rows) EXPECT_EQ(r.size(), 6u);
  EXPECT_EQ(d.params["signal_columns"], nlohmann::json({"num_0", "note_0"}));
}

TEST(Synth, KeywordRateWithinThreeSigma) {
  SynthSpec spec;
  spec.n_rows = 4000;
  spec.keyword_rate = 0.3;
  spec.seed = 8;
  const auto d = generate_synthetic(spec);
  std::size_t hits = 0;
  for (const auto& r : d.rows) {
    // A leading keyword is capitalised with the sentence.
    std::string note = r[4];
    note[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(note[0])));
    hits += note.find(spec.keyword) != std::string::npos ? 1 : 0;
  }
  EXPECT_EQ(hits, d.params["keyword_rows"].get<std::size_t>());
  const double sd = std::sqrt(4000 * 0.3 * 0.7);
  EXPECT_LT(std::abs(static_cast<double>(hits) - 1200.0), 3.0 * sd);
}

TEST(Synth, BalancedSignalGivesNearHalfPositives) {
  SynthSpec spec;
  spec.n_rows = 4000;
  spec.seed = 9;
  const auto d = generate_synthetic(spec);
  // The logit is symmetric about zero in both terms, so the base rate is 1/2.
  const double pos = d.params["positives"].get<double>();
  EXPECT_LT(std::abs(pos - 2000.0), 3.0 * std::sqrt(4000 * 0.25));
}

TEST(Synth, StructuredOnlyVariant) {
  SynthSpec spec;
  spec.n_rows = 50;
  spec.n_freetext = 0;
  const auto d = generate_synthetic(spec);
  EXPECT_FALSE(d.schema.has_freetext());
  EXPECT_EQ(d.params["signal_columns"], nlohmann::json({"num_0"}));
  EXPECT_EQ(d.params["label_rule"].get<std::string>().find("keyword"), std::string::npos);
}

TEST(Synth, RegressionAndMissing) {
  SynthSpec spec;
  spec.n_rows = 500;
  spec.task = TaskKind::regression;
  spec.missing_rate = 0.2;
  spec.seed = 2;
  const auto ds = synthetic_dataset(generate_synthetic(spec));
  EXPECT_EQ(ds.schema.label.task, TaskKind::regression);
  const double cells = 500.0 * 5.0;
  EXPECT_LT(std::abs(static_cast<double>(ds.count_missing()) - 0.2 * cells), 4.0 * std::sqrt(cells * 0.16));
}

TEST(Synth, WrittenFilesLoadToSameDataset) {
  testing::TempDir dir;
  SynthSpec spec;
  spec.n_rows = 60;
  spec.missing_rate = 0.1;
  const auto d = generate_synthetic(spec);
  write_synthetic(d, dir.path());
  EXPECT_EQ(load_dataset(dir / "schema.json", dir / "table.csv"), synthetic_dataset(d));
}

TEST(Synth, RejectsBadSpecs) {
  SynthSpec spec;
  spec.n_rows = 0;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  spec = SynthSpec{};
  spec.ambiguous_pair = true;
  spec.n_numerical = 1;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
}

}  // namespace
}  // namespace ehrfuse
