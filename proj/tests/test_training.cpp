#include <gtest/gtest.h>

#include <cmath>

#include "ehrfuse/synth.hpp"
#include "ehrfuse/train.hpp"
#include "support.hpp"

namespace ehrfuse {
namespace {

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch_size = 16;
  cfg.max_epochs = 6;
  cfg.patience = 3;
  cfg.seeds = {0, 1};
  cfg.fusion.dim = 16;
  cfg.fusion.layers = 1;
  cfg.fusion.heads = 2;
  return cfg;
}

Dataset quick_dataset(std::size_t rows = 200, TaskKind task = TaskKind::classification) {
  SynthSpec spec;
  spec.n_rows = rows;
  spec.task = task;
  spec.seed = 21;
  return prepare_dataset(synthetic_dataset(generate_synthetic(spec)), 3);
}

CellEmbeddingMatrix quick_cache(const Dataset& ds, Variant v = Variant::full) {
  return build_cache(make_variant(ds, ProviderConfig{ProviderKind::hashing, 16, 0}, v));
}

TEST(EarlyStop, Examples) {
  EXPECT_EQ(early_stop_check({1.0, 0.9, 0.95, 0.96}, 2), StopDecision::stop);
  EXPECT_EQ(early_stop_check({1.0, 0.9, 0.95}, 2), StopDecision::keep_going);
  EXPECT_EQ(early_stop_check({1.0}, 3), StopDecision::keep_going);
  EXPECT_EQ(early_stop_check({1.0, 1.0, 1.0, 1.0}, 3), StopDecision::stop);
  EXPECT_EQ(early_stop_check({}, 1), StopDecision::keep_going);
  // Improvements below the tolerance do not reset the counter.
  EXPECT_EQ(early_stop_check({1.0, 1.0 - 1e-9, 1.0 - 2e-9}, 2), StopDecision::stop);
}

TEST(EarlyStop, StopEpochFollowsBestPlusPatience) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v;
    const std::size_t patience = 1 + rng.below(4);
    while (early_stop_check(v, patience) == StopDecision::keep_going && v.size() < 60) v.push_back(rng.uniform());
    if (v.size() == 60) continue;
    const auto best = static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
    EXPECT_EQ(v.size(), best + 1 + patience);
  }
}

TEST(Train, DeterministicCheckpointAndHistory) {
  const auto ds = quick_dataset();
  const auto cache = quick_cache(ds);
  const auto cfg = quick_config();
  const auto a = train(cfg, ds, cache, 4);
  const auto b = train(cfg, ds, cache, 4);
  EXPECT_EQ(encode_model(a.model), encode_model(b.model));
  EXPECT_EQ(a.history.train_loss, b.history.train_loss);
  EXPECT_EQ(a.history.val_loss, b.history.val_loss);
  EXPECT_NE(encode_model(train(cfg, ds, cache, 5).model), encode_model(a.model));
}

TEST(Train, RestoresBestEpoch) {
  const auto ds = quick_dataset();
  const auto cache = quick_cache(ds);
  auto cfg = quick_config();
  cfg.max_epochs = 12;
  const auto r = train(cfg, ds, cache, 0);
  const auto& h = r.history;
  ASSERT_GE(h.best_epoch, 1u);
  EXPECT_EQ(h.best_val_loss(), *std::min_element(h.val_loss.begin(), h.val_loss.end()));
  EXPECT_EQ(h.val_loss.size(), h.stop_epoch);
  const auto data = training_data(ds, cache);
  const auto w = compute_class_weights(ds);
  EXPECT_DOUBLE_EQ(mean_loss(r.model, data, ds.indices(SplitTag::val), &w), h.best_val_loss());
}

TEST(Train, OverfitsTinySet) {
  auto ds = quick_dataset(40);
  auto cache = quick_cache(ds);
  auto cfg = quick_config();
  cfg.batch_size = 8;
  cfg.max_epochs = 150;
  cfg.patience = 150;
  const auto r = train(cfg, ds, cache, 2);
  EXPECT_LT(r.history.train_loss.back(), 0.05);
  EXPECT_LT(r.history.train_loss.back(), r.history.train_loss.front() / 10.0);
}

TEST(Train, RejectsMismatchedInputs) {
  const auto ds = quick_dataset();
  const auto cache = quick_cache(ds);
  auto cfg = quick_config();
  cfg.fusion.dim = 32;
  EXPECT_THROW(train(cfg, ds, cache, 0), DataError);
  cfg = quick_config();
  cfg.variant = Variant::no_prompts;
  EXPECT_THROW(train(cfg, ds, cache, 0), DataError);
  cfg.variant = Variant::random_encoder;
  EXPECT_THROW(train(cfg, ds, cache, 0), DataError);
}

TEST(Train, Regression) {
  const auto ds = quick_dataset(200, TaskKind::regression);
  const auto cache = quick_cache(ds);
  auto cfg = quick_config();
  cfg.seeds = {0};
  const auto rep = run_seeds(cfg, ds, cache);
  ASSERT_EQ(rep.per_seed.size(), 1u);
  EXPECT_TRUE(rep.per_seed[0].rmse.has_value());
  EXPECT_FALSE(rep.per_seed[0].auroc.has_value());
  EXPECT_GE(*rep.per_seed[0].rmse, *rep.per_seed[0].mae);
  EXPECT_EQ(rep.stddev.at("rmse"), 0.0);
}

TEST(RunSeeds, ReportStructure) {
  const auto ds = quick_dataset();
  const auto cache = quick_cache(ds);
  auto cfg = quick_config();
  cfg.seeds = {0, 1, 2, 3, 4};
  cfg.max_epochs = 2;
  std::vector<std::uint64_t> seen;
  const auto rep = run_seeds(cfg, ds, cache, 0.5, [&](std::uint64_t s, const TrainResult&) { seen.push_back(s); });
  ASSERT_EQ(rep.per_seed.size(), 5u);
  EXPECT_EQ(seen, cfg.seeds);
  double mean = 0.0;
  for (const auto& s : rep.per_seed) mean += *s.auroc;
  mean /= 5.0;
  double ss = 0.0;
  for (const auto& s : rep.per_seed) ss += (*s.auroc - mean) * (*s.auroc - mean);
  EXPECT_NEAR(rep.mean.at("auroc"), mean, 1e-15);
  EXPECT_NEAR(rep.stddev.at("auroc"), std::sqrt(ss / 4.0), 1e-15);
  for (const auto& s : rep.per_seed) EXPECT_EQ(s.confusion->total(), ds.indices(SplitTag::test).size());
}

TEST(RunSeeds, ThreadsDoNotChangeResults) {
  const auto ds = quick_dataset();
  const auto cache = quick_cache(ds);
  auto cfg = quick_config();
  cfg.max_epochs = 2;
  const auto serial = run_seeds(cfg, ds, cache);
  cfg.threads = 2;
  const auto parallel = run_seeds(cfg, ds, cache);
  EXPECT_EQ(serial.mean, parallel.mean);
}

TEST(RunSeeds, RejectsDuplicateSeeds) {
  const auto ds = quick_dataset();
  const auto cache = quick_cache(ds);
  auto cfg = quick_config();
  cfg.seeds = {1, 1};
  EXPECT_THROW(run_seeds(cfg, ds, cache), ConfigError);
}

TEST(Evaluate, IndependentOfRowOrder) {
  const auto ds = quick_dataset();
  const auto cache = quick_cache(ds);
  auto cfg = quick_config();
  cfg.max_epochs = 2;
  const auto r = train(cfg, ds, cache, 0);
  const auto data = training_data(ds, cache);
  auto rows = ds.indices(SplitTag::test);
  const auto a = evaluate_model(r.model, data, rows);
  std::reverse(rows.begin(), rows.end());
  const auto b = evaluate_model(r.model, data, rows);
  EXPECT_EQ(*a.auroc, *b.auroc);
  EXPECT_EQ(*a.confusion, *b.confusion);
}

TEST(Variant, Construction) {
  using testing::feature;
  std::vector<FeatureSpec> features;
  for (int k = 0; k < 6; ++k) features.push_back(feature("n" + std::to_string(k), FeatureKind::numerical));
  for (int k = 0; k < 4; ++k) features.push_back(feature("t" + std::to_string(k), FeatureKind::freetext));
  std::vector<Cell> row;
  for (int k = 0; k < 6; ++k) row.push_back(static_cast<double>(k));
  for (int k = 0; k < 4; ++k) row.push_back(std::string("note"));
  const auto ds = testing::make_dataset(testing::make_schema(features), {row}, {0.0});
  const ProviderConfig p{ProviderKind::hashing, 16, 0};
  EXPECT_EQ(make_variant(ds, p, Variant::no_freetext).dataset.width(), 6u);
  const auto full = make_variant(ds, p, Variant::full);
  EXPECT_EQ(full.dataset, ds);
  EXPECT_EQ(full.mode, RenderMode::prompts);
  EXPECT_EQ(make_variant(ds, p, Variant::no_prompts).mode, RenderMode::raw);
  EXPECT_EQ(make_variant(ds, p, Variant::random_encoder).provider.kind, ProviderKind::random);

  const auto structured = testing::make_dataset(testing::make_schema({feature("Age", FeatureKind::numerical)}),
                                                {{34.0}}, {0.0});
  EXPECT_EQ(render_raw(structured.schema.features[0], structured.rows[0][0]).text, "34");
  try {
    make_variant(structured, p, Variant::no_freetext);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_STREQ(e.what(), "no free-text columns to ablate");
  }
  EXPECT_EQ(parse_variant("random_encoder"), Variant::random_encoder);
  EXPECT_EQ(to_string(Variant::no_freetext), "no_freetext");
}

}  // namespace
}  // namespace ehrfuse
