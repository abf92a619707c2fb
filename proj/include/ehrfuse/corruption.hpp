#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "ehrfuse/dataset.hpp"
#include "ehrfuse/error.hpp"
#include "ehrfuse/random.hpp"
#include "ehrfuse/train.hpp"

namespace ehrfuse {

/// Which partitions receive corrupted cells.
enum class CorruptionScope { all_splits, test_only };

struct CorruptionPlan {
  double rate = 0.0;
  std::uint64_t seed = 0;
  CorruptionScope scope = CorruptionScope::all_splits;
};

struct CorruptionResult {
  Dataset dataset;
  std::size_t eligible_cells = 0;
  std::size_t selected_cells = 0;
};

/// Marginal resampling over structured columns: each eligible cell is
/// selected with probability `rate` and replaced by the value of a uniformly
/// drawn training row of the same column. Freetext cells and labels are
/// never touched.
inline CorruptionResult corrupt(const Dataset& dataset, const CorruptionPlan& plan) {
  if (!(plan.rate >= 0.0 && plan.rate <= 1.0)) throw ConfigError("corruption rate must lie in [0, 1]");
  const auto train = dataset.indices(SplitTag::train);
  CorruptionResult out{dataset, 0, 0};
  if (plan.rate == 0.0) return out;
  Rng rng(plan.seed);
  for (std::size_t j = 0; j < dataset.width(); ++j) {
    if (!dataset.schema.features[j].structured()) continue;
    std::vector<std::size_t> pool;
    for (auto i : train) {
      if (!is_missing(dataset.rows[i][j])) pool.push_back(i);
    }
    if (pool.empty()) {
      throw DataError("corruption: empty training pool for column \"" + dataset.schema.features[j].name + "\"");
    }
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (plan.scope == CorruptionScope::test_only && dataset.tags[i] != SplitTag::test) continue;
      ++out.eligible_cells;
      // Both draws are taken for every cell so selections nest across rates.
      const double u = rng.uniform();
      const auto donor = pool[rng.below(pool.size())];
      if (u < plan.rate) {
        ++out.selected_cells;
        out.dataset.rows[i][j] = dataset.rows[donor][j];
      }
    }
  }
  return out;
}

struct SweepPoint {
  double rate = 0.0;
  std::size_t selected_cells = 0;
  std::size_t eligible_cells = 0;
  MetricsReport report;
};

/// Rate 0 is prepended when absent so the clean reference is always present.
inline std::vector<double> sweep_rates(std::vector<double> rates) {
  for (double r : rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("corruption rates must lie in [0, 1]");
  }
  if (std::find(rates.begin(), rates.end(), 0.0) == rates.end()) rates.insert(rates.begin(), 0.0);
  return rates;
}

/// For each rate: corrupt, re-embed, train every seed, evaluate on test.
inline std::vector<SweepPoint> corruption_sweep(const TrainConfig& cfg, const Dataset& dataset,
                                                const ProviderConfig& provider, const std::vector<double>& rates,
                                                std::uint64_t corruption_seed,
                                                CorruptionScope scope = CorruptionScope::all_splits,
                                                double threshold = 0.5) {
  std::vector<SweepPoint> out;
  for (double rate : sweep_rates(rates)) {
    auto corrupted = corrupt(dataset, CorruptionPlan{rate, corruption_seed, scope});
    const auto inputs = make_variant(corrupted.dataset, provider, cfg.variant);
    const auto cache = build_cache(inputs);
    SweepPoint p{rate, corrupted.selected_cells, corrupted.eligible_cells, {}};
    p.report = run_seeds(cfg, inputs.dataset, cache, threshold);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace ehrfuse
