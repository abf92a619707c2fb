#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ehrfuse/cache.hpp"
#include "ehrfuse/dataset.hpp"
#include "ehrfuse/embedding.hpp"
#include "ehrfuse/error.hpp"
#include "ehrfuse/heads.hpp"
#include "ehrfuse/metrics.hpp"
#include "ehrfuse/model.hpp"

namespace ehrfuse {

enum class Variant { full, no_prompts, no_freetext, random_encoder };

inline std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_prompts: return "no_prompts";
    case Variant::no_freetext: return "no_freetext";
    case Variant::random_encoder: return "random_encoder";
  }
  return "unknown";
}

inline Variant parse_variant(std::string_view text) {
  if (text == "full") return Variant::full;
  if (text == "no_prompts") return Variant::no_prompts;
  if (text == "no_freetext") return Variant::no_freetext;
  if (text == "random_encoder") return Variant::random_encoder;
  throw ConfigError("unknown variant \"" + std::string(text) + "\"");
}

enum class ProviderKind { hashing, random, external };

struct ProviderConfig {
  ProviderKind kind = ProviderKind::hashing;
  std::size_t dim = 32;
  std::uint64_t seed = 0;
};

inline std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& cfg) {
  switch (cfg.kind) {
    case ProviderKind::hashing: return std::make_unique<HashingEncoder>(HashingEncoderConfig{cfg.dim, cfg.seed});
    case ProviderKind::random: return std::make_unique<RandomFrozenEncoder>(cfg.dim, cfg.seed);
    case ProviderKind::external: break;
  }
  throw ConfigError("external embeddings come from the exporter; dump prompts and import its cache instead");
}

struct TrainConfig {
  double lr = 1e-5;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Seeds trained concurrently by run_seeds.
  std::size_t threads = 1;
  FusionConfig fusion;
  Variant variant = Variant::full;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    if (seeds.empty()) throw ConfigError("train.seeds must be non-empty");
    if (threads < 1) throw ConfigError("train.threads must be >= 1");
    fusion.validate();
  }
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> epoch_seconds;
  std::size_t best_epoch = 0;  // 1-based
  std::size_t stop_epoch = 0;

  double best_val_loss() const { return val_loss.at(best_epoch - 1); }
};

inline constexpr double kImprovementTolerance = 1e-8;

enum class StopDecision { keep_going, stop };

/// Stops once `patience` consecutive epochs fail to improve on the best
/// validation loss by more than 1e-8.
inline StopDecision early_stop_check(const std::vector<double>& val_losses, std::size_t patience) {
  if (val_losses.empty()) return StopDecision::keep_going;
  double best = val_losses.front();
  std::size_t since = 0;
  for (std::size_t e = 1; e < val_losses.size(); ++e) {
    if (val_losses[e] < best - kImprovementTolerance) {
      best = val_losses[e];
      since = 0;
    } else {
      ++since;
    }
  }
  return since >= patience ? StopDecision::stop : StopDecision::keep_going;
}

/// Positional access to a cache plus the labels it is trained against.
struct TrainingData {
  TaskKind task;
  std::size_t num_classes;
  std::vector<Matrix> inputs;
  std::vector<double> labels;
};

inline TrainingData training_data(const Dataset& ds, const CellEmbeddingMatrix& cache) {
  check_cache(cache, CacheExpectation{ds.size(), static_cast<std::uint32_t>(ds.width()), std::nullopt,
                                      schema_hash(ds.schema), std::nullopt});
  TrainingData out{ds.schema.label.task, ds.schema.label.num_classes, {}, ds.labels};
  out.inputs.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out.inputs.push_back(cell_rows(cache, i));
  return out;
}

/// Loss of one sample; adds its parameter gradients (scaled by `scale`)
/// into `grads` when non-null.
inline double sample_loss(const Model& model, const Matrix& z, double label, const ClassWeights* weights,
                          double scale, Model* grads) {
  auto fused = fusion_forward(model.fusion, model.config, z);
  HeadTrace ht;
  const auto out = head_forward(model.head, fused.patient, &ht);
  double loss = 0.0;
  std::vector<double> d_out;
  if (model.task == TaskKind::classification) {
    const auto probs = softmax(out);
    const auto y = static_cast<std::size_t>(label);
    const double w = weights != nullptr ? weights->w.at(y) : 1.0;
    loss = -w * std::log(std::max(probs[y], kProbabilityFloor));
    if (grads != nullptr) d_out = cross_entropy_logit_grad(probs, y, w, scale);
  } else {
    const double e = out[0] - label;
    loss = e * e;
    if (grads != nullptr) d_out = {2.0 * e * scale};
  }
  if (grads != nullptr) {
    const auto d_patient = head_backward(model.head, ht, d_out, grads->head);
    fusion_backward(model.fusion, model.config, fused.trace, d_patient, grads->fusion);
  }
  return loss;
}

inline double mean_loss(const Model& model, const TrainingData& data, const std::vector<std::size_t>& rows,
                        const ClassWeights* weights) {
  double s = 0.0;
  for (auto i : rows) s += sample_loss(model, data.inputs[i], data.labels[i], weights, 0.0, nullptr);
  return s / static_cast<double>(rows.size());
}

struct TrainResult {
  Model model;
  TrainHistory history;
};

/// Adam over shuffled mini-batches of the train split (last partial batch
/// kept), validation loss per epoch, early stopping, best-epoch restore.
inline TrainResult train(const TrainConfig& cfg, const Dataset& ds, const CellEmbeddingMatrix& cache,
                         std::uint64_t seed) {
  cfg.validate();
  if (cache.dim != cfg.fusion.dim) {
    throw DataError("cache dimension mismatch: cache has d=" + std::to_string(cache.dim) + ", fusion.dim=" +
                    std::to_string(cfg.fusion.dim));
  }
  const RenderMode want_mode = cfg.variant == Variant::no_prompts ? RenderMode::raw : RenderMode::prompts;
  check_cache(cache, CacheExpectation{std::nullopt, std::nullopt, std::nullopt, std::nullopt, want_mode});
  if (cfg.variant == Variant::random_encoder && provider_of(cache.provider_id) != ProviderId::random_frozen) {
    throw DataError("variant random_encoder needs a cache built with the random encoder");
  }
  if (cfg.variant == Variant::no_freetext && ds.schema.has_freetext()) {
    throw DataError("variant no_freetext needs a dataset with the free-text columns removed");
  }
  const auto data = training_data(ds, cache);
  auto train_rows = ds.indices(SplitTag::train);
  const auto val_rows = ds.indices(SplitTag::val);
  if (train_rows.empty() || val_rows.empty()) throw DataError("training needs non-empty train and val splits");

  std::optional<ClassWeights> weights;
  if (data.task == TaskKind::classification) weights = compute_class_weights(ds);
  const ClassWeights* w = weights ? &*weights : nullptr;

  TrainResult result{init_model(cfg.fusion, data.task, output_count(data.task, data.num_classes), seed), {}};
  Model& model = result.model;
  Model grads = zeros_like(model);
  AdamState adam = init_adam(model);
  const AdamConfig adam_cfg{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps};
  Rng order_rng(splitmix64(seed ^ 0x0dde55a11dULL));

  Model best = model;
  double best_val = 0.0;
  auto& hist = result.history;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    order_rng.shuffle(train_rows.begin(), train_rows.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_rows.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(train_rows.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      Model::visit(grads, [](const std::string&, Matrix& m) { m.fill(0.0); });
      for (std::size_t k = start; k < end; ++k) {
        const auto i = train_rows[k];
        epoch_loss += sample_loss(model, data.inputs[i], data.labels[i], w, scale, &grads);
      }
      adam_step(model, grads, adam, adam_cfg);
    }
    epoch_loss /= static_cast<double>(train_rows.size());
    const double val = mean_loss(model, data, val_rows, w);
    if (!std::isfinite(epoch_loss) || !std::isfinite(val)) {
      throw NumericalError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
    }
    hist.train_loss.push_back(epoch_loss);
    hist.val_loss.push_back(val);
    hist.epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
    hist.stop_epoch = epoch;
    if (epoch == 1 || val < best_val - kImprovementTolerance) {
      best_val = val;
      best = model;
      hist.best_epoch = epoch;
    }
    if (early_stop_check(hist.val_loss, cfg.patience) == StopDecision::stop) break;
  }
  model = std::move(best);
  return result;
}

/// Model outputs for the given rows: positive-class probability for binary
/// classification, the full probability vector's argmax class otherwise,
/// or the regression value.
struct Predictions {
  std::vector<double> scores;           // binary: P(class 1); regression: value
  std::vector<std::size_t> classes;     // classification: argmax
  std::vector<double> targets;
};

inline Predictions predict_rows(const Model& model, const TrainingData& data, const std::vector<std::size_t>& rows) {
  Predictions out;
  for (auto i : rows) {
    const auto o = predict(model, data.inputs[i]);
    out.targets.push_back(data.labels[i]);
    if (model.task == TaskKind::classification) {
      const auto p = softmax(o);
      out.scores.push_back(p.size() == 2 ? p[1] : *std::max_element(p.begin(), p.end()));
      out.classes.push_back(static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()));
    } else {
      out.scores.push_back(o[0]);
    }
  }
  return out;
}

struct SeedMetrics {
  std::uint64_t seed = 0;
  std::optional<double> bacc, auroc, rmse, mae;
  std::optional<ConfusionCounts> confusion;
  std::size_t best_epoch = 0;
  std::size_t stop_epoch = 0;
};

struct MetricsReport {
  std::vector<SeedMetrics> per_seed;
  std::map<std::string, double> mean;
  std::map<std::string, double> stddev;
};

inline std::vector<int> binary_labels(const std::vector<double>& targets) {
  std::vector<int> out;
  out.reserve(targets.size());
  for (double t : targets) out.push_back(t != 0.0 ? 1 : 0);
  return out;
}

inline SeedMetrics evaluate_model(const Model& model, const TrainingData& data, const std::vector<std::size_t>& rows,
                                  double threshold = 0.5) {
  if (rows.empty()) throw DataError("evaluation split is empty");
  SeedMetrics m;
  const auto pred = predict_rows(model, data, rows);
  if (model.task == TaskKind::regression) {
    m.rmse = rmse(pred.scores, pred.targets);
    m.mae = mae(pred.scores, pred.targets);
    return m;
  }
  if (data.num_classes == 2) {
    const auto labels = binary_labels(pred.targets);
    const auto c = confusion(pred.scores, labels, threshold);
    m.confusion = c;
    m.bacc = bacc(c);
    m.auroc = auroc(pred.scores, labels);
  } else {
    std::vector<std::size_t> actual;
    for (double t : pred.targets) actual.push_back(static_cast<std::size_t>(t));
    m.bacc = balanced_accuracy(pred.classes, actual, data.num_classes);
  }
  return m;
}

/// Arithmetic mean and sample standard deviation (0 for a single seed).
inline void summarize(MetricsReport& report) {
  std::map<std::string, std::vector<double>> values;
  for (const auto& s : report.per_seed) {
    if (s.bacc) values["bacc"].push_back(*s.bacc);
    if (s.auroc) values["auroc"].push_back(*s.auroc);
    if (s.rmse) values["rmse"].push_back(*s.rmse);
    if (s.mae) values["mae"].push_back(*s.mae);
  }
  report.mean.clear();
  report.stddev.clear();
  for (const auto& [name, v] : values) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    report.mean[name] = mean;
    report.stddev[name] = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  }
}

using TrainedCallback = std::function<void(std::uint64_t seed, const TrainResult&)>;

/// Trains once per seed and evaluates each model on the test split.
inline MetricsReport run_seeds(const TrainConfig& cfg, const Dataset& ds, const CellEmbeddingMatrix& cache,
                               double threshold = 0.5, const TrainedCallback& on_trained = {}) {
  cfg.validate();
  for (std::size_t a = 0; a < cfg.seeds.size(); ++a) {
    for (std::size_t b = a + 1; b < cfg.seeds.size(); ++b) {
      if (cfg.seeds[a] == cfg.seeds[b]) throw ConfigError("train.seeds must be distinct");
    }
  }
  const auto data = training_data(ds, cache);
  const auto test_rows = ds.indices(SplitTag::test);
  auto one = [&](std::uint64_t seed) {
    try {
      auto trained = train(cfg, ds, cache, seed);
      auto m = evaluate_model(trained.model, data, test_rows, threshold);
      m.seed = seed;
      m.best_epoch = trained.history.best_epoch;
      m.stop_epoch = trained.history.stop_epoch;
      return std::make_pair(m, std::move(trained));
    } catch (const Error& e) {
      throw Error(e.kind(), "seed " + std::to_string(seed) + ": " + e.what());
    }
  };
  MetricsReport report;
  for (std::size_t start = 0; start < cfg.seeds.size(); start += cfg.threads) {
    const std::size_t end = std::min(cfg.seeds.size(), start + cfg.threads);
    std::vector<std::future<std::pair<SeedMetrics, TrainResult>>> jobs;
    for (std::size_t k = start; k < end; ++k) {
      jobs.push_back(std::async(cfg.threads > 1 ? std::launch::async : std::launch::deferred, one, cfg.seeds[k]));
    }
    for (std::size_t k = start; k < end; ++k) {
      auto [metrics, trained] = jobs[k - start].get();
      if (on_trained) on_trained(cfg.seeds[k], trained);
      report.per_seed.push_back(metrics);
    }
  }
  summarize(report);
  return report;
}

/// Inputs for one ablation arm: the dataset the encoder sees, how cells are
/// rendered, and which frozen encoder embeds them.
struct VariantInputs {
  Variant variant = Variant::full;
  Dataset dataset;
  RenderMode mode = RenderMode::prompts;
  ProviderConfig provider;
};

inline VariantInputs make_variant(const Dataset& base, const ProviderConfig& provider, Variant variant) {
  VariantInputs out{variant, base, RenderMode::prompts, provider};
  switch (variant) {
    case Variant::full: break;
    case Variant::no_prompts: out.mode = RenderMode::raw; break;
    case Variant::no_freetext: {
      std::vector<std::size_t> keep;
      for (std::size_t j = 0; j < base.width(); ++j) {
        if (base.schema.features[j].kind != FeatureKind::freetext) keep.push_back(j);
      }
      if (keep.size() == base.width()) throw ConfigError("no free-text columns to ablate");
      if (keep.empty()) throw ConfigError("no_freetext would leave no features");
      out.dataset = select_features(base, keep);
      break;
    }
    case Variant::random_encoder: out.provider.kind = ProviderKind::random; break;
  }
  return out;
}

inline CellEmbeddingMatrix build_cache(const VariantInputs& inputs) {
  const auto provider = make_provider(inputs.provider);
  return embed_dataset(inputs.dataset, *provider, inputs.mode);
}

/// Load, split 3:1:1 and impute with train-only statistics.
inline Dataset prepare_dataset(const Dataset& loaded, std::uint64_t split_seed) {
  auto ds = split(loaded, SplitRatios{}, split_seed);
  const auto stats = fit_imputation(ds);
  return impute(std::move(ds), stats);
}

}  // namespace ehrfuse
