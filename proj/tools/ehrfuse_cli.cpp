// ehrfuse command-line driver.
//
//   ehrfuse synth --out DIR [--rows N ...]
//   ehrfuse embed|dump-prompts|train|eval|ablate|corrupt|thresholds --config FILE [--section.key=value ...]
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 runtime or numerical error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ehrfuse/ehrfuse.hpp"

namespace fs = std::filesystem;
using namespace ehrfuse;

namespace {

struct Inputs {
  LoadedConfig cfg;
  fs::path run;
};

Inputs load_inputs(const std::optional<fs::path>& config_file, const std::vector<std::string>& overrides) {
  Inputs in{load_run_config(config_file, overrides), {}};
  const auto& data = in.cfg.config.data;
  if (data.schema.empty()) throw ConfigError("data.schema is required");
  if (data.table.empty()) throw ConfigError("data.table is required");
  in.run = run_dir(in.cfg);
  return in;
}

fs::path ensure_run_dir(const Inputs& in) {
  fs::create_directories(in.run);
  std::ofstream(in.run / "config.json") << in.cfg.document.dump(2) << '\n';
  return in.run;
}

Dataset prepared_dataset(const RunConfig& c) {
  return prepare_dataset(load_dataset(c.data.schema, c.data.table), c.data.split_seed);
}

CacheExpectation expectation_for(const VariantInputs& v) {
  return {v.dataset.rows.size(), v.dataset.width(), v.provider.dim, schema_hash(v.dataset.schema), v.mode};
}

std::string fingerprint(const CellEmbeddingMatrix& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "N=%llu m=%u d=%u provider=%u render=%s seed=%llu schema_hash=%s",
                static_cast<unsigned long long>(m.rows), m.columns, m.dim, static_cast<unsigned>(provider_of(m.provider_id)),
                render_mode_of(m.provider_id) == RenderMode::raw ? "raw" : "prompts",
                static_cast<unsigned long long>(m.provider_seed), hex64(m.schema_hash).c_str());
  return buf;
}

TrainConfig train_config_for(const RunConfig& c, Variant v) {
  TrainConfig t = c.train;
  t.variant = v;
  return t;
}

/// Reads the cache for the configured variant; a missing file is a data error.
CellEmbeddingMatrix load_variant_cache(const Inputs& in, const VariantInputs& v) {
  const auto path = cache_path(in.cfg, v.variant);
  if (!fs::exists(path)) throw DataError("cache not found at " + path.string() + "; run embed first");
  return read_cache(path, expectation_for(v));
}

int cmd_synth(const SynthSpec& spec, const fs::path& out) {
  const auto data = generate_synthetic(spec);
  write_synthetic(data, out);
  const nlohmann::json cfg{{"data", {{"schema", "schema.json"}, {"table", "table.csv"}, {"run_root", "runs"}}}};
  std::ofstream(out / "config.json") << cfg.dump(2) << '\n';
  std::cout << "wrote " << (out / "schema.json").string() << ", " << (out / "table.csv").string() << ", "
            << (out / "params.json").string() << ", " << (out / "config.json").string() << '\n';
  return 0;
}

int cmd_embed(const Inputs& in, bool force) {
  const auto& c = in.cfg.config;
  const auto base = prepared_dataset(c);
  const auto v = make_variant(base, c.provider, c.experiment.variant);
  const auto path = cache_path(in.cfg, v.variant);
  if (fs::exists(path) && !force) {
    std::optional<CellEmbeddingMatrix> existing;
    try {
      existing = read_cache(path);
    } catch (const Error&) {
    }
    if (!existing) throw ConfigError("existing file at " + path.string() + " is not a readable cache; use --force");
    if (existing->dim != v.provider.dim) {
      throw ConfigError("provider.dim=" + std::to_string(v.provider.dim) + " but existing cache at " +
                        path.string() + " has d=" + std::to_string(existing->dim) + "; use --force to overwrite");
    }
  }
  const auto cache = build_cache(v);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_cache(cache, path);
  std::cout << "cache " << path.string() << '\n' << fingerprint(cache) << '\n';
  return 0;
}

int cmd_dump_prompts(const Inputs& in, const std::optional<fs::path>& out_path) {
  const auto& c = in.cfg.config;
  const auto v = make_variant(prepared_dataset(c), c.provider, c.experiment.variant);
  const fs::path path = out_path ? *out_path : ensure_run_dir(in) / "prompts.jsonl";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const auto n = dump_prompts(v.dataset, v.mode, out);
  std::cout << "wrote " << n << " prompts to " << path.string() << '\n';
  return 0;
}

fs::path checkpoint_path(const fs::path& run, std::uint64_t seed) {
  return run / ("model_seed" + std::to_string(seed) + ".fmdl");
}

void print_report(const std::string& title, const MetricsReport& r) {
  std::cout << title;
  for (const auto& [name, mean] : r.mean) {
    std::cout << "  " << name << " " << format_real(mean) << " +/- " << format_real(r.stddev.at(name));
  }
  std::cout << '\n';
}

int cmd_train(const Inputs& in) {
  const auto& c = in.cfg.config;
  const auto v = make_variant(prepared_dataset(c), c.provider, c.experiment.variant);
  const auto cache = load_variant_cache(in, v);
  const auto run = ensure_run_dir(in);
  const auto report = run_seeds(train_config_for(c, v.variant), v.dataset, cache, c.eval.threshold,
                                [&](std::uint64_t seed, const TrainResult& r) {
                                  save_model(r.model, checkpoint_path(run, seed));
                                  save_json(to_json(r.history), run / ("history_seed" + std::to_string(seed) + ".json"));
                                });
  save_json(to_json(report), run / "metrics.json");
  print_report(std::string(to_string(v.variant)), report);
  std::cout << "run " << run.string() << '\n';
  return 0;
}

int cmd_eval(const Inputs& in) {
  const auto& c = in.cfg.config;
  const auto v = make_variant(prepared_dataset(c), c.provider, c.experiment.variant);
  const auto cache = load_variant_cache(in, v);
  const auto data = training_data(v.dataset, cache);
  const auto test_rows = v.dataset.indices(SplitTag::test);
  MetricsReport report;
  for (auto seed : c.train.seeds) {
    const auto path = checkpoint_path(in.run, seed);
    if (!fs::exists(path)) throw DataError("checkpoint not found at " + path.string() + "; run train first");
    const auto model = load_model(path);
    if (model.config.dim != cache.dim) throw DataError("checkpoint " + path.string() + " does not match the cache dimension");
    auto m = evaluate_model(model, data, test_rows, c.eval.threshold);
    m.seed = seed;
    report.per_seed.push_back(m);
  }
  summarize(report);
  save_json(to_json(report), in.run / "eval.json");
  print_report("eval", report);
  return 0;
}

int cmd_ablate(const Inputs& in) {
  const auto& c = in.cfg.config;
  const auto base = prepared_dataset(c);
  const auto run = ensure_run_dir(in);
  struct Row {
    Variant variant;
    MetricsReport report;
  };
  std::vector<Row> rows;
  nlohmann::json doc = nlohmann::json::array();
  for (auto variant : {Variant::full, Variant::no_prompts, Variant::no_freetext, Variant::random_encoder}) {
    const auto v = make_variant(base, c.provider, variant);
    const auto cache = build_cache(v);
    auto report = run_seeds(train_config_for(c, variant), v.dataset, cache, c.eval.threshold);
    print_report(std::string(to_string(variant)), report);
    auto j = to_json(report);
    j["variant"] = to_string(variant);
    doc.push_back(std::move(j));
    rows.push_back({variant, std::move(report)});
  }
  save_json(doc, run / "ablation.json");
  save_summary_csv<Row>(
      rows, "variant", [](const Row& r) { return std::string(to_string(r.variant)); },
      [](const Row& r) -> const MetricsReport& { return r.report; }, run / "ablation.csv");
  std::cout << "run " << run.string() << '\n';
  return 0;
}

int cmd_corrupt(const Inputs& in) {
  const auto& c = in.cfg.config;
  const auto base = prepared_dataset(c);
  const auto run = ensure_run_dir(in);
  const auto sweep = corruption_sweep(train_config_for(c, c.experiment.variant), base, c.provider, c.experiment.rates,
                                      c.experiment.corruption_seed, c.experiment.scope, c.eval.threshold);
  for (const auto& p : sweep) print_report("rate " + format_real(p.rate), p.report);
  save_json(to_json(sweep), run / "sweep.json");
  save_summary_csv<SweepPoint>(
      sweep, "rate", [](const SweepPoint& p) { return format_real(p.rate); },
      [](const SweepPoint& p) -> const MetricsReport& { return p.report; }, run / "sweep.csv");
  std::cout << "run " << run.string() << '\n';
  return 0;
}

int cmd_thresholds(const Inputs& in, std::optional<std::uint64_t> seed) {
  const auto& c = in.cfg.config;
  const auto v = make_variant(prepared_dataset(c), c.provider, c.experiment.variant);
  if (v.dataset.schema.label.task != TaskKind::classification || v.dataset.schema.label.num_classes != 2) {
    throw ConfigError("thresholds needs a binary classification label");
  }
  const auto cache = load_variant_cache(in, v);
  const std::uint64_t s = seed ? *seed : c.train.seeds.front();
  const auto path = checkpoint_path(in.run, s);
  if (!fs::exists(path)) throw DataError("checkpoint not found at " + path.string() + "; run train first");
  const auto model = load_model(path);
  const auto data = training_data(v.dataset, cache);
  const auto pred = predict_rows(model, data, v.dataset.indices(SplitTag::test));
  const auto labels = binary_labels(pred.targets);
  const auto grid = default_threshold_grid(c.eval.grid_points);
  const auto curve = threshold_sweep(pred.scores, labels, grid);
  save_json(to_json(curve), in.run / "thresholds.json");
  save_curve_csv(curve, in.run / "thresholds.csv");
  std::cout << "wrote " << curve.points.size() << " thresholds to " << (in.run / "thresholds.csv").string() << '\n';
  return 0;
}

/// Splits "--section.key=value" overrides out of argv.
std::vector<std::string> take_overrides(std::vector<std::string>& args) {
  std::vector<std::string> overrides;
  std::vector<std::string> rest;
  for (const auto& a : args) {
    const auto eq = a.find('=');
    const auto dot = a.find('.');
    if (a.rfind("--", 0) == 0 && dot != std::string::npos && (eq == std::string::npos || dot < eq)) {
      overrides.push_back(a);
    } else {
      rest.push_back(a);
    }
  }
  args = std::move(rest);
  return overrides;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  const auto overrides = take_overrides(args);

  CLI::App app{"Prompt-based multimodal fusion for tabular EHR prediction"};
  app.require_subcommand(1);

  std::optional<fs::path> config_file;
  bool force = false;
  std::optional<fs::path> prompts_out;
  std::optional<std::uint64_t> threshold_seed;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with a planted signal");
  SynthSpec spec;
  fs::path synth_out;
  std::string task = "classification";
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--rows", spec.n_rows, "Row count")->capture_default_str();
  synth->add_option("--numerical", spec.n_numerical, "Numerical columns")->capture_default_str();
  synth->add_option("--categorical", spec.n_categorical, "Categorical columns")->capture_default_str();
  synth->add_option("--binary", spec.n_binary, "Binary columns")->capture_default_str();
  synth->add_option("--freetext", spec.n_freetext, "Free-text columns")->capture_default_str();
  synth->add_option("--task", task, "classification or regression")
      ->check(CLI::IsMember({"classification", "regression"}))
      ->capture_default_str();
  synth->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
  synth->add_option("--levels", spec.numeric_levels, "Distinct values per numerical column")->capture_default_str();
  synth->add_option("--keyword-rate", spec.keyword_rate, "Keyword prevalence in note_0")->capture_default_str();
  synth->add_option("--missing-rate", spec.missing_rate, "Per-cell missing probability")->capture_default_str();
  synth->add_flag("--ambiguous", spec.ambiguous_pair, "num_0 and num_1 share values with opposite effects");

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "Run config JSON")->check(CLI::ExistingFile);
    return sub;
  };
  auto* embed = with_config(app.add_subcommand("embed", "Render, embed and write the cell cache"));
  embed->add_flag("--force", force, "Overwrite an incompatible existing cache");
  auto* dump = with_config(app.add_subcommand("dump-prompts", "Write rendered prompts as NDJSON"));
  dump->add_option("--out", prompts_out, "Output file (default <run>/prompts.jsonl)");
  auto* train_cmd = with_config(app.add_subcommand("train", "Train every seed on the cached embeddings"));
  auto* eval_cmd = with_config(app.add_subcommand("eval", "Evaluate saved checkpoints on the test split"));
  auto* ablate = with_config(app.add_subcommand("ablate", "Run the four ablation variants"));
  auto* corrupt_cmd = with_config(app.add_subcommand("corrupt", "Corruption-rate sweep"));
  auto* thresholds = with_config(app.add_subcommand("thresholds", "Sensitivity/specificity over a threshold grid"));
  thresholds->add_option("--seed", threshold_seed, "Checkpoint seed (default first train seed)");

  std::vector<const char*> cargv{argv[0]};
  for (const auto& a : args) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) {
      if (!overrides.empty()) throw ConfigError("synth takes no config overrides");
      spec.task = task == "regression" ? TaskKind::regression : TaskKind::classification;
      return cmd_synth(spec, synth_out);
    }
    const auto in = load_inputs(config_file, overrides);
    if (embed->parsed()) return cmd_embed(in, force);
    if (dump->parsed()) return cmd_dump_prompts(in, prompts_out);
    if (train_cmd->parsed()) return cmd_train(in);
    if (eval_cmd->parsed()) return cmd_eval(in);
    if (ablate->parsed()) return cmd_ablate(in);
    if (corrupt_cmd->parsed()) return cmd_corrupt(in);
    if (thresholds->parsed()) return cmd_thresholds(in, threshold_seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 4;
}
