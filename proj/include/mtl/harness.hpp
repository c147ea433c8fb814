#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtl/data.hpp"
#include "mtl/decode.hpp"
#include "mtl/meta.hpp"
#include "mtl/metrics.hpp"
#include "mtl/models.hpp"

namespace mtl {

enum class Strategy { OnlyCs, Joint, MetaTransfer };
enum class ModelKind { Transducer, Lm };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view s);
std::string_view model_kind_name(ModelKind k);
ModelKind parse_model_kind(std::string_view s);

/// Every knob of one run. Text form: one "dotted.key = value" per line.
struct ExperimentConfig {
  std::string run_id = "run";
  Strategy strategy = Strategy::MetaTransfer;
  std::vector<Corpus> roster{Corpus::En, Corpus::Zh, Corpus::Cs};
  ModelKind model = ModelKind::Transducer;
  bool finetune = false;
  bool rescore = false;
  std::uint64_t seed = 1;
  std::int64_t iterations = 2000;
  std::int64_t eval_every = 50;
  std::size_t eval_limit = 0;  // validation utterances per corpus on curves (0 = all)
  std::size_t test_limit = 0;  // test utterances per corpus (0 = all)
  std::vector<Corpus> test_corpora{Corpus::En, Corpus::Zh, Corpus::Cs};
  bool wall_clock = false;
  std::string corpus_dir;  // load a dumped corpus instead of generating one

  std::size_t batch_size = 8;
  OptimizerConfig optim{OptimizerKind::Adam, 1e-4, 5.0};
  MetaHyper meta;

  DataConfig data;
  TransducerConfig transducer;
  LmConfig lm;

  double ft_lr = 1e-5;
  int ft_patience = 2;
  int ft_max_epochs = 20;
  int lm_ft_max_epochs = 30;

  int beam_width = 5;
  int decode_max_len = 300;
  RescoreWeights weights;
  std::int64_t rescore_lm_iterations = 1000;
  double rescore_lm_lr = 1e-3;

  ExperimentConfig();

  /// Throws ConfigError naming every offending key.
  void validate() const;
  /// Canonical snapshot text; parse(snapshot()) reproduces the config.
  std::string snapshot() const;
  /// Applies one "key = value" setting.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// The training roster as a task filter (only_cs always means {CS}).
  TaskFilter train_filter() const;
  /// Sub-configs with the derived fields (vocabulary, feature width, roster) filled in.
  MetaHyper resolved_meta() const;
  TransducerConfig resolved_transducer() const;
  LmConfig resolved_lm() const;
};

/// Named sub-seed of the run seed; every random draw of a run derives from one.
std::uint64_t run_substream_seed(const ExperimentConfig& cfg, std::string_view name);

/// Builds (or loads) the run's TaskSet.
TaskSet make_taskset(const ExperimentConfig& cfg);

struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "config.txt"; }
  std::filesystem::path metadata() const { return dir / "metadata.json"; }
  std::filesystem::path checkpoints() const { return dir / "checkpoints"; }
  std::filesystem::path state() const { return dir / "checkpoints" / "state"; }
  std::filesystem::path best() const { return dir / "checkpoints" / "best.ckpt"; }
  std::filesystem::path final_params() const { return dir / "checkpoints" / "final.ckpt"; }
  std::filesystem::path curves() const { return dir / "curves.csv"; }
  std::filesystem::path report() const { return dir / "report.json"; }
  std::filesystem::path decode() const { return dir / "decode.jsonl"; }
};

/// Trains, optionally fine-tunes, evaluates, and writes every artifact into
/// `dir`. A directory holding a checkpoint of the same config resumes from it;
/// one holding a different config is rejected.
RunPaths run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Recomputes report.json (and decode.jsonl) from a finished run's checkpoints.
void evaluate_run(const std::filesystem::path& dir);

/// Per-corpus results of one evaluation pass.
struct CorpusMetrics {
  std::optional<double> cer;
  std::optional<double> cer_rescored;
  std::optional<double> loss;
  std::optional<double> perplexity;
};

struct RunSummary {
  std::string run_id;
  std::filesystem::path dir;
  std::map<std::string, CorpusMetrics> base;       // before fine-tuning
  std::map<std::string, CorpusMetrics> finetuned;  // empty without fine-tuning
  std::map<std::string, std::string> checksums;    // "task/split" -> hex
  std::optional<double> best_val;
};

RunSummary read_summary(const std::filesystem::path& run_dir);

struct ComparisonCell {
  std::optional<double> value;
  std::optional<Delta> delta;  // absent when the baseline lacks the metric
};

struct ComparisonRow {
  std::string run_id;
  std::map<std::string, ComparisonCell> cer;  // per corpus; final (fine-tuned if present)
  std::optional<std::int64_t> iterations_to_threshold;
};

struct Comparison {
  std::string baseline;
  double threshold = 0.0;
  std::vector<std::string> corpora;
  std::vector<ComparisonRow> rows;

  std::string render() const;
};

/// Compares runs against a baseline run. Test-split checksums must agree.
/// The convergence threshold defaults to the baseline's final CS validation loss.
Comparison compare_runs(const std::vector<std::filesystem::path>& runs,
                        const std::filesystem::path& baseline,
                        std::optional<double> threshold = std::nullopt);

struct GridRow {
  std::string label;
  ExperimentConfig config;
};

/// Named grids over a base config. "paper": only_cs, joint and meta_transfer
/// over the source rosters, plus fine-tuning and LM-rescoring variants.
std::vector<GridRow> grid_preset(const std::string& name, const ExperimentConfig& base);

}  // namespace mtl
