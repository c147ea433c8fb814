// Command-line front end: data generation, training runs, evaluation,
// decoding, run comparison and experiment grids.

#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtl/harness.hpp"
#include "mtl/metrics.hpp"

namespace {

using namespace mtl;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCorrupt = 4;

/// Base config from --config plus "--key=value" / "--key value" overrides.
ExperimentConfig build_config(const std::string& path, const std::vector<std::string>& extras) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig() : ExperimentConfig::load(path);
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string arg = extras[i];
    if (!arg.starts_with("--")) {
      problems.push_back("unexpected argument '" + arg + "'");
      continue;
    }
    arg = arg.substr(2);
    std::string key;
    std::string value;
    const auto eq = arg.find('=');
    if (eq != std::string::npos) {
      key = arg.substr(0, eq);
      value = arg.substr(eq + 1);
    } else if (i + 1 < extras.size()) {
      key = arg;
      value = extras[++i];
    } else {
      problems.push_back("missing value for --" + arg);
      continue;
    }
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      problems.push_back(e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid arguments:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  return cfg;
}

void print_corpus_stats(const TaskSet& tasks) {
  for (const Task& t : tasks.tasks()) {
    std::cout << t.name << " (" << role_name(t.role) << ", " << corpus_name(t.corpus) << "): train " << t.train.size()
              << ", val " << t.val.size() << ", test " << t.test.size();
    if (t.corpus == Corpus::Cs) {
      std::cout << "; cmi/spf train " << format_double(cmi(t.train)) << "/" << format_double(spf(t.train));
    }
    std::cout << "\n";
  }
}

void print_report(const std::filesystem::path& dir) {
  const RunSummary s = read_summary(dir);
  auto show = [](const char* stage, const std::map<std::string, CorpusMetrics>& m) {
    for (const auto& [c, v] : m) {
      std::cout << "  " << stage << " " << c << ":";
      if (v.cer) std::cout << " cer " << format_double(*v.cer);
      if (v.cer_rescored) std::cout << " cer_rescored " << format_double(*v.cer_rescored);
      if (v.perplexity) std::cout << " ppl " << format_double(*v.perplexity);
      if (v.loss) std::cout << " loss " << format_double(*v.loss);
      std::cout << "\n";
    }
  };
  std::cout << s.run_id << " -> " << dir.string() << "\n";
  show("base", s.base);
  show("finetuned", s.finetuned);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-transfer learning for code-switched sequence transduction (synthetic desk-scale)"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string run_dir;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic task set and dump it");
  gen->add_option("--config", config_path, "Config file (key = value lines)");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->allow_extras();

  auto* train = app.add_subcommand("train", "Run one experiment (train, fine-tune, evaluate)");
  train->add_option("--config", config_path, "Config file (key = value lines)");
  train->add_option("--out", out_dir, "Run directory")->required();
  train->allow_extras();

  auto* evaluate = app.add_subcommand("evaluate", "Recompute report.json from a run's checkpoints");
  evaluate->add_option("--run", run_dir, "Run directory")->required();

  std::size_t decode_limit = 5;
  auto* decode = app.add_subcommand("decode", "Print decoded hypotheses of a finished run");
  decode->add_option("--run", run_dir, "Run directory")->required();
  decode->add_option("--limit", decode_limit, "Utterances to print");

  std::string baseline;
  std::vector<std::string> runs;
  std::optional<double> threshold;
  auto* compare = app.add_subcommand("compare", "Compare runs against a baseline run");
  compare->add_option("--baseline", baseline, "Baseline run directory")->required();
  compare->add_option("runs", runs, "Run directories")->required();
  compare->add_option("--threshold", threshold, "Convergence threshold on cs_val loss");

  std::string preset = "paper";
  bool dry_run = false;
  auto* grid = app.add_subcommand("grid", "Enumerate or run a preset experiment grid");
  grid->add_option("--preset", preset, "Grid name");
  grid->add_option("--config", config_path, "Base config file");
  grid->add_option("--out", out_dir, "Parent directory for the runs");
  grid->add_flag("--dry-run", dry_run, "List the rows without running them");
  grid->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) {
      const ExperimentConfig cfg = build_config(config_path, gen->remaining());
      cfg.validate();
      const TaskSet tasks = make_taskset(cfg);
      dump_corpus(tasks, out_dir);
      print_corpus_stats(tasks);
    } else if (*train) {
      const ExperimentConfig cfg = build_config(config_path, train->remaining());
      run_experiment(cfg, out_dir);
      print_report(out_dir);
    } else if (*evaluate) {
      evaluate_run(run_dir);
      print_report(run_dir);
    } else if (*decode) {
      std::ifstream in(std::filesystem::path(run_dir) / "decode.jsonl");
      if (!in) throw CorruptionError("no decode.jsonl in " + run_dir + " (transducer runs only)");
      std::size_t shown = 0;
      for (std::string line; shown < decode_limit && std::getline(in, line); ++shown) {
        const auto rec = nlohmann::json::parse(line);
        const auto& best = rec.at("hypotheses").at(rec.at("best").get<std::size_t>());
        std::cout << rec.at("stage").get<std::string>() << " " << rec.at("corpus").get<std::string>() << " #"
                  << rec.at("id") << "\n  ref " << rec.at("reference").dump() << "\n  hyp " << best.at("tokens").dump()
                  << "  dec " << best.at("dec_logp") << " lm " << best.at("lm_logp") << " wc "
                  << best.at("word_count") << " score " << best.at("score") << "\n";
      }
    } else if (*compare) {
      std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
      std::cout << compare_runs(dirs, baseline, threshold).render();
    } else if (*grid) {
      const ExperimentConfig base = build_config(config_path, grid->remaining());
      const auto rows = grid_preset(preset, base);
      for (const GridRow& r : rows) {
        std::cout << r.label << ": strategy=" << strategy_name(r.config.strategy)
                  << " roster=" << r.config.get("run.roster") << " finetune=" << r.config.get("run.finetune")
                  << " rescore=" << r.config.get("run.rescore") << "\n";
      }
      if (!dry_run) {
        if (out_dir.empty()) throw ConfigError("grid: --out is required unless --dry-run");
        for (const GridRow& r : rows) {
          run_experiment(r.config, std::filesystem::path(out_dir) / r.label);
          print_report(std::filesystem::path(out_dir) / r.label);
        }
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const CorruptionError& e) {
    std::cerr << "corrupt input: " << e.what() << "\n";
    return kExitCorrupt;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "corrupt input: " << e.what() << "\n";
    return kExitCorrupt;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
