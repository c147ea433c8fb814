#include "mtl/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "mtl/metrics.hpp"
#include "mtl/rng.hpp"

namespace mtl {

namespace {

using ojson = nlohmann::ordered_json;

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CorruptionError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, p);
}

ojson parse_json_file(const std::filesystem::path& p) {
  try {
    return ojson::parse(read_text(p));
  } catch (const ojson::exception& e) {
    throw CorruptionError("malformed " + p.string() + ": " + e.what());
  }
}

ojson opt(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

std::optional<double> opt_from(const ojson& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

Objective objective_for(const ExperimentConfig& cfg) {
  return cfg.model == ModelKind::Transducer ? transducer_objective(cfg.resolved_transducer())
                                            : lm_objective(cfg.resolved_lm());
}

Params init_params(const ExperimentConfig& cfg) {
  std::mt19937_64 rng = substream(cfg.seed, "init");
  return cfg.model == ModelKind::Transducer ? init_transducer(cfg.resolved_transducer(), rng)
                                            : init_lm(cfg.resolved_lm(), rng);
}

/// Utterances of a corpus (over every task drawing from it) for one split.
std::vector<Utterance> corpus_split(const TaskSet& tasks, Corpus c, Split s, std::size_t limit) {
  std::vector<Utterance> out;
  for (const Task& t : tasks.tasks()) {
    if (t.corpus != c) continue;
    for (const Utterance& u : t.split(s)) {
      if (limit != 0 && out.size() >= limit) return out;
      out.push_back(u);
    }
  }
  return out;
}

std::vector<SeqBatch> batches_of(const std::vector<Utterance>& utts, Split s, std::size_t batch_size) {
  std::vector<SeqBatch> out;
  for (std::size_t b = 0; b < utts.size(); b += batch_size) {
    const std::size_t e = std::min(utts.size(), b + batch_size);
    out.push_back(batch_of(std::span<const Utterance>(utts).subspan(b, e - b), s));
  }
  return out;
}

double mean_loss(const Params& params, const Objective& obj, const std::vector<SeqBatch>& batches) {
  double total = 0.0;
  double weight = 0.0;
  for (const SeqBatch& b : batches) {
    const double w = static_cast<double>(b.predicted_tokens());
    total += w * loss_value(obj, params, b);
    weight += w;
  }
  if (weight == 0.0) throw SetupError("evaluation: empty split");
  return total / weight;
}

std::vector<Corpus> present_corpora(const TaskSet& tasks) {
  std::vector<Corpus> out;
  for (Corpus c : {Corpus::Cs, Corpus::En, Corpus::Zh}) {
    for (const Task& t : tasks.tasks()) {
      if (t.corpus == c) {
        out.push_back(c);
        break;
      }
    }
  }
  return out;
}

std::size_t target_index(const TaskSet& tasks) {
  const int t = tasks.target_task();
  if (t < 0) throw SetupError("task set has no target task");
  return static_cast<std::size_t>(t);
}

ojson metadata_json(const ExperimentConfig& cfg, const Params& init) {
  const MetaHyper meta = cfg.resolved_meta();
  ojson seeds = ojson::object();
  seeds["run"] = cfg.seed;
  for (const char* name : {"data", "noise", "init", "sampling", "finetune", "rescore"}) {
    seeds[name] = run_substream_seed(cfg, name);
  }
  ojson j;
  j["run_id"] = cfg.run_id;
  j["strategy"] = strategy_name(cfg.strategy);
  j["model"] = model_kind_name(cfg.model);
  ojson roster = ojson::array();
  for (Corpus c : cfg.train_filter().corpora) roster.push_back(corpus_name(c));
  j["roster"] = roster;
  j["seeds"] = seeds;
  j["parameters"] = init.element_count();
  j["iterations"] = cfg.iterations;
  if (cfg.strategy == Strategy::MetaTransfer) {
    j["meta"] = {{"mode", mode_name(meta.mode)},
                 {"alpha", meta.alpha},
                 {"beta", meta.beta},
                 {"tasks_per_iter", meta.tasks_per_iter},
                 {"inner_steps", meta.inner_steps},
                 {"outer_optimizer", optimizer_name(meta.outer)},
                 {"clip_norm", meta.clip_norm},
                 {"aggregate", "sum"},
                 {"val_split", split_name(meta.val_split)},
                 {"val_batch_size", meta.val_batch_size}};
  } else {
    j["optimizer"] = {{"kind", optimizer_name(cfg.optim.kind)},
                      {"lr", cfg.optim.lr},
                      {"clip_norm", cfg.optim.clip_norm}};
  }
  j["batch_size"] = cfg.batch_size;
  if (cfg.finetune) {
    if (cfg.model == ModelKind::Transducer) {
      j["finetune"] = {{"optimizer", "sgd"},
                       {"lr", cfg.ft_lr},
                       {"patience", cfg.ft_patience},
                       {"max_epochs", cfg.ft_max_epochs}};
    } else {
      j["finetune"] = {{"optimizer", "sgd"},
                       {"lr", 1.0},
                       {"decay", 0.25},
                       {"stop_after", 5},
                       {"max_epochs", cfg.lm_ft_max_epochs}};
    }
  }
  if (cfg.model == ModelKind::Transducer) {
    j["decode"] = {{"beam_width", cfg.beam_width},
                   {"max_len", cfg.decode_max_len},
                   {"w_dec", cfg.weights.w_dec},
                   {"w_lm", cfg.weights.w_lm},
                   {"w_wc", cfg.weights.w_wc},
                   {"rescore", cfg.rescore}};
  }
  j["selection"] = "best cs validation loss";
  return j;
}

struct Evaluation {
  ojson metrics = ojson::object();
  std::vector<ojson> decodes;
};

Evaluation evaluate_params(const ExperimentConfig& cfg, const TaskSet& tasks, const Params& params,
                           const Params* rescore_lm, const std::string& stage) {
  Evaluation ev;
  const Objective obj = objective_for(cfg);
  const TransducerConfig tcfg = cfg.resolved_transducer();
  const LmConfig lcfg = cfg.resolved_lm();
  for (Corpus c : cfg.test_corpora) {
    const std::vector<Utterance> utts = corpus_split(tasks, c, Split::Test, cfg.test_limit);
    if (utts.empty()) continue;
    const auto batches = batches_of(utts, Split::Test, cfg.batch_size);
    ojson m = ojson::object();
    const double loss = mean_loss(params, obj, batches);
    m["loss"] = loss;
    if (cfg.model == ModelKind::Lm) {
      m["perplexity"] = perplexity(params, lcfg, batches);
    } else {
      CerTotal plain;
      CerTotal rescored;
      for (const Utterance& u : utts) {
        TransducerStepper stepper(params, tcfg, u.features);
        std::vector<Hypothesis> hyps = beam_search(std::ref(stepper), cfg.beam_width, cfg.decode_max_len);
        auto strip = [](const std::vector<int>& toks) {
          std::vector<int> out;
          for (int t : toks) {
            if (t != kBegin && t != kEnd && t != kPad) out.push_back(t);
          }
          return out;
        };
        plain.add(u.tokens, strip(hyps.front().tokens));
        RescoreWeights w = cfg.weights;
        std::function<double(std::span<const int>)> lm;
        if (rescore_lm) {
          lm = [&](std::span<const int> toks) {
            // Score the hypothesis as a complete sentence: begin ... end.
            std::vector<int> s(toks.begin(), toks.end());
            if (s.back() != kEnd) s.push_back(kEnd);
            return lm_score(*rescore_lm, lcfg, s);
          };
        } else {
          w.w_lm = 0.0;
        }
        RescoreResult rr = rescore(hyps, lm, w);
        if (rescore_lm) rescored.add(u.tokens, strip(rr.scored[rr.best].hyp.tokens));

        ojson rec;
        rec["stage"] = stage;
        rec["corpus"] = corpus_name(c);
        rec["id"] = u.id;
        rec["reference"] = u.tokens;
        ojson hs = ojson::array();
        for (const Scored& s : rr.scored) {
          hs.push_back({{"tokens", s.hyp.tokens},
                        {"dec_logp", s.hyp.dec_logp},
                        {"lm_logp", opt(s.hyp.lm_logp)},
                        {"word_count", s.hyp.word_count},
                        {"score", s.score}});
        }
        rec["hypotheses"] = hs;
        rec["best"] = rr.best;
        ev.decodes.push_back(std::move(rec));
      }
      m["cer"] = plain.rate();
      if (rescore_lm) m["cer_rescored"] = rescored.rate();
    }
    m["utterances"] = utts.size();
    ev.metrics[std::string(corpus_name(c))] = m;
  }
  return ev;
}

Params train_rescore_lm(const ExperimentConfig& cfg, const TaskSet& tasks) {
  const LmConfig lcfg = cfg.resolved_lm();
  std::mt19937_64 init_rng = substream(run_substream_seed(cfg, "rescore"), "init");
  TrainState st = TrainState::fresh(init_lm(lcfg, init_rng), substream(run_substream_seed(cfg, "rescore"), "sampling"));
  const Objective obj = lm_objective(lcfg);
  TaskFilter cs;
  cs.corpora = {Corpus::Cs};
  const OptimizerConfig opt{OptimizerKind::Adam, cfg.rescore_lm_lr, cfg.optim.clip_norm};
  for (std::int64_t i = 0; i < cfg.rescore_lm_iterations; ++i) joint_step(st, tasks, cs, opt, cfg.batch_size, obj);
  return st.params;
}

ojson checksums_json(const TaskSet& tasks) {
  ojson j = ojson::object();
  for (std::size_t i = 0; i < tasks.tasks().size(); ++i) {
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
      j[tasks.task(i).name + "/" + std::string(split_name(s))] = hex64(tasks.split_checksum(i, s));
    }
  }
  return j;
}

ojson schedule_json(const ScheduleResult& r) {
  ojson epochs = ojson::array();
  for (const EpochRecord& e : r.history) {
    epochs.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"val_loss", e.val_loss}, {"improved", e.improved}});
  }
  return {{"initial_val", r.initial_val}, {"best_val", r.best_val}, {"epochs", epochs}};
}

}  // namespace

TaskSet make_taskset(const ExperimentConfig& cfg) {
  if (cfg.corpus_dir.empty()) {
    return build_taskset(cfg.data, run_substream_seed(cfg, "data"), run_substream_seed(cfg, "noise"));
  }
  TaskSet tasks = load_corpus(cfg.corpus_dir);
  if (tasks.vocab_size() != cfg.data.vocab_size() || tasks.features().dim != cfg.data.features.dim) {
    throw ConfigError("run.corpus_dir: corpus vocabulary or feature width disagrees with data.lang_vocab/data.feat_dim");
  }
  return tasks;
}

RunPaths run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  RunPaths paths{dir};
  std::filesystem::create_directories(paths.checkpoints());
  const std::string snapshot = cfg.snapshot();
  if (std::filesystem::exists(paths.config())) {
    if (read_text(paths.config()) != snapshot) {
      throw ConfigError("run directory " + dir.string() + " holds a different config");
    }
  } else {
    write_text(paths.config(), snapshot);
  }

  const TaskSet tasks = make_taskset(cfg);
  const Objective obj = objective_for(cfg);
  const Params init = init_params(cfg);
  write_text(paths.metadata(), metadata_json(cfg, init).dump(2) + "\n");

  TrainState state;
  const bool resuming = std::filesystem::exists(paths.state() / "state.json");
  if (resuming) {
    state = TrainState::load(paths.state());
    truncate_curves(paths.curves(), state.iteration);
  } else {
    std::filesystem::remove(paths.curves());
    state = TrainState::fresh(init, substream(cfg.seed, "sampling"));
  }

  const auto started = std::chrono::steady_clock::now();
  auto wall = [&] {
    if (!cfg.wall_clock) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  };
  CurveWriter curves(paths.curves(), cfg.run_id);
  const std::vector<Corpus> corpora = present_corpora(tasks);
  std::map<Corpus, std::vector<SeqBatch>> val_batches;
  for (Corpus c : corpora) val_batches[c] = batches_of(corpus_split(tasks, c, Split::Val, cfg.eval_limit), Split::Val, cfg.batch_size);

  auto checkpoint = [&](std::optional<double> train_loss) {
    if (train_loss) curves.log({state.iteration, "train", *train_loss, wall()});
    double cs_val = 0.0;
    for (Corpus c : corpora) {
      const double loss = mean_loss(state.params, obj, val_batches[c]);
      curves.log({state.iteration, std::string(corpus_name(c)) + "_val", loss, wall()});
      if (c == Corpus::Cs) cs_val = loss;
    }
    if (cs_val < state.best_val) {
      state.best_val = cs_val;
      state.patience_used = 0;
      save_checkpoint(paths.best(), state.params);
    } else {
      ++state.patience_used;
    }
    state.save(paths.state());
  };

  if (!resuming) checkpoint(std::nullopt);
  const MetaHyper meta = cfg.resolved_meta();
  const TaskFilter roster = cfg.train_filter();
  while (state.iteration < cfg.iterations) {
    double loss = 0.0;
    if (cfg.strategy == Strategy::MetaTransfer) {
      const MetaStepResult r = meta_step(state, tasks, meta, obj);
      for (const TaskDiagnostics& d : r.tasks) loss += d.val_loss;
      loss /= static_cast<double>(r.tasks.size());
    } else {
      loss = joint_step(state, tasks, roster, cfg.optim, cfg.batch_size, obj);
    }
    if (state.iteration % cfg.eval_every == 0 || state.iteration == cfg.iterations) checkpoint(loss);
  }
  save_checkpoint(paths.final_params(), state.params);

  if (cfg.finetune && !std::filesystem::exists(paths.checkpoints() / "finetune.json")) {
    TrainState ft = TrainState::fresh(load_checkpoint(paths.best()), substream(cfg.seed, "finetune"));
    const std::size_t target = target_index(tasks);
    FineTuneResult r = cfg.model == ModelKind::Transducer
                           ? fine_tune(std::move(ft), tasks, target, cfg.ft_lr, cfg.ft_patience,
                                       cfg.ft_max_epochs, cfg.batch_size, obj)
                           : lm_fine_tune_schedule(std::move(ft), tasks, target, cfg.batch_size, obj,
                                                   cfg.lm_ft_max_epochs);
    save_checkpoint(paths.checkpoints() / "finetuned.ckpt", r.state.params);
    write_text(paths.checkpoints() / "finetune.json", schedule_json(r.schedule).dump(2) + "\n");
  }
  if (cfg.rescore && !std::filesystem::exists(paths.checkpoints() / "rescore_lm.ckpt")) {
    save_checkpoint(paths.checkpoints() / "rescore_lm.ckpt", train_rescore_lm(cfg, tasks));
  }

  evaluate_run(dir);
  return paths;
}

void evaluate_run(const std::filesystem::path& dir) {
  RunPaths paths{dir};
  const ExperimentConfig cfg = ExperimentConfig::load(paths.config());
  const TaskSet tasks = make_taskset(cfg);
  const TrainState state = TrainState::load(paths.state());
  const Params best = load_checkpoint(paths.best());
  std::optional<Params> lm;
  if (cfg.rescore) lm = load_checkpoint(paths.checkpoints() / "rescore_lm.ckpt");

  ojson report;
  report["run_id"] = cfg.run_id;
  report["strategy"] = strategy_name(cfg.strategy);
  report["model"] = model_kind_name(cfg.model);
  ojson roster = ojson::array();
  for (Corpus c : cfg.train_filter().corpora) roster.push_back(corpus_name(c));
  report["roster"] = roster;
  report["seed"] = cfg.seed;
  report["iterations"] = state.iteration;
  report["best_val"] = std::isfinite(state.best_val) ? ojson(state.best_val) : ojson(nullptr);
  report["split_checksums"] = checksums_json(tasks);

  Evaluation base = evaluate_params(cfg, tasks, best, lm ? &*lm : nullptr, "base");
  report["base"] = base.metrics;
  std::vector<ojson> decodes = std::move(base.decodes);
  if (cfg.finetune) {
    ojson ft = parse_json_file(paths.checkpoints() / "finetune.json");
    const Params tuned = load_checkpoint(paths.checkpoints() / "finetuned.ckpt");
    Evaluation after = evaluate_params(cfg, tasks, tuned, lm ? &*lm : nullptr, "finetuned");
    ft["metrics"] = after.metrics;
    report["finetune"] = ft;
    for (auto& d : after.decodes) decodes.push_back(std::move(d));
  }
  write_text(paths.report(), report.dump(2) + "\n");
  if (cfg.model == ModelKind::Transducer) {
    std::string lines;
    for (const ojson& d : decodes) lines += d.dump() + "\n";
    write_text(paths.decode(), lines);
  }
}

RunSummary read_summary(const std::filesystem::path& run_dir) {
  RunPaths paths{run_dir};
  const ojson r = parse_json_file(paths.report());
  RunSummary s;
  s.dir = run_dir;
  try {
    s.run_id = r.at("run_id").get<std::string>();
    auto metrics = [](const ojson& j) {
      std::map<std::string, CorpusMetrics> out;
      for (auto it = j.begin(); it != j.end(); ++it) {
        const ojson& m = it.value();
        out[it.key()] = {opt_from(m, "cer"), opt_from(m, "cer_rescored"), opt_from(m, "loss"),
                         opt_from(m, "perplexity")};
      }
      return out;
    };
    s.base = metrics(r.at("base"));
    if (r.contains("finetune")) s.finetuned = metrics(r.at("finetune").at("metrics"));
    for (auto it = r.at("split_checksums").begin(); it != r.at("split_checksums").end(); ++it) {
      s.checksums[it.key()] = it.value().get<std::string>();
    }
    s.best_val = opt_from(r, "best_val");
  } catch (const ojson::exception& e) {
    throw CorruptionError("malformed report " + paths.report().string() + ": " + e.what());
  }
  return s;
}

Comparison compare_runs(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& baseline,
                        std::optional<double> threshold) {
  const RunSummary base = read_summary(baseline);
  Comparison out;
  out.baseline = base.run_id;
  if (threshold) {
    out.threshold = *threshold;
  } else {
    const auto series = read_curves(RunPaths{baseline}.curves());
    std::optional<double> last;
    for (const CurvePoint& p : series) {
      if (p.split == "cs_val") last = p.loss;
    }
    if (!last) throw ComparabilityError("baseline " + base.run_id + " has no cs_val curve");
    out.threshold = *last;
  }

  auto final_metrics = [](const RunSummary& s) { return s.finetuned.empty() ? s.base : s.finetuned; };
  const auto base_metrics = final_metrics(base);

  std::vector<std::string> corpora;
  std::vector<RunSummary> summaries;
  for (const auto& dir : runs) {
    RunSummary s = read_summary(dir);
    std::size_t shared = 0;
    for (const auto& [key, sum] : s.checksums) {
      if (!key.ends_with("/test")) continue;
      auto it = base.checksums.find(key);
      if (it == base.checksums.end()) continue;
      ++shared;
      if (it->second != sum) {
        throw ComparabilityError("run " + s.run_id + " was evaluated on a different " + key + " split than " +
                                 base.run_id);
      }
    }
    if (shared == 0) throw ComparabilityError("run " + s.run_id + " shares no test split with " + base.run_id);
    for (const auto& [c, m] : final_metrics(s)) {
      if (std::find(corpora.begin(), corpora.end(), c) == corpora.end()) corpora.push_back(c);
    }
    summaries.push_back(std::move(s));
  }
  std::sort(corpora.begin(), corpora.end());
  out.corpora = corpora;

  for (const RunSummary& s : summaries) {
    ComparisonRow row;
    row.run_id = s.run_id;
    const auto mine = final_metrics(s);
    for (const std::string& c : corpora) {
      ComparisonCell cell;
      auto it = mine.find(c);
      if (it != mine.end()) cell.value = it->second.cer ? it->second.cer : it->second.perplexity;
      auto bt = base_metrics.find(c);
      if (cell.value && bt != base_metrics.end()) {
        const std::optional<double> b = bt->second.cer ? bt->second.cer : bt->second.perplexity;
        if (b && *b > 0.0) cell.delta = relative_delta(*b, *cell.value);
        if (b && *b == 0.0 && *cell.value == 0.0) cell.delta = Delta{0.0, 0.0};
      }
      row.cer[c] = cell;
    }
    const auto series = read_curves(RunPaths{s.dir}.curves());
    std::vector<CurvePoint> cs;
    for (const CurvePoint& p : series) {
      if (p.split == "cs_val") cs.push_back(p);
    }
    const std::int64_t it = iterations_to_threshold(cs, out.threshold);
    if (it >= 0) row.iterations_to_threshold = it;
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string Comparison::render() const {
  std::ostringstream os;
  os << "baseline: " << baseline << "  convergence threshold (cs_val loss): " << format_double(threshold) << "\n";
  os << std::left << std::setw(28) << "run";
  for (const std::string& c : corpora) os << std::setw(30) << (c + " (abs pts / rel %)");
  os << "iters-to-threshold\n";
  auto fixed = [](double v, int p) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(p) << v;
    return s.str();
  };
  for (const ComparisonRow& r : rows) {
    os << std::setw(28) << r.run_id;
    for (const std::string& c : corpora) {
      const ComparisonCell& cell = r.cer.at(c);
      std::string text = "absent";
      if (cell.value) {
        text = fixed(100.0 * *cell.value, 2);
        if (cell.delta) {
          text += " (" + fixed(100.0 * cell.delta->absolute, 2) + " / " + fixed(cell.delta->relative, 1) + "%)";
        } else {
          text += " (baseline absent)";
        }
      }
      os << std::setw(30) << text;
    }
    os << (r.iterations_to_threshold ? std::to_string(*r.iterations_to_threshold) : "not reached") << "\n";
  }
  return os.str();
}

std::vector<GridRow> grid_preset(const std::string& name, const ExperimentConfig& base) {
  if (name != "paper") throw ConfigError("unknown grid preset '" + name + "'");
  using C = Corpus;
  struct Row {
    const char* label;
    Strategy strategy;
    std::vector<Corpus> roster;
    bool finetune;
    bool rescore;
  };
  const std::vector<Row> rows = {
      {"only_cs", Strategy::OnlyCs, {C::Cs}, false, false},
      {"joint-en-zh", Strategy::Joint, {C::En, C::Zh}, false, false},
      {"joint-en-zh-ft", Strategy::Joint, {C::En, C::Zh}, true, false},
      {"joint-en-cs", Strategy::Joint, {C::En, C::Cs}, false, false},
      {"joint-zh-cs", Strategy::Joint, {C::Zh, C::Cs}, false, false},
      {"joint-en-zh-cs", Strategy::Joint, {C::En, C::Zh, C::Cs}, false, false},
      {"joint-en-zh-cs-ft", Strategy::Joint, {C::En, C::Zh, C::Cs}, true, false},
      {"joint-en-zh-cs-ft-lm", Strategy::Joint, {C::En, C::Zh, C::Cs}, true, true},
      {"meta-en-cs", Strategy::MetaTransfer, {C::En, C::Cs}, false, false},
      {"meta-zh-cs", Strategy::MetaTransfer, {C::Zh, C::Cs}, false, false},
      {"meta-en-zh-cs", Strategy::MetaTransfer, {C::En, C::Zh, C::Cs}, false, false},
      {"meta-en-zh-cs-ft", Strategy::MetaTransfer, {C::En, C::Zh, C::Cs}, true, false},
      {"meta-en-zh-cs-ft-lm", Strategy::MetaTransfer, {C::En, C::Zh, C::Cs}, true, true},
  };
  std::vector<GridRow> out;
  for (const Row& r : rows) {
    ExperimentConfig c = base;
    c.run_id = r.label;
    c.strategy = r.strategy;
    c.roster = r.roster;
    c.finetune = r.finetune;
    c.rescore = r.rescore;
    c.model = ModelKind::Transducer;
    out.push_back({r.label, c});
  }
  return out;
}

}  // namespace mtl
