// Acceptance runner: exact oracles plus the seeded desk-scale comparisons of
// meta-transfer, joint and only-CS training. Prints one PASS/FAIL line per
// criterion and exits non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtl/harness.hpp"
#include "mtl/meta.hpp"
#include "mtl/metrics.hpp"
#include "support.hpp"

using namespace mtl;
using namespace mtl::testing;
namespace fs = std::filesystem;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string fixed(double v, int p = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(p) << v;
  return os.str();
}

std::string list(const std::vector<double>& v, int p = 4) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fixed(v[i], p);
  return s + "]";
}

// ---------------------------------------------------------------- oracles

Verdict gradient_correctness() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  auto record = [&](const std::string& name, double err) {
    ++checks;
    if (!(err <= worst)) {
      worst = err;
      worst_name = name;
    }
  };
  const TransducerConfig tcfg = tiny_transducer_config();
  const LmConfig lcfg = tiny_lm_config();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const OpCase& c : op_cases(seed)) record(c.name, grad_check(c.loss, c.params, 1e-5));
    std::mt19937_64 rng(seed);
    const Params tp = init_transducer(tcfg, rng);
    const SeqBatch tb = tiny_transducer_batch(seed + 1000, tcfg, 2);
    record("transducer_loss", grad_check([&](Tape<double>& t, const ParamVars<double>& p) {
      return transducer_loss(t, p, tcfg, tb);
    }, tp, 1e-5));
    const Params lp = init_lm(lcfg, rng);
    const SeqBatch lb = tiny_lm_batch(seed + 2000, lcfg.vocab_size, 2);
    record("lm_loss", grad_check([&](Tape<double>& t, const ParamVars<double>& p) {
      return lm_loss(t, p, lcfg, lb);
    }, lp, 1e-5));
  }
  const double elapsed = seconds_since(t0);
  v.detail << checks << " checks over 20 seeds, worst rel err " << worst << " (" << worst_name << "), " << fixed(elapsed, 1)
           << " s";
  v.require(worst <= 1e-4, "rel err <= 1e-4");
  v.require(elapsed < 60.0, "runtime < 60 s");
  return v;
}

Verdict meta_gradient_exactness() {
  Verdict v;
  const Objective obj = tiny_nonlinear_objective();
  double worst = 0.0;
  std::size_t params = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Params theta = tiny_nonlinear_params(seed);
    params = theta.element_count();
    const std::vector<SeqBatch> train{tiny_nonlinear_batch(seed * 10 + 1), tiny_nonlinear_batch(seed * 10 + 2)};
    const SeqBatch val = tiny_nonlinear_batch(seed * 10 + 3);
    for (int steps : {1, 2}) {
      const GradMap so = meta_gradient(theta, obj, train, val, 0.5, MetaMode::SecondOrder, steps).grad;
      const GradMap fd = meta_objective_fd(obj, theta, train, val, 0.5, steps, 1e-5);
      worst = std::max(worst, max_rel_diff(so, fd, 1e-6));
    }
  }
  double closed = 0.0;
  const Objective quad = quadratic_objective();
  for (double alpha : {0.1, 0.3, 0.5, 0.9}) {
    for (double theta : {-2.0, 0.0, 1.5}) {
      const double c_tra = 0.2;
      const double c_val = -0.7;
      const double adapted = theta - alpha * (theta - c_tra);
      const std::vector<SeqBatch> train{quadratic_batch({c_tra})};
      const auto fo = meta_gradient(quadratic_params({theta}), quad, train, quadratic_batch({c_val}), alpha,
                                    MetaMode::FirstOrder);
      closed = std::max(closed, std::abs(fo.grad.at("theta")[0] - (adapted - c_val)));
    }
  }
  v.detail << "second-order vs central differences on " << params << " parameters: " << worst
           << "; first-order vs closed form: " << closed;
  v.require(params <= 10, "<= 10 parameters");
  v.require(worst <= 1e-5, "second-order rel err <= 1e-5");
  v.require(closed <= 1e-10, "first-order closed form <= 1e-10");
  return v;
}

Verdict equivalence_oracles() {
  Verdict v;
  // Beam 1 against greedy on a real transducer over random utterances.
  const TransducerConfig cfg = tiny_transducer_config();
  std::mt19937_64 rng(7);
  const Params p = init_transducer(cfg, rng);
  std::uniform_int_distribution<int> frames(2, 10);
  int same = 0;
  int order_kept = 0;
  for (int u = 0; u < 100; ++u) {
    const TensorD feats = random_tensor({frames(rng), cfg.feat_dim}, rng, 1.5);
    TransducerStepper stepper(p, cfg, feats);
    const auto beam = beam_search(std::ref(stepper), 1, cfg.max_len - 1);
    const Hypothesis greedy = greedy_decode(std::ref(stepper), cfg.max_len - 1);
    if (beam.size() == 1 && beam[0].tokens == greedy.tokens && beam[0].dec_logp == greedy.dec_logp) ++same;

    const auto wide = beam_search(std::ref(stepper), 4, cfg.max_len - 1);
    const RescoreResult r = rescore(wide, nullptr, RescoreWeights{1.0, 0.0, 0.0});
    bool kept = r.best == 0;
    for (std::size_t i = 0; i < wide.size(); ++i) kept = kept && r.scored[i].hyp.tokens == wide[i].tokens;
    if (kept) ++order_kept;
  }

  // Exhaustive beam over two content tokens and end, max_len 3.
  int exhaustive = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const StepFn inner = random_step_fn(seed, 8, 1.0);
    const std::vector<int> allowed{kEnd, kFirstLanguageToken, kFirstLanguageToken + 1};
    const StepFn step = [&](std::span<const int> prefix) {
      const std::vector<double> lp = inner(prefix);
      std::vector<double> out(lp.size(), kNegInf);
      double z = 0.0;
      for (int t : allowed) z += std::exp(lp[static_cast<std::size_t>(t)]);
      for (int t : allowed) out[static_cast<std::size_t>(t)] = lp[static_cast<std::size_t>(t)] - std::log(z);
      return out;
    };
    std::vector<int> best_tokens;
    double best = kNegInf;
    std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& prefix, double logp) {
      if (prefix.back() == kEnd || prefix.size() - 1 == 3) {
        if (logp > best) {
          best = logp;
          best_tokens = prefix;
        }
        return;
      }
      const std::vector<double> lp = step(prefix);
      for (int t : allowed) {
        prefix.push_back(t);
        walk(prefix, logp + lp[static_cast<std::size_t>(t)]);
        prefix.pop_back();
      }
    };
    std::vector<int> root{kBegin};
    walk(root, 0.0);
    const auto beams = beam_search(step, 27, 3);
    if (beams.front().tokens == best_tokens && std::abs(beams.front().dec_logp - best) <= 1e-12) ++exhaustive;
  }

  // Perplexity against exp(lm_loss) on shared batches.
  const LmConfig lcfg = tiny_lm_config();
  double ppl_err = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 r(seed);
    const Params lp = init_lm(lcfg, r);
    const std::vector<SeqBatch> one{tiny_lm_batch(seed, lcfg.vocab_size, 4)};
    ppl_err = std::max(ppl_err, std::abs(perplexity(lp, lcfg, one) - std::exp(loss_value(lm_objective(lcfg), lp, one[0]))));
  }
  v.detail << "beam1==greedy " << same << "/100, exhaustive " << exhaustive << "/50, (1,0,0) order kept " << order_kept
           << "/100, |ppl - exp(loss)| " << ppl_err;
  v.require(same == 100, "beam width 1 == greedy");
  v.require(exhaustive == 50, "exhaustive argmax");
  v.require(order_kept == 100, "decoder-only weights keep order");
  v.require(ppl_err <= 1e-9, "perplexity == exp(lm_loss)");
  return v;
}

Utterance tagged(std::initializer_list<Lang> tags) {
  Utterance u;
  for (Lang l : tags) {
    u.tokens.push_back(l == Lang::En ? kFirstLanguageToken : kFirstLanguageToken + 16);
    u.lang_tags.push_back(l);
  }
  return u;
}

Verdict metric_units() {
  Verdict v;
  int passed = 0;
  int total = 0;
  auto expect = [&](bool ok, const std::string& what) {
    ++total;
    if (ok) ++passed;
    v.require(ok, what);
  };
  const std::vector<int> abc{4, 5, 6};
  expect(cer(abc, abc) == 0.0, "cer identical");
  expect(cer(abc, std::vector<int>{4, 9, 6}) == 1.0 / 3.0, "cer a x c");
  expect(cer(abc, std::vector<int>{}) == 1.0, "cer empty hyp");

  constexpr Lang A = Lang::En;
  constexpr Lang B = Lang::Zh;
  const std::vector<Utterance> mono{tagged({A, A, A}), tagged({B, B})};
  const std::vector<Utterance> abab{tagged({A, B, A, B})};
  const std::vector<Utterance> aaab{tagged({A, A, A, B})};
  const std::vector<Utterance> aabb{tagged({A, A, B, B})};
  expect(cmi(mono) == 0.0, "cmi mono");
  expect(cmi(abab) == 0.5, "cmi ABAB");
  expect(cmi(aaab) == 0.25, "cmi AAAB");
  expect(spf(mono) == 0.0, "spf mono");
  expect(spf(abab) == 1.0, "spf ABAB");
  expect(std::abs(spf(aabb) - 1.0 / 3.0) <= 1e-15, "spf AABB");

  LmConfig lcfg;
  lcfg.layers = 1;
  lcfg.hidden = 4;
  lcfg.vocab_size = 10;
  std::mt19937_64 rng(2);
  Params uniform = init_lm(lcfg, rng);
  uniform.at("out.w").data().setZero();
  uniform.at("out.b").data().setZero();
  const std::vector<SeqBatch> corpus{tiny_lm_batch(1, 10, 3), tiny_lm_batch(2, 10, 5)};
  expect(std::abs(perplexity(uniform, lcfg, corpus) - 10.0) <= 1e-9, "uniform perplexity");
  std::vector<SeqBatch> doubled = corpus;
  doubled.insert(doubled.end(), corpus.begin(), corpus.end());
  const Params random_lm = init_lm(lcfg, rng);
  expect(std::abs(perplexity(random_lm, lcfg, doubled) / perplexity(random_lm, lcfg, corpus) - 1.0) <= 1e-13,
         "duplication invariance");
  lcfg.hidden = 16;
  const SeqBatch memo = make_batch({{4, 5, 6, 7}}, {});
  TrainState s = TrainState::fresh(init_lm(lcfg, rng), std::mt19937_64(1));
  for (int i = 0; i < 600; ++i) joint_update(s, memo, {OptimizerKind::Adam, 0.02, 5.0}, lm_objective(lcfg));
  const double memo_ppl = perplexity(s.params, lcfg, std::vector<SeqBatch>{memo});
  expect(memo_ppl >= 1.0 && memo_ppl < 1.01, "memorized perplexity near 1");

  Hypothesis h1;
  h1.tokens = {kBegin, 4, kEnd};
  h1.dec_logp = -1.0;
  h1.lm_logp = -2.0;
  Hypothesis h2 = h1;
  h2.dec_logp = -1.2;
  h2.lm_logp = -0.5;
  const RescoreResult r = rescore({h1, h2}, nullptr, RescoreWeights{1.0, 0.1, 0.1});
  expect(r.best == 0, "rescore hand example winner");
  expect(std::abs(r.scored[0].score - (-1.2 + 0.1)) <= 1e-14, "rescore score 1");
  expect(std::abs(r.scored[1].score - (-1.25 + 0.1)) <= 1e-14, "rescore score 2");
  expect(rescore({h1, h2}, nullptr, RescoreWeights{5.0, 0.5, 0.5}).best == r.best, "weight scaling");
  expect(word_count(std::vector<int>{kBegin, kEnd}) == 0, "word count empty");
  expect(word_count(std::vector<int>{kBegin, 4, kSpace, 5, kSpace, 6, kEnd}) == 3, "word count a b c");
  expect(word_count(std::vector<int>{kBegin, kSpace, 4, kSpace, kSpace, 5, kEnd}) == 2, "doubled spaces");
  expect(relative_delta(7.0, 7.0).relative == 0.0, "delta zero");
  expect(relative_delta(50.0, 25.0).relative == 50.0, "delta 50%");
  v.detail << passed << "/" << total << " examples";
  return v;
}

// ------------------------------------------------------ seeded comparisons

struct SeedRuns {
  fs::path joint, meta, only_cs;          // transducer
  fs::path lm_joint, lm_meta, lm_only_cs;  // language model
};

double cer_of(const std::map<std::string, CorpusMetrics>& m, const std::string& corpus) {
  return m.at(corpus).cer.value();
}

double cs_val_at(const fs::path& run, std::int64_t iteration) {
  for (const CurvePoint& p : read_curves(RunPaths{run}.curves())) {
    if (p.split == "cs_val" && p.iteration == iteration) return p.loss;
  }
  throw ContractError("no cs_val point at iteration " + std::to_string(iteration) + " in " + run.string());
}

std::int64_t iterations_to(const fs::path& run, double threshold) {
  std::vector<CurvePoint> cs;
  for (const CurvePoint& p : read_curves(RunPaths{run}.curves())) {
    if (p.split == "cs_val") cs.push_back(p);
  }
  return iterations_to_threshold(cs, threshold);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  fs::path work = "acceptance_runs";
  std::string config_path;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7};
  std::vector<int> only;
  bool keep = false;
  app.add_option("--work", work, "Directory for the seeded runs");
  app.add_option("--config", config_path, "Base experiment config");
  app.add_option("--seeds", seeds, "Run seeds for criteria 4-7 and 9");
  app.add_option("--only", only, "Run only these criteria");
  app.add_flag("--keep", keep, "Reuse finished runs in --work instead of starting fresh");
  CLI11_PARSE(app, argc, argv);

  const ExperimentConfig base = config_path.empty() ? ExperimentConfig() : ExperimentConfig::load(config_path);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
  std::map<int, Verdict> verdicts;
  auto run_oracle = [&](int c, Verdict (*fn)()) {
    if (!wanted(c)) return;
    try {
      verdicts[c] = fn();
    } catch (const std::exception& e) {
      verdicts[c].require(false, std::string("threw: ") + e.what());
    }
  };
  run_oracle(1, gradient_correctness);
  run_oracle(2, meta_gradient_exactness);
  run_oracle(3, equivalence_oracles);
  run_oracle(8, metric_units);

  const bool need_runs = wanted(4) || wanted(5) || wanted(6) || wanted(7) || wanted(9);
  if (need_runs) {
    if (!keep) fs::remove_all(work);
    fs::create_directories(work);
    std::map<std::uint64_t, SeedRuns> runs;
    double comparison_seconds = 0.0;  // meta-transfer and joint transducer runs
    try {
      auto launch = [&](const std::string& label, std::uint64_t seed, const std::string& strategy, const std::string& model,
                        bool finetune) {
        ExperimentConfig c = base;
        c.set("run.id", label + "-" + std::to_string(seed));
        c.set("run.seed", std::to_string(seed));
        c.set("run.strategy", strategy);
        if (strategy != "only_cs") c.set("run.roster", "en,zh,cs");
        c.set("run.model", model);
        c.set("run.finetune", finetune ? "true" : "false");
        const fs::path dir = work / c.run_id;
        const auto t0 = std::chrono::steady_clock::now();
        run_experiment(c, dir);
        const double s = seconds_since(t0);
        std::cerr << "  " << c.run_id << " " << fixed(s, 1) << " s\n";
        return std::pair{dir, s};
      };
      for (std::uint64_t seed : seeds) {
        SeedRuns& r = runs[seed];
        if (wanted(4) || wanted(5) || wanted(6) || wanted(9)) {
          double t = 0.0;
          std::tie(r.joint, t) = launch("joint", seed, "joint", "transducer", wanted(6));
          comparison_seconds += t;
          std::tie(r.meta, t) = launch("meta", seed, "meta_transfer", "transducer", false);
          comparison_seconds += t;
          if (wanted(5)) r.only_cs = launch("only_cs", seed, "only_cs", "transducer", false).first;
        }
        if (wanted(7)) {
          r.lm_joint = launch("lm-joint", seed, "joint", "lm", true).first;
          r.lm_meta = launch("lm-meta", seed, "meta_transfer", "lm", true).first;
          r.lm_only_cs = launch("lm-only_cs", seed, "only_cs", "lm", false).first;
        }
      }
    } catch (const std::exception& e) {
      for (int c : {4, 5, 6, 7, 9}) {
        if (wanted(c)) verdicts[c].require(false, std::string("run failed: ") + e.what());
      }
      runs.clear();
    }

    if (!runs.empty() && wanted(4)) {
      Verdict& v = verdicts[4];
      const std::int64_t horizon = base.iterations;
      std::vector<double> meta_iters;
      std::vector<double> joint_iters;
      for (const auto& [seed, r] : runs) {
        const double threshold = cs_val_at(r.joint, horizon);
        const std::int64_t j = iterations_to(r.joint, threshold);
        const std::int64_t m = iterations_to(r.meta, threshold);
        joint_iters.push_back(static_cast<double>(j));
        meta_iters.push_back(m < 0 ? std::numeric_limits<double>::infinity() : static_cast<double>(m));
      }
      const double mm = median(meta_iters);
      const double mj = median(joint_iters);
      v.detail << "iterations to joint's cs_val at " << horizon << ": meta " << list(meta_iters, 0) << " median " << mm
               << ", joint " << list(joint_iters, 0) << " median " << mj << "; meta+joint runtime "
               << fixed(comparison_seconds, 1) << " s";
      v.require(mm <= 0.8 * mj, "meta median <= 0.8 x joint median");
      v.require(comparison_seconds < 600.0, "runtime < 10 min");
    }

    if (!runs.empty() && wanted(5)) {
      Verdict& v = verdicts[5];
      std::vector<double> meta, joint, only_cs;
      for (const auto& [seed, r] : runs) {
        meta.push_back(100.0 * cer_of(read_summary(r.meta).base, "cs"));
        joint.push_back(100.0 * cer_of(read_summary(r.joint).base, "cs"));
        only_cs.push_back(100.0 * cer_of(read_summary(r.only_cs).base, "cs"));
      }
      const double m = median(meta), j = median(joint), o = median(only_cs);
      v.detail << "median CS test CER %: meta " << fixed(m, 2) << " " << list(meta, 2) << ", joint " << fixed(j, 2) << " "
               << list(joint, 2) << ", only_cs " << fixed(o, 2) << " " << list(only_cs, 2);
      v.require(m <= j + 0.5, "meta <= joint (0.5 pt tie)");
      v.require(j <= o + 0.5, "joint <= only_cs (0.5 pt tie)");
    }

    if (!runs.empty() && wanted(6)) {
      Verdict& v = verdicts[6];
      for (const std::string corpus : {"en", "zh"}) {
        std::vector<double> forgetting, gap;
        for (const auto& [seed, r] : runs) {
          const RunSummary joint = read_summary(r.joint);
          const RunSummary meta = read_summary(r.meta);
          const double before = cer_of(joint.base, corpus);
          forgetting.push_back(100.0 * (cer_of(joint.finetuned, corpus) - before));
          gap.push_back(100.0 * (cer_of(meta.base, corpus) - before));
        }
        const double f = median(forgetting), g = median(gap);
        v.detail << " " << corpus << ": joint fine-tune degradation median " << fixed(f, 2) << " " << list(forgetting, 2)
                 << " vs meta gap median " << fixed(g, 2) << " " << list(gap, 2) << ";";
        v.require(f > g, corpus + " degradation exceeds meta gap");
      }
    }

    if (!runs.empty() && wanted(7)) {
      Verdict& v = verdicts[7];
      std::vector<double> meta, joint, only_cs;
      int ft_ok = 0;
      int ft_total = 0;
      for (const auto& [seed, r] : runs) {
        meta.push_back(read_summary(r.lm_meta).base.at("cs").perplexity.value());
        joint.push_back(read_summary(r.lm_joint).base.at("cs").perplexity.value());
        only_cs.push_back(read_summary(r.lm_only_cs).base.at("cs").perplexity.value());
        for (const fs::path& dir : {r.lm_joint, r.lm_meta}) {
          const auto report = nlohmann::json::parse(slurp(RunPaths{dir}.report()));
          const auto& ft = report.at("finetune");
          ++ft_total;
          if (ft.at("best_val").get<double>() <= ft.at("initial_val").get<double>()) ++ft_ok;
        }
      }
      const double m = median(meta), j = median(joint), o = median(only_cs);
      v.detail << "median CS test perplexity: meta " << fixed(m, 3) << " " << list(meta, 3) << ", joint " << fixed(j, 3)
               << " " << list(joint, 3) << ", only_cs " << fixed(o, 3) << " " << list(only_cs, 3)
               << "; fine-tuning kept best val " << ft_ok << "/" << ft_total;
      v.require(m <= j, "meta <= joint");
      v.require(j <= o, "joint <= only_cs");
      v.require(ft_ok == ft_total, "fine-tuning never raises best val");
    }

    if (!runs.empty() && wanted(9)) {
      Verdict& v = verdicts[9];
      int identical = 0;
      int total = 0;
      const SeedRuns& r = runs.begin()->second;
      for (const fs::path& dir : {r.joint, r.meta}) {
        const fs::path again = work / (dir.filename().string() + "-rerun");
        fs::remove_all(again);
        run_experiment(ExperimentConfig::load(RunPaths{dir}.config()), again);
        ++total;
        if (slurp(RunPaths{dir}.curves()) == slurp(RunPaths{again}.curves()) &&
            slurp(RunPaths{dir}.report()) == slurp(RunPaths{again}.report())) {
          ++identical;
        }
      }
      v.detail << identical << "/" << total << " reruns byte-identical (curves.csv, report.json)";
      v.require(identical == total, "byte-identical reruns");
    }
  }

  bool all = true;
  for (const auto& [c, v] : verdicts) {
    std::cout << "criterion " << c << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail.str() << "\n";
    all = all && v.pass;
  }
  return all ? 0 : 1;
}
