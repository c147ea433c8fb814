#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "mtl/harness.hpp"
#include "mtl/metrics.hpp"
#include "mtl/rng.hpp"

namespace mtl {

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::OnlyCs: return "only_cs";
    case Strategy::Joint: return "joint";
    case Strategy::MetaTransfer: return "meta_transfer";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) {
  if (s == "only_cs") return Strategy::OnlyCs;
  if (s == "joint") return Strategy::Joint;
  if (s == "meta_transfer") return Strategy::MetaTransfer;
  throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

std::string_view model_kind_name(ModelKind k) { return k == ModelKind::Transducer ? "transducer" : "lm"; }

ModelKind parse_model_kind(std::string_view s) {
  if (s == "transducer") return ModelKind::Transducer;
  if (s == "lm") return ModelKind::Lm;
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_num(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": cannot parse '" + v + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::string corpora_str(const std::vector<Corpus>& cs) {
  std::string out;
  for (Corpus c : cs) {
    if (!out.empty()) out += ",";
    out += corpus_name(c);
  }
  return out;
}

std::vector<Corpus> parse_corpora(const std::string& key, const std::string& v) {
  std::vector<Corpus> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (item.empty()) continue;
    Corpus c;
    try {
      c = parse_corpus(item);
    } catch (const SpecError&) {
      throw ConfigError(key + ": unknown corpus '" + item + "'");
    }
    if (std::find(out.begin(), out.end(), c) != out.end()) throw ConfigError(key + ": duplicate corpus '" + item + "'");
    out.push_back(c);
  }
  // Canonical order keeps snapshots stable however the list was written.
  std::sort(out.begin(), out.end());
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
Field num(std::string key, T ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          },
          [member, key](ExperimentConfig& c, const std::string& v) { c.*member = parse_num<T>(key, v); }};
}

template <typename T>
Field num_at(std::string key, std::function<T&(ExperimentConfig&)> ref) {
  return {key, [ref](const ExperimentConfig& c) {
            T v = ref(const_cast<ExperimentConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(v);
            } else {
              return std::to_string(v);
            }
          },
          [ref, key](ExperimentConfig& c, const std::string& v) { ref(c) = parse_num<T>(key, v); }};
}

Field flag(std::string key, bool ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return bool_str(c.*member); },
          [member, key](ExperimentConfig& c, const std::string& v) { c.*member = parse_bool(key, v); }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> all = {
      {"run.id", [](const C& c) { return c.run_id; },
       [](C& c, const std::string& v) { c.run_id = v; }},
      {"run.strategy", [](const C& c) { return std::string(strategy_name(c.strategy)); },
       [](C& c, const std::string& v) {
         c.strategy = parse_strategy(v);
         if (c.strategy == Strategy::OnlyCs) c.roster = {Corpus::Cs};
       }},
      {"run.roster", [](const C& c) { return corpora_str(c.roster); },
       [](C& c, const std::string& v) { c.roster = parse_corpora("run.roster", v); }},
      {"run.model", [](const C& c) { return std::string(model_kind_name(c.model)); },
       [](C& c, const std::string& v) { c.model = parse_model_kind(v); }},
      flag("run.finetune", &C::finetune),
      flag("run.rescore", &C::rescore),
      num("run.seed", &C::seed),
      num("run.iterations", &C::iterations),
      num("run.eval_every", &C::eval_every),
      num("run.eval_limit", &C::eval_limit),
      num("run.test_limit", &C::test_limit),
      {"run.test_corpora", [](const C& c) { return corpora_str(c.test_corpora); },
       [](C& c, const std::string& v) { c.test_corpora = parse_corpora("run.test_corpora", v); }},
      {"run.corpus_dir", [](const C& c) { return c.corpus_dir; },
       [](C& c, const std::string& v) { c.corpus_dir = v; }},
      flag("log.wall_clock", &C::wall_clock),

      num("train.batch_size", &C::batch_size),
      {"train.optimizer", [](const C& c) { return std::string(optimizer_name(c.optim.kind)); },
       [](C& c, const std::string& v) { c.optim.kind = parse_optimizer(v); }},
      num_at<double>("train.lr", [](C& c) -> double& { return c.optim.lr; }),
      num_at<double>("train.clip_norm", [](C& c) -> double& { return c.optim.clip_norm; }),

      num_at<double>("meta.alpha", [](C& c) -> double& { return c.meta.alpha; }),
      num_at<double>("meta.beta", [](C& c) -> double& { return c.meta.beta; }),
      num_at<std::size_t>("meta.tasks_per_iter", [](C& c) -> std::size_t& { return c.meta.tasks_per_iter; }),
      {"meta.mode", [](const C& c) { return std::string(mode_name(c.meta.mode)); },
       [](C& c, const std::string& v) { c.meta.mode = parse_mode(v); }},
      num_at<int>("meta.inner_steps", [](C& c) -> int& { return c.meta.inner_steps; }),
      {"meta.optimizer", [](const C& c) { return std::string(optimizer_name(c.meta.outer)); },
       [](C& c, const std::string& v) { c.meta.outer = parse_optimizer(v); }},
      num_at<double>("meta.clip_norm", [](C& c) -> double& { return c.meta.clip_norm; }),
      num_at<std::size_t>("meta.val_batch_size", [](C& c) -> std::size_t& { return c.meta.val_batch_size; }),
      {"meta.val_split", [](const C& c) { return std::string(split_name(c.meta.val_split)); },
       [](C& c, const std::string& v) {
         if (v == "train") {
           c.meta.val_split = Split::Train;
         } else if (v == "val") {
           c.meta.val_split = Split::Val;
         } else {
           throw ConfigError("meta.val_split: expected train or val, got '" + v + "'");
         }
       }},

      num_at<int>("data.lang_vocab", [](C& c) -> int& { return c.data.lang_vocab; }),
      num_at<int>("data.mono_train", [](C& c) -> int& { return c.data.mono_train; }),
      num_at<int>("data.mono_val", [](C& c) -> int& { return c.data.mono_val; }),
      num_at<int>("data.mono_test", [](C& c) -> int& { return c.data.mono_test; }),
      num_at<int>("data.cs_train", [](C& c) -> int& { return c.data.cs_train; }),
      num_at<int>("data.cs_val", [](C& c) -> int& { return c.data.cs_val; }),
      num_at<int>("data.cs_test", [](C& c) -> int& { return c.data.cs_test; }),
      num_at<double>("data.cs_src_fraction", [](C& c) -> double& { return c.data.cs_src_fraction; }),
      num_at<double>("data.switch_prob", [](C& c) -> double& { return c.data.switch_prob; }),
      num_at<int>("data.mean_len", [](C& c) -> int& { return c.data.mean_len; }),
      num_at<int>("data.len_jitter", [](C& c) -> int& { return c.data.len_jitter; }),
      num_at<int>("data.successors", [](C& c) -> int& { return c.data.successors; }),
      num_at<double>("data.space_prob", [](C& c) -> double& { return c.data.space_prob; }),
      num_at<int>("data.feat_dim", [](C& c) -> int& { return c.data.features.dim; }),
      num_at<int>("data.frames_per_token", [](C& c) -> int& { return c.data.features.frames_per_token; }),
      num_at<double>("data.noise_sd", [](C& c) -> double& { return c.data.features.noise_sd; }),
      num_at<std::uint64_t>("data.bank_seed", [](C& c) -> std::uint64_t& { return c.data.features.bank_seed; }),

      num_at<int>("model.enc_layers", [](C& c) -> int& { return c.transducer.enc_layers; }),
      num_at<int>("model.dec_layers", [](C& c) -> int& { return c.transducer.dec_layers; }),
      num_at<int>("model.width", [](C& c) -> int& { return c.transducer.model_width; }),
      num_at<int>("model.key_width", [](C& c) -> int& { return c.transducer.key_width; }),
      num_at<int>("model.value_width", [](C& c) -> int& { return c.transducer.value_width; }),
      num_at<int>("model.heads", [](C& c) -> int& { return c.transducer.head_count; }),
      num_at<int>("model.ffn_width", [](C& c) -> int& { return c.transducer.ffn_width; }),
      num_at<int>("model.conv_kernel", [](C& c) -> int& { return c.transducer.conv_kernel; }),
      num_at<int>("model.conv_stride", [](C& c) -> int& { return c.transducer.conv_stride; }),
      num_at<int>("model.max_len", [](C& c) -> int& { return c.transducer.max_len; }),
      num_at<int>("lm.layers", [](C& c) -> int& { return c.lm.layers; }),
      num_at<int>("lm.hidden", [](C& c) -> int& { return c.lm.hidden; }),

      num("finetune.lr", &C::ft_lr),
      num("finetune.patience", &C::ft_patience),
      num("finetune.max_epochs", &C::ft_max_epochs),
      num("finetune.lm_max_epochs", &C::lm_ft_max_epochs),

      num("decode.beam_width", &C::beam_width),
      num("decode.max_len", &C::decode_max_len),
      num_at<double>("decode.w_dec", [](C& c) -> double& { return c.weights.w_dec; }),
      num_at<double>("decode.w_lm", [](C& c) -> double& { return c.weights.w_lm; }),
      num_at<double>("decode.w_wc", [](C& c) -> double& { return c.weights.w_wc; }),
      num("rescore.lm_iterations", &C::rescore_lm_iterations),
      num("rescore.lm_lr", &C::rescore_lm_lr),
  };
  return all;
}

const Field& field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  // Decoding may run to 300 tokens; the decoder must accept that many inputs.
  transducer.max_len = decode_max_len + 2;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, value); }

std::string ExperimentConfig::get(const std::string& key) const { return field(key).get(*this); }

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.key);
  return out;
}

std::string ExperimentConfig::snapshot() const {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  std::vector<std::string> problems;
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(line_no) + ": expected 'key = value'");
      continue;
    }
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      problems.push_back(e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ExperimentConfig::validate() const {
  std::vector<std::string> problems;
  auto need = [&](bool ok, const std::string& key, const std::string& what) {
    if (!ok) problems.push_back(key + ": " + what);
  };
  auto has = [](const std::vector<Corpus>& cs, Corpus c) { return std::find(cs.begin(), cs.end(), c) != cs.end(); };

  need(!run_id.empty() && run_id.find_first_of(",\n/") == std::string::npos, "run.id",
       "must be non-empty without commas, slashes or newlines");
  need(!roster.empty(), "run.roster", "must name at least one corpus");
  need(strategy != Strategy::OnlyCs || roster == std::vector<Corpus>{Corpus::Cs}, "run.roster",
       "only_cs trains on cs alone");
  need(strategy != Strategy::MetaTransfer || has(roster, Corpus::Cs), "run.roster",
       "meta_transfer needs cs (its validation batches come from the code-switched target)");
  need(!test_corpora.empty(), "run.test_corpora", "must name at least one corpus");
  need(iterations >= 0, "run.iterations", "must be non-negative");
  need(eval_every >= 1, "run.eval_every", "must be at least 1");
  need(batch_size >= 1, "train.batch_size", "must be at least 1");
  need(optim.lr > 0.0, "train.lr", "must be positive");
  need(optim.clip_norm >= 0.0, "train.clip_norm", "must be non-negative");
  need(ft_lr > 0.0, "finetune.lr", "must be positive");
  need(ft_patience >= 0, "finetune.patience", "must be non-negative");
  need(ft_max_epochs >= 1, "finetune.max_epochs", "must be at least 1");
  need(lm_ft_max_epochs >= 1, "finetune.lm_max_epochs", "must be at least 1");
  need(beam_width >= 1, "decode.beam_width", "must be at least 1");
  need(decode_max_len >= 1, "decode.max_len", "must be at least 1");
  need(model != ModelKind::Transducer || decode_max_len + 1 < transducer.max_len, "decode.max_len",
       "must be below model.max_len - 1");
  need(!rescore || model == ModelKind::Transducer, "run.rescore", "rescoring applies to transducer runs");
  need(rescore_lm_iterations >= 0, "rescore.lm_iterations", "must be non-negative");
  need(rescore_lm_lr > 0.0, "rescore.lm_lr", "must be positive");

  auto check = [&](const std::string& prefix, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const Error& e) {
      problems.push_back(prefix + ": " + e.what());
    }
  };
  if (strategy == Strategy::MetaTransfer) check("meta.*", [&] { resolved_meta().validate(); });
  check("model.*", [&] { resolved_transducer().validate(); });
  check("lm.*", [&] { resolved_lm().validate(); });
  check("weights", [&] { weights.validate(); });
  if (corpus_dir.empty()) {
    check("data.*", [&] {
      if (data.mono_train < 1 || data.mono_val < 1 || data.mono_test < 1 || data.cs_train < 2 ||
          data.cs_val < 2 || data.cs_test < 2) {
        throw SpecError("every split needs utterances");
      }
      if (!(data.cs_src_fraction > 0.0 && data.cs_src_fraction < 1.0)) {
        throw SpecError("cs_src_fraction must lie in (0, 1)");
      }
      make_languages(data, 0);
    });
  }

  if (!problems.empty()) {
    std::string msg = "invalid config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
}

TaskFilter ExperimentConfig::train_filter() const {
  TaskFilter f;
  f.corpora = strategy == Strategy::OnlyCs ? std::vector<Corpus>{Corpus::Cs} : roster;
  return f;
}

MetaHyper ExperimentConfig::resolved_meta() const {
  MetaHyper h = meta;
  h.batch_size = batch_size;
  h.train_tasks = train_filter();
  return h;
}

TransducerConfig ExperimentConfig::resolved_transducer() const {
  TransducerConfig t = transducer;
  t.vocab_size = data.vocab_size();
  t.feat_dim = data.features.dim;
  return t;
}

LmConfig ExperimentConfig::resolved_lm() const {
  LmConfig l = lm;
  l.vocab_size = data.vocab_size();
  return l;
}

std::uint64_t run_substream_seed(const ExperimentConfig& cfg, std::string_view name) {
  return substream_seed(cfg.seed, name);
}

}  // namespace mtl
