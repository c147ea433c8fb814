#include "mtl/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_set>

#include "mtl/checksum.hpp"
#include "mtl/rng.hpp"

namespace mtl {

std::string_view lang_name(Lang l) { return l == Lang::En ? "en" : "zh"; }
std::string_view role_name(Role r) { return r == Role::Source ? "source" : "target"; }
std::string_view corpus_name(Corpus c) {
  switch (c) {
    case Corpus::En: return "en";
    case Corpus::Zh: return "zh";
    case Corpus::Cs: return "cs";
  }
  return "?";
}

Lang parse_lang(std::string_view s) {
  if (s == "en") return Lang::En;
  if (s == "zh") return Lang::Zh;
  throw SpecError("unknown language tag '" + std::string(s) + "'");
}

Role parse_role(std::string_view s) {
  if (s == "source") return Role::Source;
  if (s == "target") return Role::Target;
  throw SpecError("unknown task role '" + std::string(s) + "'");
}

Corpus parse_corpus(std::string_view s) {
  if (s == "en") return Corpus::En;
  if (s == "zh") return Corpus::Zh;
  if (s == "cs") return Corpus::Cs;
  throw SpecError("unknown corpus '" + std::string(s) + "'");
}

int LanguageSpec::state_of(int token) const {
  if (token == kSpace) return space_state();
  if (!owns(token)) throw SpecError(name + ": token " + std::to_string(token) + " not in language");
  return token - vocab_begin;
}

void LanguageSpec::validate() const {
  if (vocab_size < 1) throw SpecError(name + ": empty vocabulary");
  if (vocab_begin < kFirstLanguageToken) throw SpecError(name + ": vocabulary overlaps sentinels");
  const int n = state_count();
  if (transition.rows() != n || transition.cols() != n || initial.size() != n) {
    throw SpecError(name + ": transition/initial size does not match vocabulary");
  }
  for (int r = 0; r < n; ++r) {
    const double total = transition.row(r).sum();
    if ((transition.row(r).array() < 0.0).any() || std::abs(total - 1.0) > 1e-9) {
      throw SpecError(name + ": transition row " + std::to_string(r) + " is not a distribution");
    }
  }
  if ((initial.array() < 0.0).any() || std::abs(initial.sum() - 1.0) > 1e-9) {
    throw SpecError(name + ": initial distribution does not sum to 1");
  }
  if (initial[space_state()] != 0.0) throw SpecError(name + ": utterances cannot start with a space");
  if (mean_len - len_jitter < 1 || len_jitter < 0) throw SpecError(name + ": bad length controls");
}

namespace {

int sample_categorical(const Eigen::Ref<const VectorX<double>>& probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  double acc = 0.0;
  int last = 0;
  for (Index i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = static_cast<int>(i);
    if (x < acc) return last;
  }
  return last;
}

int sample_length(const LanguageSpec& spec, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(spec.mean_len - spec.len_jitter,
                                         spec.mean_len + spec.len_jitter);
  return len(rng);
}

}  // namespace

LanguageSpec make_language(std::string name, Lang tag, int vocab_begin, int vocab_size,
                           std::uint64_t seed, int successors, double space_prob) {
  if (vocab_size < 1) throw SpecError(name + ": empty vocabulary");
  if (space_prob < 0.0 || space_prob >= 1.0) throw SpecError(name + ": space_prob outside [0,1)");
  LanguageSpec spec;
  spec.name = std::move(name);
  spec.tag = tag;
  spec.vocab_begin = vocab_begin;
  spec.vocab_size = vocab_size;
  spec.seed = seed;
  const int n = spec.state_count();
  const int k = std::clamp(successors, 1, vocab_size);
  std::mt19937_64 rng = substream(seed, "chain");
  std::uniform_real_distribution<double> weight(0.5, 1.5);
  spec.transition = RowMatrix<double>::Zero(n, n);
  std::vector<int> order(static_cast<std::size_t>(vocab_size));
  for (int r = 0; r < n; ++r) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
      const double w = weight(rng);
      spec.transition(r, order[static_cast<std::size_t>(j)]) = w;
      total += w;
    }
    const double token_mass = (r == spec.space_state()) ? 1.0 : 1.0 - space_prob;
    spec.transition.row(r) *= token_mass / total;
    if (r != spec.space_state()) spec.transition(r, spec.space_state()) = space_prob;
  }
  spec.initial = VectorX<double>::Zero(n);
  for (int s = 0; s < vocab_size; ++s) spec.initial[s] = weight(rng);
  spec.initial /= spec.initial.sum();
  spec.validate();
  return spec;
}

std::vector<Utterance> gen_monolingual(const LanguageSpec& spec, std::size_t count,
                                       std::uint64_t first_id) {
  spec.validate();
  if (count == 0) throw SpecError(spec.name + ": count must be positive");
  std::mt19937_64 rng = substream(spec.seed, "utterances");
  std::vector<Utterance> out;
  out.reserve(count);
  for (std::size_t u = 0; u < count; ++u) {
    Utterance utt;
    utt.id = first_id + u;
    const int len = sample_length(spec, rng);
    int state = sample_categorical(spec.initial, rng);
    for (int i = 0; i < len; ++i) {
      if (i > 0) state = sample_categorical(spec.transition.row(state).transpose(), rng);
      utt.tokens.push_back(spec.token_of(state));
      utt.lang_tags.push_back(spec.tag);
    }
    out.push_back(std::move(utt));
  }
  return out;
}

std::vector<Utterance> gen_codeswitch(const LanguageSpec& a, const LanguageSpec& b,
                                      double switch_prob, std::size_t count, std::uint64_t seed,
                                      std::uint64_t first_id) {
  a.validate();
  b.validate();
  if (!(switch_prob > 0.0 && switch_prob < 1.0)) throw SpecError("switch_prob must lie in (0, 1)");
  if (count == 0) throw SpecError("code-switch count must be positive");
  const bool disjoint = a.vocab_begin + a.vocab_size <= b.vocab_begin ||
                        b.vocab_begin + b.vocab_size <= a.vocab_begin;
  if (!disjoint || a.tag == b.tag) throw SpecError("code-switch languages overlap");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<Utterance> out;
  out.reserve(count);
  for (std::size_t u = 0; u < count; ++u) {
    Utterance utt;
    utt.id = first_id + u;
    const int len = sample_length(a, rng);
    const LanguageSpec* active = &a;
    int state = sample_categorical(a.initial, rng);
    for (int i = 0; i < len; ++i) {
      if (i > 0) {
        if (coin(rng) < switch_prob) {
          active = active == &a ? &b : &a;
          state = sample_categorical(active->initial, rng);
        } else {
          state = sample_categorical(active->transition.row(state).transpose(), rng);
        }
      }
      utt.tokens.push_back(active->token_of(state));
      utt.lang_tags.push_back(active->tag);
    }
    out.push_back(std::move(utt));
  }
  return out;
}

VectorX<double> token_embedding(const FeatureSpec& spec, int token) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.bank_seed),
                    static_cast<std::uint32_t>(spec.bank_seed >> 32),
                    static_cast<std::uint32_t>(token)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorX<double> e(spec.dim);
  for (Index i = 0; i < e.size(); ++i) e[i] = normal(rng);
  return e;
}

TensorD synth_features(const Utterance& utt, const FeatureSpec& spec, std::uint64_t seed) {
  if (spec.frames_per_token < 1) throw SpecError("frames_per_token must be >= 1");
  if (spec.noise_sd < 0.0) throw SpecError("noise_sd must be >= 0");
  if (utt.tokens.empty()) throw SpecError("cannot synthesize features for an empty utterance");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(utt.id), static_cast<std::uint32_t>(utt.id >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index frames = static_cast<Index>(utt.tokens.size()) * spec.frames_per_token;
  TensorD out(Shape{frames, spec.dim});
  Index row = 0;
  for (int token : utt.tokens) {
    const VectorX<double> e = token_embedding(spec, token);
    for (int f = 0; f < spec.frames_per_token; ++f, ++row) {
      for (Index c = 0; c < spec.dim; ++c) out(row, c) = e[c] + spec.noise_sd * normal(rng);
    }
  }
  return out;
}

double cmi(std::span<const Utterance> corpus, std::size_t* skipped) {
  double total = 0.0;
  std::size_t used = 0;
  std::size_t empty = 0;
  for (const Utterance& u : corpus) {
    if (u.lang_tags.empty()) {
      ++empty;
      continue;
    }
    std::map<Lang, std::size_t> counts;
    for (Lang l : u.lang_tags) ++counts[l];
    std::size_t dominant = 0;
    for (const auto& [lang, c] : counts) dominant = std::max(dominant, c);
    const auto n = static_cast<double>(u.lang_tags.size());
    total += (n - static_cast<double>(dominant)) / n;
    ++used;
  }
  if (skipped) *skipped = empty;
  return used == 0 ? 0.0 : total / static_cast<double>(used);
}

double spf(std::span<const Utterance> corpus) {
  std::size_t pairs = 0;
  std::size_t switches = 0;
  for (const Utterance& u : corpus) {
    for (std::size_t i = 1; i < u.lang_tags.size(); ++i) {
      ++pairs;
      if (u.lang_tags[i] != u.lang_tags[i - 1]) ++switches;
    }
  }
  if (pairs == 0) throw ContractError("spf: corpus has no adjacent token pairs");
  return static_cast<double>(switches) / static_cast<double>(pairs);
}

const std::vector<Utterance>& Task::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  return train;
}

TaskSet::TaskSet(std::vector<Task> tasks, int vocab_size, FeatureSpec features)
    : tasks_(std::move(tasks)), vocab_size_(vocab_size), features_(features) {
  validate();
}

int TaskSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    if (tasks_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int TaskSet::target_task() const {
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    if (tasks_[i].role == Role::Target) return static_cast<int>(i);
  }
  throw SetupError("task set has no target task");
}

void TaskSet::validate() const {
  std::unordered_set<std::uint64_t> cs_source;
  std::unordered_set<std::uint64_t> cs_target;
  std::set<std::string> names;
  for (const Task& t : tasks_) {
    if (!names.insert(t.name).second) throw SetupError("task set: duplicate task " + t.name);
    if (t.role == Role::Target && t.corpus != Corpus::Cs) {
      throw SetupError("task set: target task " + t.name + " must hold code-switched data");
    }
    std::unordered_set<std::uint64_t> seen;
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
      for (const Utterance& u : t.split(s)) {
        if (!seen.insert(u.id).second) {
          throw SetupError("task set: utterance " + std::to_string(u.id) + " repeated within " + t.name);
        }
        if (u.tokens.size() != u.lang_tags.size()) {
          throw SetupError("task set: tag count mismatch in utterance " + std::to_string(u.id));
        }
        for (int tok : u.tokens) {
          if (tok < kSpace || tok >= vocab_size_) {
            throw SetupError("task set: token outside vocabulary in utterance " + std::to_string(u.id));
          }
        }
        if (u.features.rank() == 2 &&
            u.features.rows() != static_cast<Index>(u.tokens.size()) * features_.frames_per_token) {
          throw SetupError("task set: frame count mismatch in utterance " + std::to_string(u.id));
        }
        if (t.corpus == Corpus::Cs) (t.role == Role::Source ? cs_source : cs_target).insert(u.id);
      }
    }
  }
  for (std::uint64_t id : cs_target) {
    if (cs_source.contains(id)) {
      throw SetupError("task set: code-switched utterance " + std::to_string(id) +
                       " shared by source and target pools");
    }
  }
}

std::uint64_t TaskSet::split_checksum(std::size_t task, Split s) const {
  Fnv1a h;
  for (const Utterance& u : tasks_.at(task).split(s)) {
    h.update(&u.id, sizeof(u.id));
    h.update(u.tokens.data(), u.tokens.size() * sizeof(int));
    h.update(u.features.data().data(), static_cast<std::size_t>(u.features.size()) * sizeof(double));
  }
  return h.digest();
}

std::pair<LanguageSpec, LanguageSpec> make_languages(const DataConfig& cfg, std::uint64_t seed) {
  LanguageSpec en = make_language("en", Lang::En, kFirstLanguageToken, cfg.lang_vocab,
                                  substream_seed(seed, "lang.en"), cfg.successors, cfg.space_prob);
  LanguageSpec zh = make_language("zh", Lang::Zh, kFirstLanguageToken + cfg.lang_vocab, cfg.lang_vocab,
                                  substream_seed(seed, "lang.zh"), cfg.successors, cfg.space_prob);
  for (LanguageSpec* s : {&en, &zh}) {
    s->mean_len = cfg.mean_len;
    s->len_jitter = cfg.len_jitter;
    s->validate();
  }
  return {std::move(en), std::move(zh)};
}

namespace {

void take(std::vector<Utterance>& from, std::size_t& cursor, std::size_t n, std::vector<Utterance>& to) {
  for (std::size_t i = 0; i < n; ++i) to.push_back(std::move(from[cursor++]));
}

}  // namespace

TaskSet build_taskset(const DataConfig& cfg, std::uint64_t data_seed, std::uint64_t noise_seed) {
  if (cfg.mono_train < 1 || cfg.mono_val < 1 || cfg.mono_test < 1 || cfg.cs_train < 2 ||
      cfg.cs_val < 2 || cfg.cs_test < 2) {
    throw SpecError("data: every split needs utterances");
  }
  if (!(cfg.cs_src_fraction > 0.0 && cfg.cs_src_fraction < 1.0)) {
    throw SpecError("data: cs_src_fraction must lie in (0, 1)");
  }
  auto [en, zh] = make_languages(cfg, data_seed);
  const auto mono_total = static_cast<std::size_t>(cfg.mono_train + cfg.mono_val + cfg.mono_test);
  const auto cs_total = static_cast<std::size_t>(cfg.cs_train + cfg.cs_val + cfg.cs_test);

  std::vector<Utterance> en_utts = gen_monolingual(en, mono_total, 0);
  std::vector<Utterance> zh_utts = gen_monolingual(zh, mono_total, mono_total);
  std::vector<Utterance> cs_utts = gen_codeswitch(en, zh, cfg.switch_prob, cs_total,
                                                  substream_seed(data_seed, "cs"), 2 * mono_total);
  const std::uint64_t feature_seed = substream_seed(noise_seed, "features");
  for (auto* pool : {&en_utts, &zh_utts, &cs_utts}) {
    for (Utterance& u : *pool) u.features = synth_features(u, cfg.features, feature_seed);
  }

  auto mono_task = [&](std::string name, Corpus corpus, std::vector<Utterance>& utts) {
    Task t;
    t.name = std::move(name);
    t.role = Role::Source;
    t.corpus = corpus;
    std::size_t cursor = 0;
    take(utts, cursor, static_cast<std::size_t>(cfg.mono_train), t.train);
    take(utts, cursor, static_cast<std::size_t>(cfg.mono_val), t.val);
    take(utts, cursor, static_cast<std::size_t>(cfg.mono_test), t.test);
    return t;
  };

  Task cs_src{"cs_src", Role::Source, Corpus::Cs, {}, {}, {}};
  Task cs_tgt{"cs_tgt", Role::Target, Corpus::Cs, {}, {}, {}};
  std::size_t cursor = 0;
  for (auto [n, split] : {std::pair{cfg.cs_train, Split::Train}, std::pair{cfg.cs_val, Split::Val},
                          std::pair{cfg.cs_test, Split::Test}}) {
    const auto total = static_cast<std::size_t>(n);
    const auto src = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(cfg.cs_src_fraction * static_cast<double>(total))), 1,
        total - 1);
    auto& src_split = split == Split::Train ? cs_src.train : split == Split::Val ? cs_src.val : cs_src.test;
    auto& tgt_split = split == Split::Train ? cs_tgt.train : split == Split::Val ? cs_tgt.val : cs_tgt.test;
    take(cs_utts, cursor, src, src_split);
    take(cs_utts, cursor, total - src, tgt_split);
  }

  std::vector<Task> tasks;
  tasks.push_back(mono_task("en", Corpus::En, en_utts));
  tasks.push_back(mono_task("zh", Corpus::Zh, zh_utts));
  tasks.push_back(std::move(cs_src));
  tasks.push_back(std::move(cs_tgt));
  return TaskSet(std::move(tasks), cfg.vocab_size(), cfg.features);
}

bool TaskFilter::matches(const Task& t) const {
  if (role && t.role != *role) return false;
  return corpora.empty() || std::find(corpora.begin(), corpora.end(), t.corpus) != corpora.end();
}

SeqBatch batch_of(std::span<const Utterance> utts, Split split, int task) {
  std::vector<std::vector<int>> seqs;
  std::vector<TensorD> feats;
  std::vector<std::uint64_t> ids;
  const bool with_features = !utts.empty() && utts[0].features.rank() == 2;
  for (const Utterance& u : utts) {
    seqs.push_back(u.tokens);
    if (with_features) feats.push_back(u.features);
    ids.push_back(u.id);
  }
  return make_batch(seqs, feats, split, task, std::move(ids));
}

std::pair<int, SeqBatch> sample_batch(const TaskSet& tasks, const TaskFilter& filter, Split split,
                                      std::size_t batch_size, std::mt19937_64& rng) {
  if (batch_size == 0) throw SetupError("sample_batch: batch_size must be positive");
  // Uniform over corpora, then over the matching utterances of the chosen
  // corpus, so partitioning a corpus into several tasks does not reweight it.
  std::vector<Corpus> corpora;
  for (const Task& t : tasks.tasks()) {
    if (filter.matches(t) && std::find(corpora.begin(), corpora.end(), t.corpus) == corpora.end()) {
      corpora.push_back(t.corpus);
    }
  }
  if (corpora.empty()) throw SetupError("sample_batch: no task matches the filter");
  std::uniform_int_distribution<std::size_t> pick_corpus(0, corpora.size() - 1);
  const Corpus corpus = corpora[pick_corpus(rng)];
  std::vector<int> members;
  std::size_t total = 0;
  for (std::size_t i = 0; i < tasks.tasks().size(); ++i) {
    const Task& t = tasks.task(i);
    if (filter.matches(t) && t.corpus == corpus) {
      members.push_back(static_cast<int>(i));
      total += t.split(split).size();
    }
  }
  int task = members.front();
  if (members.size() > 1 && total > 0) {
    std::uniform_int_distribution<std::size_t> pick_item(0, total - 1);
    std::size_t k = pick_item(rng);
    for (int m : members) {
      const std::size_t n = tasks.task(static_cast<std::size_t>(m)).split(split).size();
      if (k < n) {
        task = m;
        break;
      }
      k -= n;
    }
  }
  const auto& pool = tasks.task(static_cast<std::size_t>(task)).split(split);
  if (batch_size > pool.size()) {
    throw SetupError("sample_batch: pool exhausted (" + std::to_string(pool.size()) + " < " +
                     std::to_string(batch_size) + ") in task " + tasks.task(static_cast<std::size_t>(task)).name);
  }
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<std::size_t> chosen;
  std::unordered_set<std::size_t> used;
  while (chosen.size() < batch_size) {
    const std::size_t i = pick(rng);
    if (used.insert(i).second) chosen.push_back(i);
  }
  std::vector<Utterance> utts;
  utts.reserve(batch_size);
  for (std::size_t i : chosen) utts.push_back(pool[i]);
  return {task, batch_of(utts, split, task)};
}

std::vector<SeqBatch> split_batches(const TaskSet& tasks, std::size_t task, Split split,
                                    std::size_t batch_size, std::size_t limit) {
  const auto& pool = tasks.task(task).split(split);
  const std::size_t n = limit == 0 ? pool.size() : std::min(limit, pool.size());
  std::vector<SeqBatch> out;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    out.push_back(batch_of(std::span<const Utterance>(pool).subspan(begin, end - begin), split,
                           static_cast<int>(task)));
  }
  return out;
}

}  // namespace mtl
