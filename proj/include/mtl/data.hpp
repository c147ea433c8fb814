#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtl/batch.hpp"

namespace mtl {

enum class Lang : std::uint8_t { En = 0, Zh = 1 };
enum class Role : std::uint8_t { Source, Target };
/// Which corpus a task draws from.
enum class Corpus : std::uint8_t { En, Zh, Cs };

std::string_view lang_name(Lang l);
std::string_view role_name(Role r);
std::string_view corpus_name(Corpus c);
Lang parse_lang(std::string_view s);
Role parse_role(std::string_view s);
Corpus parse_corpus(std::string_view s);

/// First-order Markov "language" over a contiguous token-id range plus the
/// shared space token. States 0..vocab_size-1 are language tokens
/// (vocab_begin + state); state vocab_size is the space.
struct LanguageSpec {
  std::string name;
  Lang tag = Lang::En;
  int vocab_begin = kFirstLanguageToken;
  int vocab_size = 0;
  RowMatrix<double> transition;  // [states, states], rows sum to 1
  VectorX<double> initial;       // first-token distribution over states
  int mean_len = 10;
  int len_jitter = 4;
  std::uint64_t seed = 0;

  int state_count() const { return vocab_size + 1; }
  int space_state() const { return vocab_size; }
  int token_of(int state) const { return state == vocab_size ? kSpace : vocab_begin + state; }
  int state_of(int token) const;
  bool owns(int token) const { return token >= vocab_begin && token < vocab_begin + vocab_size; }

  /// Throws SpecError for bad rows (zero or not summing to 1) or ranges.
  void validate() const;
};

/// Random sparse chain: every state gets `successors` token successors; token
/// states also move to the space with probability `space_prob`.
LanguageSpec make_language(std::string name, Lang tag, int vocab_begin, int vocab_size,
                           std::uint64_t seed, int successors = 4, double space_prob = 0.2);

struct Utterance {
  std::uint64_t id = 0;
  std::vector<int> tokens;  // no sentinels
  std::vector<Lang> lang_tags;
  TensorD features;  // [frames, feat_dim]; rank 0 until synthesized

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

/// `count` utterances from the spec's chain, deterministic in spec.seed.
/// Ids are first_id, first_id+1, ...
std::vector<Utterance> gen_monolingual(const LanguageSpec& spec, std::size_t count,
                                       std::uint64_t first_id = 0);

/// Intra-sentential mixing with `a` as matrix language: the first token comes
/// from `a`; before every later token the active language flips with
/// probability switch_prob. A new span starts from the active language's
/// initial distribution; otherwise its chain continues from the previous token.
std::vector<Utterance> gen_codeswitch(const LanguageSpec& a, const LanguageSpec& b,
                                      double switch_prob, std::size_t count, std::uint64_t seed,
                                      std::uint64_t first_id = 0);

struct FeatureSpec {
  int dim = 8;
  int frames_per_token = 2;
  double noise_sd = 0.5;
  std::uint64_t bank_seed = 7;

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

/// Fixed per-token embedding shared by every utterance (standard normal entries).
VectorX<double> token_embedding(const FeatureSpec& spec, int token);

/// Each token emits frames_per_token frames: its embedding plus N(0, noise_sd²) noise.
TensorD synth_features(const Utterance& utt, const FeatureSpec& spec, std::uint64_t seed);

/// Code-mixing index: mean over utterances of (N − max_i t_i)/N, with t_i the
/// token count of language i. Empty utterances are skipped and counted in
/// `skipped`.
double cmi(std::span<const Utterance> corpus, std::size_t* skipped = nullptr);

/// Switch-point fraction: adjacent pairs with differing tags over all
/// adjacent pairs, pooled. Throws ContractError when there are no pairs.
double spf(std::span<const Utterance> corpus);

struct Task {
  std::string name;
  Role role = Role::Source;
  Corpus corpus = Corpus::En;
  std::vector<Utterance> train;
  std::vector<Utterance> val;
  std::vector<Utterance> test;

  const std::vector<Utterance>& split(Split s) const;
  friend bool operator==(const Task&, const Task&) = default;
};

/// Immutable collection of tasks. Construction checks that splits are
/// pairwise disjoint, that target tasks hold only code-switched data, and that
/// no code-switched utterance appears in both source and target tasks.
class TaskSet {
 public:
  TaskSet(std::vector<Task> tasks, int vocab_size, FeatureSpec features);

  const std::vector<Task>& tasks() const { return tasks_; }
  const Task& task(std::size_t i) const { return tasks_.at(i); }
  int vocab_size() const { return vocab_size_; }
  const FeatureSpec& features() const { return features_; }
  /// Index of the named task or -1.
  int find(std::string_view name) const;
  int target_task() const;

  /// FNV-1a over ids, tokens and features of one split.
  std::uint64_t split_checksum(std::size_t task, Split s) const;

  friend bool operator==(const TaskSet&, const TaskSet&) = default;

 private:
  void validate() const;

  std::vector<Task> tasks_;
  int vocab_size_ = 0;
  FeatureSpec features_;
};

struct DataConfig {
  int lang_vocab = 18;  // tokens per language
  int mono_train = 2000;
  int mono_val = 200;
  int mono_test = 200;
  int cs_train = 1000;  // whole code-switched corpus, before the source/target partition
  int cs_val = 200;
  int cs_test = 200;
  double cs_src_fraction = 0.1;
  double switch_prob = 0.17;
  int mean_len = 10;
  int len_jitter = 4;
  int successors = 4;
  double space_prob = 0.2;
  FeatureSpec features;

  int vocab_size() const { return kFirstLanguageToken + 2 * lang_vocab; }
};

/// The two languages used by build_taskset for a given data seed.
std::pair<LanguageSpec, LanguageSpec> make_languages(const DataConfig& cfg, std::uint64_t seed);

/// Tasks "en" and "zh" (source), "cs_src" (source) and "cs_tgt" (target).
/// Every split of the code-switched corpus is partitioned between cs_src and
/// cs_tgt by cs_src_fraction.
TaskSet build_taskset(const DataConfig& cfg, std::uint64_t data_seed, std::uint64_t noise_seed);

struct TaskFilter {
  std::optional<Role> role;
  std::vector<Corpus> corpora;  // empty = any

  bool matches(const Task& t) const;
};

/// Picks a corpus uniformly among those with a matching task, then one of its
/// matching tasks with probability proportional to the split size, then
/// batch_size distinct utterances uniformly from that task's split. Throws
/// SetupError when no task matches or the pool is smaller than batch_size.
std::pair<int, SeqBatch> sample_batch(const TaskSet& tasks, const TaskFilter& filter, Split split,
                                      std::size_t batch_size, std::mt19937_64& rng);

/// Batch of the given utterances, features included when present.
SeqBatch batch_of(std::span<const Utterance> utts, Split split, int task = -1);

/// Consecutive batches covering the first `limit` utterances (0 = all) of a split.
std::vector<SeqBatch> split_batches(const TaskSet& tasks, std::size_t task, Split split,
                                    std::size_t batch_size, std::size_t limit = 0);

// Corpus files: corpus.jsonl holds a header line, one line per utterance
// (id, task, split, tokens, tags, feature reference) and a trailer line with
// the record count and an FNV-1a checksum of all preceding bytes.
// features.bin stores one checkpoint-format entry per utterance.
void dump_corpus(const TaskSet& tasks, const std::filesystem::path& dir);
TaskSet load_corpus(const std::filesystem::path& dir);

}  // namespace mtl
