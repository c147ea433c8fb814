#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mtl/data.hpp"
#include "support.hpp"

using namespace mtl;
using namespace mtl::testing;

namespace {

LanguageSpec lang_a() { return make_language("en", Lang::En, kFirstLanguageToken, 12, 101); }
LanguageSpec lang_b() { return make_language("zh", Lang::Zh, kFirstLanguageToken + 12, 12, 202); }

Utterance tagged(std::initializer_list<Lang> tags) {
  Utterance u;
  for (Lang l : tags) {
    u.tokens.push_back(l == Lang::En ? 4 : 20);
    u.lang_tags.push_back(l);
  }
  return u;
}

constexpr Lang A = Lang::En;
constexpr Lang B = Lang::Zh;

DataConfig small_data() {
  DataConfig d;
  d.lang_vocab = 8;
  d.mono_train = 60;
  d.mono_val = 10;
  d.mono_test = 10;
  d.cs_train = 40;
  d.cs_val = 10;
  d.cs_test = 10;
  d.cs_src_fraction = 0.5;
  d.features.dim = 4;
  return d;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mtl_tasks_data_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("language specs are proper Markov chains over disjoint ranges") {
  const LanguageSpec a = lang_a();
  const LanguageSpec b = lang_b();
  for (Index r = 0; r < a.transition.rows(); ++r) CHECK(std::abs(a.transition.row(r).sum() - 1.0) <= 1e-9);
  for (int t = a.vocab_begin; t < a.vocab_begin + a.vocab_size; ++t) CHECK_FALSE(b.owns(t));
}

TEST_CASE("monolingual generation is deterministic and stays in vocabulary") {
  const LanguageSpec a = lang_a();
  const auto x = gen_monolingual(a, 10);
  CHECK(x == gen_monolingual(a, 10));
  for (const Utterance& u : gen_monolingual(a, 200)) {
    CHECK(u.tokens.size() == u.lang_tags.size());
    for (int t : u.tokens) CHECK((a.owns(t) || t == kSpace));
    for (Lang l : u.lang_tags) CHECK(l == a.tag);
  }
}

TEST_CASE("monolingual bigrams follow the transition matrix") {
  const LanguageSpec a = lang_a();
  const int n = a.state_count();
  RowMatrix<double> counts = RowMatrix<double>::Zero(n, n);
  double total = 0.0;
  for (const Utterance& u : gen_monolingual(a, 10000)) {
    for (std::size_t i = 1; i < u.tokens.size(); ++i) {
      counts(a.state_of(u.tokens[i - 1]), a.state_of(u.tokens[i])) += 1.0;
      total += 1.0;
    }
  }
  // Total variation between the empirical joint bigram law and rows of the
  // transition matrix weighted by the empirical source frequencies.
  double tv = 0.0;
  for (int i = 0; i < n; ++i) {
    const double row = counts.row(i).sum();
    for (int j = 0; j < n; ++j) tv += std::abs(counts(i, j) - row * a.transition(i, j));
  }
  tv /= 2.0 * total;
  CHECK(tv <= 0.02);
}

TEST_CASE("degenerate chains are spec errors") {
  LanguageSpec a = lang_a();
  a.transition.row(2).setZero();
  CHECK_THROWS_AS(gen_monolingual(a, 5), SpecError);
  CHECK_THROWS_AS(gen_monolingual(lang_a(), 0), SpecError);
}

TEST_CASE("code-switching: matrix language first, Bernoulli switches, and errors") {
  const LanguageSpec a = lang_a();
  const LanguageSpec b = lang_b();
  const auto near_mono = gen_codeswitch(a, b, 1e-9, 100, 3);
  std::size_t pure = 0;
  for (const Utterance& u : near_mono) {
    pure += std::all_of(u.lang_tags.begin(), u.lang_tags.end(), [](Lang l) { return l == A; });
  }
  CHECK(pure >= 99);

  const auto mixed = gen_codeswitch(a, b, 0.17, 10000, 4);
  for (const Utterance& u : mixed) CHECK(u.lang_tags.front() == A);
  CHECK(std::abs(spf(mixed) - 0.17) <= 0.02);

  LanguageSpec overlap = lang_b();
  overlap.vocab_begin = a.vocab_begin + 3;
  CHECK_THROWS_AS(gen_codeswitch(a, overlap, 0.2, 10, 1), SpecError);
  CHECK_THROWS_AS(gen_codeswitch(a, b, 0.0, 10, 1), SpecError);
  CHECK_THROWS_AS(gen_codeswitch(a, b, 1.0, 10, 1), SpecError);
}

TEST_CASE("swapping the languages mirrors switch statistics") {
  const auto ab = gen_codeswitch(lang_a(), lang_b(), 0.17, 10000, 5);
  const auto ba = gen_codeswitch(lang_b(), lang_a(), 0.17, 10000, 5);
  CHECK(std::abs(spf(ab) - spf(ba)) <= 0.02);
  for (const Utterance& u : ba) CHECK(u.lang_tags.front() == B);
}

TEST_CASE("synthesized features: noiseless frames repeat, seeds reproduce, noise averages out") {
  FeatureSpec spec;
  spec.dim = 5;
  spec.frames_per_token = 3;
  spec.noise_sd = 0.0;
  Utterance u = tagged({A, B, A});
  u.tokens = {4, 21, 7};
  const TensorD clean = synth_features(u, spec, 1);
  CHECK(clean.rows() == 9);
  for (Index tok = 0; tok < 3; ++tok) {
    for (Index f = 1; f < 3; ++f) CHECK(clean.matrix().row(tok * 3 + f) == clean.matrix().row(tok * 3));
  }

  spec.noise_sd = 0.7;
  CHECK(synth_features(u, spec, 9) == synth_features(u, spec, 9));

  spec.frames_per_token = 1000;
  Utterance one;
  one.tokens = {11};
  one.lang_tags = {A};
  const TensorD noisy = synth_features(one, spec, 2);
  const VectorX<double> mean = noisy.matrix().colwise().mean().transpose();
  const VectorX<double> e = token_embedding(spec, 11);
  for (Index d = 0; d < spec.dim; ++d) CHECK(std::abs(mean[d] - e[d]) <= 3.0 * spec.noise_sd / std::sqrt(1000.0));
}

TEST_CASE("cmi and spf hand-computed examples") {
  const std::vector<Utterance> mono{tagged({A, A, A}), tagged({B, B})};
  CHECK(cmi(mono) == 0.0);
  CHECK(spf(mono) == 0.0);
  const std::vector<Utterance> abab{tagged({A, B, A, B})};
  CHECK(cmi(abab) == 0.5);
  CHECK(spf(abab) == 1.0);
  const std::vector<Utterance> aaab{tagged({A, A, A, B})};
  CHECK(cmi(aaab) == 0.25);
  const std::vector<Utterance> aabb{tagged({A, A, B, B})};
  CHECK(spf(aabb) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("cmi skips empty utterances and spf needs pairs") {
  const std::vector<Utterance> with_empty{tagged({A, B, A, B}), Utterance{}, tagged({A, A, A, B})};
  std::size_t skipped = 0;
  CHECK(cmi(with_empty, &skipped) == doctest::Approx(0.375));
  CHECK(skipped == 1);
  const std::vector<Utterance> singles{tagged({A}), tagged({B})};
  CHECK_THROWS_AS(spf(singles), ContractError);
}

TEST_CASE("cmi and spf ignore utterance order") {
  std::vector<Utterance> corpus = gen_codeswitch(lang_a(), lang_b(), 0.3, 500, 6);
  const double c = cmi(corpus);
  const double s = spf(corpus);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5; ++i) {
    std::shuffle(corpus.begin(), corpus.end(), rng);
    CHECK(cmi(corpus) == doctest::Approx(c).epsilon(1e-14));
    CHECK(spf(corpus) == s);
  }
}

TEST_CASE("task sets keep splits and code-switched pools disjoint") {
  const TaskSet tasks = build_taskset(small_data(), 1, 2);
  std::set<std::uint64_t> src_cs;
  std::set<std::uint64_t> tgt_cs;
  for (const Task& t : tasks.tasks()) {
    std::set<std::uint64_t> seen;
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
      for (const Utterance& u : t.split(s)) {
        CHECK(seen.insert(u.id).second);
        CHECK(u.features.rows() == static_cast<Index>(u.tokens.size()) * tasks.features().frames_per_token);
        if (t.corpus == Corpus::Cs) (t.role == Role::Source ? src_cs : tgt_cs).insert(u.id);
      }
    }
    if (t.role == Role::Target) CHECK(t.corpus == Corpus::Cs);
  }
  CHECK_FALSE(src_cs.empty());
  CHECK_FALSE(tgt_cs.empty());
  for (auto id : src_cs) CHECK_FALSE(tgt_cs.contains(id));
}

TEST_CASE("task set construction rejects shared code-switched utterances and monolingual targets") {
  const TaskSet good = build_taskset(small_data(), 1, 2);
  std::vector<Task> tasks = good.tasks();
  tasks[2].train.push_back(tasks[3].train.front());
  CHECK_THROWS_AS(TaskSet(tasks, good.vocab_size(), good.features()), SetupError);
  tasks = good.tasks();
  tasks[0].role = Role::Target;
  CHECK_THROWS_AS(TaskSet(tasks, good.vocab_size(), good.features()), SetupError);
}

TEST_CASE("sample_batch: target draws are CS, sources are near uniform, seeds reproduce") {
  const TaskSet tasks = build_taskset(small_data(), 3, 4);
  TaskFilter target;
  target.role = Role::Target;
  TaskFilter source;
  source.role = Role::Source;
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto [task, batch] = sample_batch(tasks, target, Split::Val, 4, rng);
    CHECK(tasks.task(static_cast<std::size_t>(task)).corpus == Corpus::Cs);
    CHECK(batch.split == Split::Val);
    std::set<std::uint64_t> ids(batch.utterance_ids.begin(), batch.utterance_ids.end());
    CHECK(ids.size() == 4);
  }
  std::map<int, int> freq;
  for (int i = 0; i < 10000; ++i) ++freq[sample_batch(tasks, source, Split::Train, 2, rng).first];
  CHECK(freq.size() == 3);
  for (const auto& [task, n] : freq) CHECK(std::abs(n / 10000.0 - 1.0 / 3.0) <= 0.02);

  std::mt19937_64 r1(11);
  std::mt19937_64 r2(11);
  for (int i = 0; i < 20; ++i) {
    const auto x = sample_batch(tasks, source, Split::Train, 3, r1);
    const auto y = sample_batch(tasks, source, Split::Train, 3, r2);
    CHECK(x.first == y.first);
    CHECK(x.second.utterance_ids == y.second.utterance_ids);
  }
  CHECK_THROWS_AS(sample_batch(tasks, target, Split::Val, 1000, rng), SetupError);
  TaskFilter nothing;
  nothing.role = Role::Target;
  nothing.corpora = {Corpus::En};
  CHECK_THROWS_AS(sample_batch(tasks, nothing, Split::Train, 1, rng), SetupError);
}

TEST_CASE("test batches cannot reach training code") {
  const TaskSet tasks = build_taskset(small_data(), 1, 2);
  const SeqBatch test = batch_of(tasks.task(0).test, Split::Test, 0);
  CHECK_THROWS_AS(require_trainable(test), ContractError);
}

TEST_CASE("corpus dump and load round-trip") {
  const TaskSet tasks = build_taskset(small_data(), 5, 6);
  const auto dir = scratch("roundtrip");
  dump_corpus(tasks, dir);
  const TaskSet back = load_corpus(dir);
  CHECK(back == tasks);
  for (std::size_t i = 0; i < tasks.tasks().size(); ++i) {
    CHECK(cmi(back.task(i).train) == cmi(tasks.task(i).train));
    CHECK(spf(back.task(i).train) == spf(tasks.task(i).train));
    CHECK(back.split_checksum(i, Split::Test) == tasks.split_checksum(i, Split::Test));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("truncated or altered corpus files are rejected") {
  const TaskSet tasks = build_taskset(small_data(), 5, 6);
  for (const std::string file : {"corpus.jsonl", "features.bin"}) {
    const auto dir = scratch("truncated_" + file);
    dump_corpus(tasks, dir);
    const auto path = dir / file;
    std::filesystem::resize_file(path, std::filesystem::file_size(path) * 2 / 3);
    CHECK_THROWS_AS(load_corpus(dir), CorruptionError);
    std::filesystem::remove_all(dir);
  }
  const auto dir = scratch("altered");
  dump_corpus(tasks, dir);
  {
    std::fstream f(dir / "corpus.jsonl", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    f.put('9');
  }
  CHECK_THROWS_AS(load_corpus(dir), CorruptionError);
  std::filesystem::remove_all(dir);
}
