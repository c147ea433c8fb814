#include "support.hpp"

#include <algorithm>

#include "mtl/meta.hpp"

namespace mtl::testing {

Var<double> weighted_sum(Tape<double>& tape, const Var<double>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(out, tape.constant(random_tensor(out.shape(), rng))));
}

namespace {

// Keeps relu inputs away from the kink so central differences stay exact.
TensorD away_from_zero(TensorD t, double margin = 0.05) {
  for (Index i = 0; i < t.size(); ++i) {
    if (std::abs(t[i]) < margin) t[i] = t[i] < 0 ? -margin : margin;
  }
  return t;
}

}  // namespace

std::vector<OpCase> op_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::uint64_t w = seed * 7919 + 1;
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name, std::vector<std::pair<std::string, TensorD>> inputs,
                      std::function<Var<double>(Tape<double>&, const ParamVars<double>&)> body) {
    Params p;
    for (auto& [n, t] : inputs) p.add(n, std::move(t));
    cases.push_back({std::move(name), std::move(p),
                     [body, w](Tape<double>& tape, const ParamVars<double>& v) {
                       return weighted_sum(tape, body(tape, v), w);
                     }});
  };

  add_case("matmul", {{"a", random_tensor({3, 4}, rng)}, {"b", random_tensor({4, 2}, rng)}},
           [](auto&, const auto& v) { return matmul(v["a"], v["b"]); });
  add_case("add", {{"a", random_tensor({3, 4}, rng)}, {"b", random_tensor({3, 4}, rng)}},
           [](auto&, const auto& v) { return add(v["a"], v["b"]); });
  add_case("add_row_broadcast", {{"a", random_tensor({3, 4}, rng)}, {"b", random_tensor({4}, rng)}},
           [](auto&, const auto& v) { return add(v["a"], v["b"]); });
  add_case("sub", {{"a", random_tensor({3, 4}, rng)}, {"b", random_tensor({3, 4}, rng)}},
           [](auto&, const auto& v) { return sub(v["a"], v["b"]); });
  add_case("mul", {{"a", random_tensor({3, 4}, rng)}, {"b", random_tensor({3, 4}, rng)}},
           [](auto&, const auto& v) { return mul(v["a"], v["b"]); });
  add_case("scale", {{"a", random_tensor({2, 3}, rng)}},
           [](auto&, const auto& v) { return scale(v["a"], -1.7); });
  add_case("concat_rows", {{"a", random_tensor({2, 3}, rng)}, {"b", random_tensor({4, 3}, rng)}},
           [](auto&, const auto& v) { return concat<double>({v["a"], v["b"], v["a"]}, 0); });
  add_case("concat_cols", {{"a", random_tensor({3, 2}, rng)}, {"b", random_tensor({3, 4}, rng)}},
           [](auto&, const auto& v) { return concat<double>({v["a"], v["b"]}, 1); });
  add_case("slice_rows", {{"a", random_tensor({5, 3}, rng)}},
           [](auto&, const auto& v) { return slice(v["a"], 0, 1, 4); });
  add_case("slice_cols", {{"a", random_tensor({3, 5}, rng)}},
           [](auto&, const auto& v) { return slice(v["a"], 1, 2, 5); });
  add_case("embedding", {{"table", random_tensor({5, 3}, rng)}}, [](auto&, const auto& v) {
    static const std::vector<int> ids{0, 3, 3, 4, 1};
    return embedding(v["table"], std::span<const int>(ids));
  });
  add_case("tanh", {{"a", random_tensor({3, 4}, rng)}}, [](auto&, const auto& v) { return tanh(v["a"]); });
  add_case("sigmoid", {{"a", random_tensor({3, 4}, rng, 2.0)}},
           [](auto&, const auto& v) { return sigmoid(v["a"]); });
  add_case("relu", {{"a", away_from_zero(random_tensor({3, 4}, rng))}},
           [](auto&, const auto& v) { return relu(v["a"]); });
  add_case("softmax", {{"a", random_tensor({3, 5}, rng)}}, [](auto&, const auto& v) { return softmax(v["a"]); });
  add_case("log_softmax", {{"a", random_tensor({3, 5}, rng)}},
           [](auto&, const auto& v) { return log_softmax(v["a"]); });
  add_case("layer_norm",
           {{"x", random_tensor({3, 5}, rng)}, {"g", random_tensor({5}, rng)}, {"b", random_tensor({5}, rng)}},
           [](auto&, const auto& v) { return layer_norm(v["x"], v["g"], v["b"]); });
  add_case("conv1d",
           {{"x", random_tensor({7, 3}, rng)}, {"w", random_tensor({9, 4}, rng)}, {"b", random_tensor({4}, rng)}},
           [](auto&, const auto& v) { return conv1d(v["x"], v["w"], v["b"], 3, 2); });
  add_case("attention",
           {{"q", random_tensor({3, 4}, rng)}, {"k", random_tensor({5, 4}, rng)}, {"v", random_tensor({5, 2}, rng)}},
           [](auto&, const auto& v) { return attention(v["q"], v["k"], v["v"], false); });
  add_case("attention_causal",
           {{"q", random_tensor({4, 4}, rng)}, {"k", random_tensor({4, 4}, rng)}, {"v", random_tensor({4, 3}, rng)}},
           [](auto&, const auto& v) { return attention(v["q"], v["k"], v["v"], true); });
  add_case("cross_entropy", {{"logits", random_tensor({4, 5}, rng)}}, [](auto&, const auto& v) {
    static const std::vector<int> targets{1, -1, 4, 0};
    return cross_entropy(v["logits"], std::span<const int>(targets));
  });
  add_case("sum", {{"a", random_tensor({3, 4}, rng)}}, [](auto&, const auto& v) { return sum(v["a"]); });
  add_case("mean", {{"a", random_tensor({3, 4}, rng)}}, [](auto&, const auto& v) { return mean(v["a"]); });
  return cases;
}

TransducerConfig tiny_transducer_config() {
  TransducerConfig c;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.model_width = 8;
  c.key_width = 4;
  c.value_width = 4;
  c.head_count = 2;
  c.ffn_width = 8;
  c.vocab_size = 8;
  c.feat_dim = 3;
  c.conv_kernel = 3;
  c.conv_stride = 2;
  c.max_len = 12;
  return c;
}

LmConfig tiny_lm_config() {
  LmConfig c;
  c.layers = 2;
  c.hidden = 4;
  c.vocab_size = 8;
  return c;
}

namespace {

std::vector<std::vector<int>> random_sequences(std::mt19937_64& rng, int vocab, std::size_t examples) {
  std::uniform_int_distribution<int> tok(kSpace, vocab - 1);
  std::uniform_int_distribution<int> len(1, 4);
  std::vector<std::vector<int>> seqs(examples);
  for (auto& s : seqs) {
    s.resize(static_cast<std::size_t>(len(rng)));
    for (int& t : s) t = tok(rng);
  }
  return seqs;
}

}  // namespace

SeqBatch tiny_transducer_batch(std::uint64_t seed, const TransducerConfig& cfg, std::size_t examples) {
  std::mt19937_64 rng(seed);
  const auto seqs = random_sequences(rng, cfg.vocab_size, examples);
  std::vector<TensorD> feats;
  for (const auto& s : seqs) feats.push_back(random_tensor({static_cast<Index>(2 * s.size() + 1), cfg.feat_dim}, rng));
  return make_batch(seqs, feats);
}

SeqBatch tiny_lm_batch(std::uint64_t seed, int vocab, std::size_t examples) {
  std::mt19937_64 rng(seed);
  return make_batch(random_sequences(rng, vocab, examples), {});
}

namespace {

template <typename S>
Var<S> quadratic_loss(Tape<S>& tape, const ParamVars<S>& p, const SeqBatch& batch) {
  const Var<S>& theta = p["theta"];
  const Var<S> c = tape.constant(lift<S>(batch.features.reshaped(theta.shape())));
  const Var<S> d = sub(theta, c);
  return scale(sum(mul(d, d)), 0.5);
}

template <typename S>
Var<S> nonlinear_loss(Tape<S>& tape, const ParamVars<S>& p, const SeqBatch& batch) {
  const TensorD x = batch.example_features(0);
  std::vector<int> targets;
  for (std::size_t t = 1; t + 1 < static_cast<std::size_t>(batch.lengths[0]); ++t) {
    targets.push_back(batch.tokens[0][t] - kFirstLanguageToken);
  }
  const Var<S> h = tanh(add(matmul(tape.constant(lift<S>(x)), p["w"]), p["b"]));
  const Var<S> ce = cross_entropy(scale(h, 3.0), std::span<const int>(targets));
  return scale(ce, 1.0 / static_cast<double>(targets.size()));
}

}  // namespace

Objective quadratic_objective() {
  return make_objective([](auto& tape, const auto& p, const SeqBatch& b) { return quadratic_loss(tape, p, b); });
}

SeqBatch quadratic_batch(const std::vector<double>& c, Split split) {
  TensorD f({1, static_cast<Index>(c.size())});
  for (std::size_t i = 0; i < c.size(); ++i) f[static_cast<Index>(i)] = c[i];
  return make_batch({{kFirstLanguageToken}}, {f}, split);
}

Params quadratic_params(const std::vector<double>& theta) {
  TensorD t({static_cast<Index>(theta.size())});
  for (std::size_t i = 0; i < theta.size(); ++i) t[static_cast<Index>(i)] = theta[i];
  Params p;
  p.add("theta", t);
  return p;
}

Objective tiny_nonlinear_objective() {
  return make_objective([](auto& tape, const auto& p, const SeqBatch& b) { return nonlinear_loss(tape, p, b); });
}

Params tiny_nonlinear_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Params p;
  p.add("w", random_tensor({2, 3}, rng, 0.7));
  p.add("b", random_tensor({3}, rng, 0.3));
  return p;
}

SeqBatch tiny_nonlinear_batch(std::uint64_t seed, std::size_t rows) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cls(0, 2);
  std::vector<int> targets(rows);
  for (int& t : targets) t = kFirstLanguageToken + cls(rng);
  return make_batch({targets}, {random_tensor({static_cast<Index>(rows), 2}, rng)});
}

double meta_objective(const Objective& obj, const Params& theta, const std::vector<SeqBatch>& train,
                      const SeqBatch& val, double alpha, int inner_steps) {
  double total = 0.0;
  for (const SeqBatch& b : train) {
    Params adapted = theta;
    for (int k = 0; k < inner_steps; ++k) adapted = sgd_step(adapted, loss_and_grad(obj, adapted, b).second, alpha);
    total += loss_value(obj, adapted, val);
  }
  return total;
}

GradMap meta_objective_fd(const Objective& obj, const Params& theta, const std::vector<SeqBatch>& train,
                          const SeqBatch& val, double alpha, int inner_steps, double eps) {
  GradMap g = zeros_like(theta);
  Params probe = theta;
  for (std::size_t e = 0; e < probe.size(); ++e) {
    for (Index i = 0; i < probe.tensor(e).size(); ++i) {
      const double saved = probe.tensor(e)[i];
      probe.tensor(e)[i] = saved + eps;
      const double up = meta_objective(obj, probe, train, val, alpha, inner_steps);
      probe.tensor(e)[i] = saved - eps;
      const double down = meta_objective(obj, probe, train, val, alpha, inner_steps);
      probe.tensor(e)[i] = saved;
      g.tensor(e)[i] = (up - down) / (2.0 * eps);
    }
  }
  return g;
}

double max_rel_diff(const Params& a, const Params& b, double floor) {
  require_compatible(a, b, "max_rel_diff");
  double worst = 0.0;
  for (std::size_t e = 0; e < a.size(); ++e) {
    for (Index i = 0; i < a.tensor(e).size(); ++i) {
      const double x = a.tensor(e)[i];
      const double y = b.tensor(e)[i];
      worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
    }
  }
  return worst;
}

StepFn random_step_fn(std::uint64_t seed, int vocab, double sharpness) {
  std::mt19937_64 rng(seed);
  const TensorD by_prev = random_tensor({vocab, vocab}, rng, sharpness);
  const TensorD by_pos = random_tensor({4, vocab}, rng, sharpness);
  return [=](std::span<const int> prefix) {
    const int prev = prefix.back();
    const Index pos = static_cast<Index>(prefix.size() % 4);
    std::vector<double> logits(static_cast<std::size_t>(vocab));
    for (int v = 0; v < vocab; ++v) logits[static_cast<std::size_t>(v)] = by_prev(prev, v) + by_pos(pos, v);
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    for (double& l : logits) l -= m + std::log(z);
    return logits;
  };
}

}  // namespace mtl::testing
