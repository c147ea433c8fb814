#include "mtl/models.hpp"

#include <cmath>
#include <string>

namespace mtl {

void TransducerConfig::validate() const {
  std::string bad;
  auto check = [&bad](bool ok, const char* key) {
    if (!ok) bad += std::string(bad.empty() ? "" : ", ") + key;
  };
  check(enc_layers >= 1, "enc_layers");
  check(dec_layers >= 1, "dec_layers");
  check(model_width >= 1, "model_width");
  check(head_count >= 1 && model_width % std::max(head_count, 1) == 0, "head_count");
  check(key_width >= 1, "key_width");
  check(value_width >= 1, "value_width");
  check(ffn_width >= 1, "ffn_width");
  check(vocab_size > kFirstLanguageToken, "vocab_size");
  check(feat_dim >= 1, "feat_dim");
  check(conv_kernel >= 1, "conv_kernel");
  check(conv_stride >= 1, "conv_stride");
  check(max_len >= 2, "max_len");
  if (!bad.empty()) throw StructureError("transducer config: invalid " + bad);
}

void LmConfig::validate() const {
  if (layers < 1) throw StructureError("lm config: layers must be >= 1");
  if (hidden < 1) throw StructureError("lm config: hidden must be >= 1");
  if (vocab_size <= kFirstLanguageToken) throw StructureError("lm config: vocab_size too small");
}

namespace {

TensorD xavier(Index rows, Index cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  TensorD t(Shape{rows, cols});
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

TensorD zeros(Index n) { return TensorD(Shape{n}); }
TensorD ones(Index n) { return TensorD(Shape{n}, 1.0); }

void add_norm(Params& p, const std::string& name, Index width) {
  p.add(name + ".g", ones(width));
  p.add(name + ".b", zeros(width));
}

void add_attention(Params& p, const std::string& name, const TransducerConfig& c,
                   std::mt19937_64& rng) {
  const Index w = c.model_width;
  p.add(name + ".wq", xavier(w, Index{c.head_count} * c.key_width, rng));
  p.add(name + ".wk", xavier(w, Index{c.head_count} * c.key_width, rng));
  p.add(name + ".wv", xavier(w, Index{c.head_count} * c.value_width, rng));
  p.add(name + ".wo", xavier(Index{c.head_count} * c.value_width, w, rng));
  p.add(name + ".bo", zeros(w));
}

void add_ffn(Params& p, const std::string& name, const TransducerConfig& c, std::mt19937_64& rng) {
  p.add(name + ".w1", xavier(c.model_width, c.ffn_width, rng));
  p.add(name + ".b1", zeros(c.ffn_width));
  p.add(name + ".w2", xavier(c.ffn_width, c.model_width, rng));
  p.add(name + ".b2", zeros(c.model_width));
}

template <typename S>
Var<S> norm(const ParamVars<S>& p, const std::string& name, const Var<S>& x) {
  return layer_norm(x, p[name + ".g"], p[name + ".b"]);
}

template <typename S>
Var<S> multi_head(const ParamVars<S>& p, const std::string& name, const TransducerConfig& c,
                  const Var<S>& query_src, const Var<S>& kv_src, bool causal) {
  const Var<S> q = matmul(query_src, p[name + ".wq"]);
  const Var<S> k = matmul(kv_src, p[name + ".wk"]);
  const Var<S> v = matmul(kv_src, p[name + ".wv"]);
  std::vector<Var<S>> heads;
  heads.reserve(static_cast<std::size_t>(c.head_count));
  for (Index h = 0; h < c.head_count; ++h) {
    heads.push_back(attention(slice(q, 1, h * c.key_width, (h + 1) * c.key_width),
                              slice(k, 1, h * c.key_width, (h + 1) * c.key_width),
                              slice(v, 1, h * c.value_width, (h + 1) * c.value_width), causal));
  }
  const Var<S> joined = heads.size() == 1 ? heads[0] : concat(heads, 1);
  return add(matmul(joined, p[name + ".wo"]), p[name + ".bo"]);
}

template <typename S>
Var<S> feed_forward(const ParamVars<S>& p, const std::string& name, const Var<S>& x) {
  const Var<S> h = relu(add(matmul(x, p[name + ".w1"]), p[name + ".b1"]));
  return add(matmul(h, p[name + ".w2"]), p[name + ".b2"]);
}

template <typename S>
Tensor<S> lift(const TensorD& t) {
  if constexpr (std::is_same_v<S, double>) {
    return t;
  } else {
    return to_dual(t);
  }
}

}  // namespace

TensorD positional_encoding(Index rows, Index width) {
  TensorD pe(Shape{rows, width});
  for (Index pos = 0; pos < rows; ++pos) {
    for (Index i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      pe(pos, i) = (i % 2 == 0) ? std::sin(static_cast<double>(pos) * rate)
                                : std::cos(static_cast<double>(pos) * rate);
    }
  }
  return pe;
}

Params init_transducer(const TransducerConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  Params p;
  p.add("front.w", xavier(Index{cfg.conv_kernel} * cfg.feat_dim, cfg.model_width, rng));
  p.add("front.b", zeros(cfg.model_width));
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string base = "enc." + std::to_string(l);
    add_norm(p, base + ".ln1", cfg.model_width);
    add_attention(p, base + ".attn", cfg, rng);
    add_norm(p, base + ".ln2", cfg.model_width);
    add_ffn(p, base + ".ffn", cfg, rng);
  }
  add_norm(p, "enc.ln", cfg.model_width);
  p.add("dec.embed", xavier(cfg.vocab_size, cfg.model_width, rng));
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string base = "dec." + std::to_string(l);
    add_norm(p, base + ".ln1", cfg.model_width);
    add_attention(p, base + ".self", cfg, rng);
    add_norm(p, base + ".ln2", cfg.model_width);
    add_attention(p, base + ".cross", cfg, rng);
    add_norm(p, base + ".ln3", cfg.model_width);
    add_ffn(p, base + ".ffn", cfg, rng);
  }
  add_norm(p, "dec.ln", cfg.model_width);
  p.add("out.w", xavier(cfg.model_width, cfg.vocab_size, rng));
  p.add("out.b", zeros(cfg.vocab_size));
  return p;
}

Params init_lm(const LmConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  Params p;
  const Index h = cfg.hidden;
  p.add("embed", xavier(cfg.vocab_size, h, rng));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string base = "lstm." + std::to_string(l);
    p.add(base + ".w", xavier(2 * h, 4 * h, rng));
    TensorD b = zeros(4 * h);
    for (Index i = h; i < 2 * h; ++i) b[i] = 1.0;  // forget gate
    p.add(base + ".b", std::move(b));
  }
  p.add("out.w", xavier(h, cfg.vocab_size, rng));
  p.add("out.b", zeros(cfg.vocab_size));
  return p;
}

template <typename S>
Var<S> transducer_encode(Tape<S>& tape, const ParamVars<S>& p, const TransducerConfig& cfg,
                         const TensorD& features) {
  if (features.cols() != cfg.feat_dim) {
    throw DimensionError("transducer: feature width " + std::to_string(features.cols()) +
                         " but config expects " + std::to_string(cfg.feat_dim));
  }
  const Var<S> x = tape.constant(lift<S>(features));
  Var<S> h = relu(conv1d(x, p["front.w"], p["front.b"], cfg.conv_kernel, cfg.conv_stride));
  h = add(h, tape.constant(lift<S>(positional_encoding(h.rows(), cfg.model_width))));
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string base = "enc." + std::to_string(l);
    const Var<S> n1 = norm(p, base + ".ln1", h);
    h = add(h, multi_head(p, base + ".attn", cfg, n1, n1, false));
    h = add(h, feed_forward(p, base + ".ffn", norm(p, base + ".ln2", h)));
  }
  return norm(p, "enc.ln", h);
}

template <typename S>
Var<S> transducer_decode(Tape<S>& tape, const ParamVars<S>& p, const TransducerConfig& cfg,
                         const Var<S>& memory, std::span<const int> inputs) {
  const auto n = static_cast<Index>(inputs.size());
  if (n < 1) throw DimensionError("transducer: empty decoder input");
  if (n > cfg.max_len) {
    throw DimensionError("transducer: decoder input of " + std::to_string(n) +
                         " tokens exceeds max_len " + std::to_string(cfg.max_len));
  }
  Var<S> y = scale(embedding(p["dec.embed"], inputs), std::sqrt(static_cast<double>(cfg.model_width)));
  y = add(y, tape.constant(lift<S>(positional_encoding(n, cfg.model_width))));
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string base = "dec." + std::to_string(l);
    const Var<S> n1 = norm(p, base + ".ln1", y);
    y = add(y, multi_head(p, base + ".self", cfg, n1, n1, true));
    y = add(y, multi_head(p, base + ".cross", cfg, norm(p, base + ".ln2", y), memory, false));
    y = add(y, feed_forward(p, base + ".ffn", norm(p, base + ".ln3", y)));
  }
  return add(matmul(norm(p, "dec.ln", y), p["out.w"]), p["out.b"]);
}

template <typename S>
Var<S> transducer_loss(Tape<S>& tape, const ParamVars<S>& p, const TransducerConfig& cfg,
                       const SeqBatch& batch) {
  if (!batch.has_features()) throw StructureError("transducer: batch has no features");
  Var<S> total;
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto seq = batch.sequence(b);
    if (seq.size() < 2) throw StructureError("transducer: sequence shorter than two tokens");
    const Var<S> memory = transducer_encode(tape, p, cfg, batch.example_features(b));
    const auto inputs = seq.first(seq.size() - 1);
    const auto targets = seq.subspan(1);
    const Var<S> logits = transducer_decode(tape, p, cfg, memory, inputs);
    const Var<S> ce = cross_entropy(logits, targets);
    total = total.valid() ? add(total, ce) : ce;
    count += targets.size();
  }
  return scale(total, 1.0 / static_cast<double>(count));
}

template <typename S>
Var<S> lm_logits(Tape<S>& tape, const ParamVars<S>& p, const LmConfig& cfg, const SeqBatch& batch) {
  const auto rows = static_cast<Index>(batch.size());
  const auto steps = static_cast<Index>(batch.tokens.at(0).size()) - 1;
  if (steps < 1) throw StructureError("lm: sequences shorter than two tokens");
  const Index h = cfg.hidden;
  std::vector<Var<S>> hidden(static_cast<std::size_t>(cfg.layers));
  std::vector<Var<S>> cell(static_cast<std::size_t>(cfg.layers));
  for (auto& v : hidden) v = tape.constant(Tensor<S>(Shape{rows, h}));
  for (auto& v : cell) v = tape.constant(Tensor<S>(Shape{rows, h}));
  std::vector<Var<S>> tops;
  std::vector<int> column(static_cast<std::size_t>(rows));
  for (Index t = 0; t < steps; ++t) {
    for (Index b = 0; b < rows; ++b) {
      column[static_cast<std::size_t>(b)] = batch.tokens[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)];
    }
    Var<S> x = embedding(p["embed"], std::span<const int>(column));
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string base = "lstm." + std::to_string(l);
      const auto li = static_cast<std::size_t>(l);
      const Var<S> z = add(matmul(concat<S>({x, hidden[li]}, 1), p[base + ".w"]), p[base + ".b"]);
      const Var<S> in_gate = sigmoid(slice(z, 1, 0, h));
      const Var<S> forget = sigmoid(slice(z, 1, h, 2 * h));
      const Var<S> candidate = tanh(slice(z, 1, 2 * h, 3 * h));
      const Var<S> out_gate = sigmoid(slice(z, 1, 3 * h, 4 * h));
      cell[li] = add(mul(forget, cell[li]), mul(in_gate, candidate));
      hidden[li] = mul(out_gate, tanh(cell[li]));
      x = hidden[li];
    }
    tops.push_back(x);
  }
  const Var<S> stacked = tops.size() == 1 ? tops[0] : concat(tops, 0);
  return add(matmul(stacked, p["out.w"]), p["out.b"]);
}

namespace {

// Targets aligned with lm_logits rows; -1 past each sequence end.
std::vector<int> lm_targets(const SeqBatch& batch) {
  const std::size_t rows = batch.size();
  const std::size_t steps = batch.tokens.at(0).size() - 1;
  std::vector<int> targets(rows * steps, -1);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < rows; ++b) {
      if (static_cast<Index>(t + 1) < batch.lengths[b]) targets[t * rows + b] = batch.tokens[b][t + 1];
    }
  }
  return targets;
}

}  // namespace

template <typename S>
Var<S> lm_loss(Tape<S>& tape, const ParamVars<S>& p, const LmConfig& cfg, const SeqBatch& batch) {
  const std::vector<int> targets = lm_targets(batch);
  const Var<S> ce = cross_entropy(lm_logits(tape, p, cfg, batch), std::span<const int>(targets));
  return scale(ce, 1.0 / static_cast<double>(batch.predicted_tokens()));
}

NllTotal lm_nll(const Params& params, const LmConfig& cfg, const SeqBatch& batch) {
  Tape<double> tape;
  ParamVars<double> vars;
  for (const auto& [name, t] : params) vars.add(name, tape.constant(t));
  const std::vector<int> targets = lm_targets(batch);
  const Var<double> ce = cross_entropy(lm_logits(tape, vars, cfg, batch), std::span<const int>(targets));
  return {ce.value().item(), batch.predicted_tokens()};
}

double lm_score(const Params& params, const LmConfig& cfg, std::span<const int> tokens) {
  if (tokens.size() < 2) throw ContractError("lm_score: need begin plus at least one token");
  for (int id : tokens) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw VocabularyError("lm_score: id " + std::to_string(id) + " outside vocabulary");
    }
  }
  SeqBatch batch;
  batch.tokens.emplace_back(tokens.begin(), tokens.end());
  batch.lengths.push_back(static_cast<Index>(tokens.size()));
  return -lm_nll(params, cfg, batch).nll;
}

namespace {

ParamVars<double> bind_constants(Tape<double>& tape, const Params& params) {
  ParamVars<double> vars;
  for (const auto& [name, t] : params) vars.add(name, tape.constant(t));
  return vars;
}

std::vector<double> last_row_log_softmax(const Var<double>& logits) {
  const auto m = logits.value().matrix();
  const auto row = m.row(m.rows() - 1);
  const double mx = row.maxCoeff();
  const double lse = mx + std::log((row.array() - mx).exp().sum());
  std::vector<double> out(static_cast<std::size_t>(row.size()));
  for (Index i = 0; i < row.size(); ++i) out[static_cast<std::size_t>(i)] = row[i] - lse;
  return out;
}

void check_prefix(const TransducerConfig& cfg, std::span<const int> prefix) {
  if (prefix.empty() || prefix[0] != kBegin) throw ContractError("step_decode: prefix must start with begin");
  if (static_cast<int>(prefix.size()) >= cfg.max_len) {
    throw DimensionError("step_decode: prefix length " + std::to_string(prefix.size()) +
                         " reaches max_len " + std::to_string(cfg.max_len));
  }
}

}  // namespace

std::vector<double> step_decode(const Params& params, const TransducerConfig& cfg,
                                const TensorD& features, std::span<const int> prefix) {
  check_prefix(cfg, prefix);
  Tape<double> tape;
  const auto vars = bind_constants(tape, params);
  const Var<double> memory = transducer_encode(tape, vars, cfg, features);
  return last_row_log_softmax(transducer_decode(tape, vars, cfg, memory, prefix));
}

TransducerStepper::TransducerStepper(const Params& params, const TransducerConfig& cfg,
                                     const TensorD& features)
    : params_(params), cfg_(cfg) {
  Tape<double> tape;
  const auto vars = bind_constants(tape, params_);
  memory_ = transducer_encode(tape, vars, cfg_, features).value();
}

std::vector<double> TransducerStepper::operator()(std::span<const int> prefix) {
  check_prefix(cfg_, prefix);
  Tape<double> tape;
  const auto vars = bind_constants(tape, params_);
  const Var<double> memory = tape.constant(memory_);
  return last_row_log_softmax(transducer_decode(tape, vars, cfg_, memory, prefix));
}

Objective transducer_objective(const TransducerConfig& cfg) {
  return make_objective([cfg](auto& tape, const auto& vars, const SeqBatch& batch) {
    return transducer_loss(tape, vars, cfg, batch);
  });
}

Objective lm_objective(const LmConfig& cfg) {
  return make_objective([cfg](auto& tape, const auto& vars, const SeqBatch& batch) {
    return lm_loss(tape, vars, cfg, batch);
  });
}

double loss_value(const Objective& obj, const Params& params, const SeqBatch& batch) {
  Tape<double> tape;
  const auto vars = bind_constants(tape, params);
  return obj.real(tape, vars, batch).value().item();
}

std::pair<double, GradMap> loss_and_grad(const Objective& obj, const Params& params,
                                         const SeqBatch& batch) {
  Tape<double> tape;
  const auto vars = bind(tape, params);
  const Var<double> root = obj.real(tape, vars, batch);
  const double value = root.value().item();
  return {value, backward(tape, root, vars)};
}

GradMap hessian_vector_product(const Objective& obj, const Params& params, const SeqBatch& batch,
                               const Params& direction) {
  Tape<Dual> tape;
  const auto vars = bind(tape, params, direction);
  const Var<Dual> root = obj.dual(tape, vars, batch);
  const ParamSet<Dual> grads = backward(tape, root, vars);
  GradMap out;
  for (const auto& [name, g] : grads) out.add(name, tangent_part(g));
  return out;
}

#define MTL_INSTANTIATE_MODELS(S)                                                              \
  template Var<S> transducer_encode(Tape<S>&, const ParamVars<S>&, const TransducerConfig&,    \
                                    const TensorD&);                                           \
  template Var<S> transducer_decode(Tape<S>&, const ParamVars<S>&, const TransducerConfig&,    \
                                    const Var<S>&, std::span<const int>);                      \
  template Var<S> transducer_loss(Tape<S>&, const ParamVars<S>&, const TransducerConfig&,      \
                                  const SeqBatch&);                                            \
  template Var<S> lm_logits(Tape<S>&, const ParamVars<S>&, const LmConfig&, const SeqBatch&);  \
  template Var<S> lm_loss(Tape<S>&, const ParamVars<S>&, const LmConfig&, const SeqBatch&);

MTL_INSTANTIATE_MODELS(double)
MTL_INSTANTIATE_MODELS(Dual)

#undef MTL_INSTANTIATE_MODELS

}  // namespace mtl
