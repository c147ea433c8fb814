#pragma once

#include <functional>
#include <random>
#include <span>
#include <vector>

#include "mtl/batch.hpp"
#include "mtl/params.hpp"

namespace mtl {

/// Encoder-decoder transducer: strided 1-D convolution front-end, a
/// self-attention encoder, and a causal decoder with cross attention.
struct TransducerConfig {
  int enc_layers = 2;
  int dec_layers = 2;
  int model_width = 64;
  int key_width = 16;    // per head
  int value_width = 16;  // per head
  int head_count = 2;
  int ffn_width = 128;
  int vocab_size = 40;
  int feat_dim = 8;
  int conv_kernel = 3;
  int conv_stride = 2;
  int max_len = 64;  // longest decoder input, begin sentinel included

  void validate() const;
};

/// Stacked LSTM language model.
struct LmConfig {
  int layers = 2;
  int hidden = 32;
  int vocab_size = 40;

  void validate() const;
};

/// Uniform(±sqrt(6/(fan_in+fan_out))) matrices, zero biases, unit norm gains.
Params init_transducer(const TransducerConfig& cfg, std::mt19937_64& rng);
/// As init_transducer; LSTM forget-gate biases start at +1.
Params init_lm(const LmConfig& cfg, std::mt19937_64& rng);

/// Encoder output for one utterance's [frames, feat_dim] features.
template <typename S>
Var<S> transducer_encode(Tape<S>& tape, const ParamVars<S>& p, const TransducerConfig& cfg,
                         const TensorD& features);

/// Decoder logits [inputs.size(), vocab] given encoder memory. Row t only
/// depends on inputs[0..t].
template <typename S>
Var<S> transducer_decode(Tape<S>& tape, const ParamVars<S>& p, const TransducerConfig& cfg,
                         const Var<S>& memory, std::span<const int> inputs);

/// Mean token cross-entropy under teacher forcing: the decoder reads
/// tokens[0..n-2] and predicts tokens[1..n-1]. Pad positions never enter.
template <typename S>
Var<S> transducer_loss(Tape<S>& tape, const ParamVars<S>& p, const TransducerConfig& cfg,
                       const SeqBatch& batch);

/// Per-step logits [(T-1)*B, vocab], row t*B + b predicting tokens[b][t+1].
template <typename S>
Var<S> lm_logits(Tape<S>& tape, const ParamVars<S>& p, const LmConfig& cfg, const SeqBatch& batch);

/// Mean next-token cross-entropy over non-pad positions.
template <typename S>
Var<S> lm_loss(Tape<S>& tape, const ParamVars<S>& p, const LmConfig& cfg, const SeqBatch& batch);

struct NllTotal {
  double nll = 0.0;
  std::size_t tokens = 0;
};

/// Summed negative log-likelihood and predicted-token count, no gradients.
NllTotal lm_nll(const Params& params, const LmConfig& cfg, const SeqBatch& batch);

/// Σ_t log p(tokens[t] | tokens[<t]) for t ≥ 1; `tokens` includes the begin
/// sentinel. Always ≤ 0.
double lm_score(const Params& params, const LmConfig& cfg, std::span<const int> tokens);

/// Next-token log-distribution after `prefix` (which starts with begin).
std::vector<double> step_decode(const Params& params, const TransducerConfig& cfg,
                                const TensorD& features, std::span<const int> prefix);

/// step_decode with the encoder output computed once per utterance.
class TransducerStepper {
 public:
  TransducerStepper(const Params& params, const TransducerConfig& cfg, const TensorD& features);
  std::vector<double> operator()(std::span<const int> prefix);

 private:
  Params params_;
  TransducerConfig cfg_;
  TensorD memory_;
};

/// A loss usable by every training strategy, evaluable over real scalars
/// (gradients) and over duals (Hessian-vector products).
struct Objective {
  std::function<Var<double>(Tape<double>&, const ParamVars<double>&, const SeqBatch&)> real;
  std::function<Var<Dual>(Tape<Dual>&, const ParamVars<Dual>&, const SeqBatch&)> dual;
};

/// Wraps a generic callable (Tape<S>&, const ParamVars<S>&, const SeqBatch&).
template <typename F>
Objective make_objective(F f) {
  return Objective{f, f};
}

Objective transducer_objective(const TransducerConfig& cfg);
Objective lm_objective(const LmConfig& cfg);

double loss_value(const Objective& obj, const Params& params, const SeqBatch& batch);
std::pair<double, GradMap> loss_and_grad(const Objective& obj, const Params& params,
                                         const SeqBatch& batch);
/// ∇²L(params)·direction, exact, by forward-over-reverse differentiation.
GradMap hessian_vector_product(const Objective& obj, const Params& params, const SeqBatch& batch,
                               const Params& direction);

/// Sinusoidal position table [rows, width].
TensorD positional_encoding(Index rows, Index width);

}  // namespace mtl
