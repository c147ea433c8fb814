#pragma once

// Shared fixtures for the unit suites and the acceptance runner.

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mtl/data.hpp"
#include "mtl/decode.hpp"
#include "mtl/grad_check.hpp"
#include "mtl/models.hpp"

namespace mtl::testing {

inline TensorD random_tensor(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  TensorD t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

template <typename S>
Tensor<S> lift(const TensorD& t) {
  if constexpr (std::is_same_v<S, double>) {
    return t;
  } else {
    return to_dual(t);
  }
}

/// Reduces an op output to a scalar through fixed random weights, so every
/// output element reaches the gradient with a distinct coefficient.
Var<double> weighted_sum(Tape<double>& tape, const Var<double>& out, std::uint64_t seed);

struct OpCase {
  std::string name;
  Params params;
  TapedLoss loss;
};

/// One grad-check case per supported op, with random inputs drawn from `seed`.
std::vector<OpCase> op_cases(std::uint64_t seed);

/// Small transducer / LM configurations and batches for full-loss checks.
TransducerConfig tiny_transducer_config();
LmConfig tiny_lm_config();
SeqBatch tiny_transducer_batch(std::uint64_t seed, const TransducerConfig& cfg, std::size_t examples = 2);
SeqBatch tiny_lm_batch(std::uint64_t seed, int vocab, std::size_t examples = 2);

/// L = ½‖θ − c‖² with c carried in the batch features (one value per parameter).
Objective quadratic_objective();
SeqBatch quadratic_batch(const std::vector<double>& c, Split split = Split::Train);
Params quadratic_params(const std::vector<double>& theta);

/// Nine-parameter softmax regression with a tanh layer: logits = 3·tanh(XW + b).
Objective tiny_nonlinear_objective();
Params tiny_nonlinear_params(std::uint64_t seed);
SeqBatch tiny_nonlinear_batch(std::uint64_t seed, std::size_t rows = 5);

/// Meta-objective Σ_i L_val(θ − α∇L_tra_i(θ)) with inner_steps plain steps.
double meta_objective(const Objective& obj, const Params& theta, const std::vector<SeqBatch>& train,
                      const SeqBatch& val, double alpha, int inner_steps);
/// Central differences of meta_objective.
GradMap meta_objective_fd(const Objective& obj, const Params& theta, const std::vector<SeqBatch>& train,
                          const SeqBatch& val, double alpha, int inner_steps, double eps);

/// Max over entries of |a − b| / max(|a|, |b|, floor).
double max_rel_diff(const Params& a, const Params& b, double floor = 1e-8);

/// Random autoregressive scorer: the next-token distribution depends on the
/// last token and the prefix length through fixed random tables.
StepFn random_step_fn(std::uint64_t seed, int vocab, double sharpness = 2.0);

}  // namespace mtl::testing
