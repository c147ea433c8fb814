#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mtl/batch.hpp"

namespace mtl {

struct Hypothesis {
  std::vector<int> tokens;  // begin ... end (end absent if cut at max_len)
  double dec_logp = 0.0;
  std::optional<double> lm_logp;
  int word_count = 0;
};

/// Weights of the combined score w_dec·log P(Y|X) + w_lm·log p_lm(Y) + w_wc·√wc(Y).
struct RescoreWeights {
  double w_dec = 1.0;
  double w_lm = 0.1;
  double w_wc = 0.1;

  void validate() const;
};

/// Next-token log-probabilities after a prefix that starts with begin.
using StepFn = std::function<std::vector<double>(std::span<const int>)>;

/// Length-capped beam search. `max_len` counts generated tokens (end
/// included). Beams that emit end are frozen; beams still open at max_len are
/// kept with their score as-is. Candidates are ranked by score, then by
/// parent rank, then by lower token id. Returns up to `width` hypotheses
/// sorted by dec_logp, best first.
std::vector<Hypothesis> beam_search(const StepFn& step, int width, int max_len);

/// Argmax decoding with the same tie-break (lower id) and cap.
Hypothesis greedy_decode(const StepFn& step, int max_len);

/// Teacher-forced Σ log p(tokens[t] | tokens[<t]) over t ≥ 1.
double sequence_logp(const StepFn& step, std::span<const int> tokens);

/// Number of non-empty groups between space tokens; sentinels and pad are ignored.
int word_count(std::span<const int> tokens);

struct Scored {
  Hypothesis hyp;
  double score = 0.0;
};

struct RescoreResult {
  std::size_t best = 0;         // index into `scored`
  std::vector<Scored> scored;   // input order
};

double combined_score(const Hypothesis& h, const RescoreWeights& w);

/// Fills lm_logp (when `lm` is set and the hypothesis lacks it) and
/// word_count, then picks the highest combined score; the earliest wins ties.
RescoreResult rescore(std::vector<Hypothesis> hyps,
                      const std::function<double(std::span<const int>)>& lm,
                      const RescoreWeights& weights);

}  // namespace mtl
