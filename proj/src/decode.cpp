#include "mtl/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mtl/errors.hpp"

namespace mtl {

void RescoreWeights::validate() const {
  if (!std::isfinite(w_dec) || !std::isfinite(w_lm) || !std::isfinite(w_wc)) {
    throw ContractError("rescore weights must be finite");
  }
}

namespace {

struct Beam {
  std::vector<int> tokens;
  double logp = 0.0;
  bool finished = false;
};

std::vector<double> checked(std::vector<double> lp) {
  if (lp.empty()) throw ContractError("beam search: step function returned no scores");
  for (double x : lp) {
    if (std::isnan(x) || x == std::numeric_limits<double>::infinity()) {
      throw NumericError("beam search: step function returned NaN or +inf");
    }
  }
  return lp;
}

// Tokens the search never emits: structural sentinels and impossible (-inf) entries.
bool skipped(const std::vector<double>& lp, std::size_t v) {
  return static_cast<int>(v) == kPad || static_cast<int>(v) == kBegin || std::isinf(lp[v]);
}

}  // namespace

std::vector<Hypothesis> beam_search(const StepFn& step, int width, int max_len) {
  if (width < 1) throw ContractError("beam search: width must be at least 1");
  if (max_len < 1) throw ContractError("beam search: max_len must be at least 1");

  std::vector<Beam> beams{Beam{{kBegin}, 0.0, false}};
  for (int t = 0; t < max_len; ++t) {
    if (std::all_of(beams.begin(), beams.end(), [](const Beam& b) { return b.finished; })) break;
    struct Cand {
      double logp;
      std::size_t parent;
      int token;  // -1 keeps a finished beam as-is
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < beams.size(); ++i) {
      if (beams[i].finished) {
        cands.push_back({beams[i].logp, i, -1});
        continue;
      }
      const std::vector<double> lp = checked(step(beams[i].tokens));
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (skipped(lp, v)) continue;
        cands.push_back({beams[i].logp + lp[v], i, static_cast<int>(v)});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    std::vector<Beam> next;
    for (std::size_t i = 0; i < cands.size() && next.size() < static_cast<std::size_t>(width); ++i) {
      const Cand& c = cands[i];
      Beam b = beams[c.parent];
      if (c.token >= 0) {
        b.tokens.push_back(c.token);
        b.logp = c.logp;
        b.finished = c.token == kEnd;
      }
      next.push_back(std::move(b));
    }
    if (next.empty()) throw ContractError("beam search: step function allows no token");
    beams = std::move(next);
  }

  std::vector<Hypothesis> out;
  for (Beam& b : beams) {
    Hypothesis h;
    h.tokens = std::move(b.tokens);
    h.dec_logp = std::min(b.logp, 0.0);
    h.word_count = word_count(h.tokens);
    out.push_back(std::move(h));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.dec_logp > b.dec_logp; });
  return out;
}

Hypothesis greedy_decode(const StepFn& step, int max_len) {
  if (max_len < 1) throw ContractError("greedy decode: max_len must be at least 1");
  Hypothesis h;
  h.tokens = {kBegin};
  for (int t = 0; t < max_len; ++t) {
    const std::vector<double> lp = checked(step(h.tokens));
    int best = -1;
    for (std::size_t v = 0; v < lp.size(); ++v) {
      if (skipped(lp, v)) continue;
      if (best < 0 || lp[v] > lp[static_cast<std::size_t>(best)]) best = static_cast<int>(v);
    }
    if (best < 0) throw ContractError("greedy decode: step function allows no token");
    h.tokens.push_back(best);
    h.dec_logp += lp[static_cast<std::size_t>(best)];
    if (best == kEnd) break;
  }
  h.dec_logp = std::min(h.dec_logp, 0.0);
  h.word_count = word_count(h.tokens);
  return h;
}

double sequence_logp(const StepFn& step, std::span<const int> tokens) {
  if (tokens.empty() || tokens[0] != kBegin) throw ContractError("sequence_logp: must start with begin");
  double total = 0.0;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    const std::vector<double> lp = checked(step(tokens.first(t)));
    total += lp.at(static_cast<std::size_t>(tokens[t]));
  }
  return total;
}

int word_count(std::span<const int> tokens) {
  int words = 0;
  bool in_word = false;
  for (int t : tokens) {
    if (t == kPad || t == kBegin || t == kEnd) continue;
    if (t == kSpace) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++words;
    }
  }
  return words;
}

double combined_score(const Hypothesis& h, const RescoreWeights& w) {
  double s = w.w_dec * h.dec_logp + w.w_wc * std::sqrt(static_cast<double>(h.word_count));
  if (w.w_lm != 0.0) {
    if (!h.lm_logp) throw ContractError("rescore: hypothesis has no LM score but w_lm is nonzero");
    s += w.w_lm * *h.lm_logp;
  }
  return s;
}

RescoreResult rescore(std::vector<Hypothesis> hyps,
                      const std::function<double(std::span<const int>)>& lm,
                      const RescoreWeights& weights) {
  if (hyps.empty()) throw ContractError("rescore: no hypotheses");
  weights.validate();
  RescoreResult r;
  for (Hypothesis& h : hyps) {
    if (lm && !h.lm_logp) h.lm_logp = lm(h.tokens);
    h.word_count = word_count(h.tokens);
    const double s = combined_score(h, weights);
    r.scored.push_back({std::move(h), s});
  }
  for (std::size_t i = 1; i < r.scored.size(); ++i) {
    if (r.scored[i].score > r.scored[r.best].score) r.best = i;
  }
  return r;
}

}  // namespace mtl
