// Independent decoders used as oracles, plus random instance generators.
#pragma once

#include <algorithm>
#include <random>
#include <vector>

#include "luke/tasks/decode.hpp"

namespace luke::test {

using tasks::AnswerSpan;
using tasks::ner_enumerate;
using tasks::SpanPrediction;

// Selection by repeatedly scanning for the best remaining compatible span.
inline std::vector<SpanPrediction> greedy_oracle(const std::vector<SpanPrediction>& preds) {
  std::vector<SpanPrediction> accepted;
  std::vector<bool> used(preds.size(), false);
  while (true) {
    int best = -1;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (used[i] || preds[i].type < 0) continue;
      bool clash = false;
      for (const auto& a : accepted) clash = clash || (preds[i].span.start < a.span.end && a.span.start < preds[i].span.end);
      if (clash) continue;
      if (best < 0) {
        best = int(i);
        continue;
      }
      const auto& b = preds[best];
      const auto& c = preds[i];
      if (c.logit > b.logit || (c.logit == b.logit && (c.span.start < b.span.start ||
                                                       (c.span.start == b.span.start && c.span.end < b.span.end)))) {
        best = int(i);
      }
    }
    if (best < 0) break;
    used[best] = true;
    accepted.push_back(preds[best]);
  }
  std::sort(accepted.begin(), accepted.end(), [](const auto& a, const auto& b) { return a.span.start < b.span.start; });
  return accepted;
}

inline std::vector<SpanPrediction> random_span_predictions(std::mt19937_64& rng) {
  const std::size_t n = 1 + rng() % 15;
  std::vector<SpanPrediction> out;
  std::uniform_int_distribution<int> type(-1, 3);
  std::uniform_int_distribution<int> coarse(0, 6);  // coarse logits force ties
  for (const auto& s : ner_enumerate(n, 1 + rng() % 6)) out.push_back({s, type(rng), coarse(rng) * 0.5});
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

// (s, e) over every pair in scan order, keeping the first strict maximum.
inline AnswerSpan exhaustive_oracle(const std::vector<double>& start, const std::vector<double>& end, std::size_t lo,
                             std::size_t hi, std::size_t max_len) {
  AnswerSpan best;
  for (std::size_t s = lo; s < hi; ++s) {
    for (std::size_t e = s; e < hi && e - s < max_len; ++e) {
      if (start[s] + end[e] > best.score) best = {{int(s), int(e + 1)}, start[s] + end[e]};
    }
  }
  return best;
}

struct ExtractiveInstance {
  std::vector<double> start;
  std::vector<double> end;
  std::size_t lo = 0;
  std::size_t hi = 0;
  std::size_t max_len = 0;
};

// Coarse instances draw integer logits in [0, 4) so that ties are frequent.
inline ExtractiveInstance random_extractive_instance(std::mt19937_64& rng, bool coarse) {
  ExtractiveInstance x;
  const std::size_t n = 2 + rng() % 60;
  x.start.resize(n);
  x.end.resize(n);
  std::normal_distribution<double> g(0, 2);
  for (std::size_t i = 0; i < n; ++i) {
    x.start[i] = coarse ? double(rng() % 4) : g(rng);
    x.end[i] = coarse ? double(rng() % 4) : g(rng);
  }
  x.lo = rng() % n;
  x.hi = x.lo + 1 + rng() % (n - x.lo);
  x.max_len = 1 + rng() % 35;
  return x;
}

}  // namespace luke::test
