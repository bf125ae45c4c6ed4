// Span enumeration and the greedy / exhaustive decoders.
#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <limits>
#include <vector>

#include "luke/tasks/example.hpp"

namespace luke::tasks {

// Every span of length <= max_span_length over n words, ordered by start
// and then end.
inline std::vector<Span> ner_enumerate(std::size_t n, std::size_t max_span_length) {
  if (max_span_length == 0) throw ValidationError("max_span_length must be at least 1");
  std::vector<Span> out;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t e = s + 1; e <= n && e - s <= max_span_length; ++e) {
      out.push_back({static_cast<int>(s), static_cast<int>(e)});
    }
  }
  return out;
}

struct SpanPrediction {
  Span span;
  int type = -1;  // < 0 is the non-entity class
  double logit = 0.0;
};

// Greedy selection by descending logit among entity-typed spans, skipping
// any span that overlaps one already accepted. Ties go to the earlier start,
// then the shorter span. The result is sorted by start.
inline std::vector<SpanPrediction> ner_decode(const std::vector<SpanPrediction>& predictions) {
  std::vector<SpanPrediction> cands;
  for (const auto& p : predictions) {
    if (p.type >= 0) cands.push_back(p);
  }
  std::stable_sort(cands.begin(), cands.end(), [](const SpanPrediction& a, const SpanPrediction& b) {
    if (a.logit != b.logit) return a.logit > b.logit;
    if (a.span.start != b.span.start) return a.span.start < b.span.start;
    return a.span.length() < b.span.length();
  });
  std::vector<SpanPrediction> accepted;
  for (const auto& c : cands) {
    const bool clash = std::any_of(accepted.begin(), accepted.end(),
                                   [&c](const SpanPrediction& a) { return a.span.overlaps(c.span); });
    if (!clash) accepted.push_back(c);
  }
  std::sort(accepted.begin(), accepted.end(),
            [](const SpanPrediction& a, const SpanPrediction& b) { return a.span < b.span; });
  return accepted;
}

struct AnswerSpan {
  Span span;  // half-open, in the coordinates of the logit vectors
  double score = -std::numeric_limits<double>::infinity();
};

// Best (s, e) with lo <= s <= e < hi and e - s < max_answer_length,
// maximizing start[s] + end[e]. Ties go to the smaller s, then the smaller e.
// Linear time: for each e the best start is the front of a monotone window.
inline AnswerSpan extractive_decode(const std::vector<double>& start, const std::vector<double>& end,
                                    std::size_t lo, std::size_t hi, std::size_t max_answer_length) {
  if (start.size() != end.size()) throw DimensionError("start and end logits differ in length");
  if (lo >= hi || hi > start.size()) throw ValidationError("empty or out-of-range answer region");
  if (max_answer_length == 0) throw ValidationError("max_answer_length must be at least 1");
  AnswerSpan best;
  std::deque<std::size_t> window;  // start indices with strictly decreasing logits
  for (std::size_t e = lo; e < hi; ++e) {
    while (!window.empty() && start[window.back()] < start[e]) window.pop_back();
    window.push_back(e);
    while (e - window.front() >= max_answer_length) window.pop_front();
    const std::size_t s = window.front();
    const double score = start[s] + end[e];
    const bool better = score > best.score ||
                        (score == best.score && (static_cast<int>(s) < best.span.start ||
                                                 (static_cast<int>(s) == best.span.start &&
                                                  static_cast<int>(e + 1) < best.span.end)));
    if (better) best = {{static_cast<int>(s), static_cast<int>(e + 1)}, score};
  }
  return best;
}

// Index of the largest value, lowest index on ties.
template <typename Range>
std::size_t argmax(const Range& r) {
  std::size_t best = 0, i = 0;
  for (auto it = std::begin(r); it != std::end(r); ++it, ++i) {
    if (*it > *(std::begin(r) + best)) best = i;
  }
  return best;
}

}  // namespace luke::tasks
