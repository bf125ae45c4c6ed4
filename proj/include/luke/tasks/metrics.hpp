// Task metrics. Every score is a ratio of sums over examples, so it does not
// depend on example order.
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "luke/corpus/tokenizer.hpp"
#include "luke/tasks/example.hpp"

namespace luke::tasks {

struct Counts {
  double true_positive = 0;
  double predicted = 0;
  double gold = 0;

  // Nothing predicted and nothing to find counts as perfect.
  double precision() const { return predicted > 0 ? true_positive / predicted : (gold > 0 ? 0.0 : 1.0); }
  double recall() const { return gold > 0 ? true_positive / gold : (predicted > 0 ? 0.0 : 1.0); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
};

struct Scores {
  Variant variant = Variant::kTyping;
  std::size_t examples = 0;
  Counts counts;
  double exact_match = 0.0;
  double token_f1 = 0.0;

  // Micro F1 for the classification variants, EM for the QA variants.
  double primary() const { return has_question(variant) ? exact_match : counts.f1(); }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"task", to_string(variant)}, {"examples", examples}};
    if (has_question(variant)) {
      j["exact_match"] = exact_match;
      j["token_f1"] = token_f1;
    } else {
      j["precision"] = counts.precision();
      j["recall"] = counts.recall();
      j["f1"] = counts.f1();
    }
    return j;
  }
};

inline std::vector<std::string> normalized(const std::vector<std::string>& words, Span s) {
  std::vector<std::string> out;
  for (int i = s.start; i < s.end; ++i) out.push_back(corpus::normalize_word(words.at(i)));
  return out;
}

// Multiset token overlap F1.
inline double token_f1(const std::vector<std::string>& predicted, const std::vector<std::string>& gold) {
  if (predicted.empty() || gold.empty()) return predicted == gold ? 1.0 : 0.0;
  std::map<std::string, int> remaining;
  for (const auto& g : gold) ++remaining[g];
  double common = 0;
  for (const auto& p : predicted) {
    if (remaining[p]-- > 0) ++common;
  }
  if (common == 0) return 0.0;
  const double precision = common / double(predicted.size());
  const double recall = common / double(gold.size());
  return 2 * precision * recall / (precision + recall);
}

namespace detail {

inline void add_sets(Counts& c, const std::set<TypedSpan>& pred, const std::set<TypedSpan>& gold) {
  c.predicted += double(pred.size());
  c.gold += double(gold.size());
  for (const auto& p : pred) c.true_positive += gold.count(p) ? 1.0 : 0.0;
}

}  // namespace detail

// Scores `predictions` against the aligned gold examples. Relation scoring
// leaves class 0 (no_relation) out of both counts.
inline Scores evaluate(const std::vector<TaskExample>& gold, const std::vector<Prediction>& predictions,
                       Variant variant) {
  if (gold.size() != predictions.size()) throw ValidationError("predictions and examples differ in count");
  Scores s;
  s.variant = variant;
  s.examples = gold.size();
  double em = 0, f1 = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const TaskExample& g = gold[i];
    const Prediction& p = predictions[i];
    if (g.id != p.example_id) {
      throw ValidationError("prediction '" + p.example_id + "' does not match example '" + g.id + "'");
    }
    if (!g.has_gold) throw ValidationError("example '" + g.id + "' has no gold labels");
    switch (variant) {
      case Variant::kTyping: {
        std::set<TypedSpan> ps, gs;
        for (int t : p.labels) ps.insert({{}, t});
        for (int t : g.types) gs.insert({{}, t});
        detail::add_sets(s.counts, ps, gs);
        break;
      }
      case Variant::kRelation: {
        const int pr = p.labels.empty() ? 0 : p.labels[0];
        if (pr != 0) s.counts.predicted += 1;
        if (g.relation != 0) s.counts.gold += 1;
        if (pr != 0 && pr == g.relation) s.counts.true_positive += 1;
        break;
      }
      case Variant::kNer:
        detail::add_sets(s.counts, std::set<TypedSpan>(p.spans.begin(), p.spans.end()),
                         std::set<TypedSpan>(g.spans.begin(), g.spans.end()));
        break;
      case Variant::kCloze: {
        std::vector<std::string> pred_text;
        if (!p.labels.empty() && p.labels[0] >= 0 && static_cast<std::size_t>(p.labels[0]) < g.entities.size()) {
          pred_text = normalized(g.words, g.entities[p.labels[0]].span);
        }
        double best_em = 0, best_f1 = 0;
        for (int a : g.answers) {
          const auto gold_text = normalized(g.words, g.entities.at(a).span);
          best_em = std::max(best_em, pred_text == gold_text ? 1.0 : 0.0);
          best_f1 = std::max(best_f1, token_f1(pred_text, gold_text));
        }
        em += best_em;
        f1 += best_f1;
        break;
      }
      case Variant::kExtractive: {
        const auto gold_text = normalized(g.words, g.answer);
        std::vector<std::string> pred_text;
        if (p.answer.start >= 0 && p.answer.start < p.answer.end &&
            static_cast<std::size_t>(p.answer.end) <= g.words.size()) {
          pred_text = normalized(g.words, p.answer);
        }
        em += pred_text == gold_text ? 1.0 : 0.0;
        f1 += token_f1(pred_text, gold_text);
        break;
      }
    }
  }
  if (!gold.empty()) {
    s.exact_match = em / double(gold.size());
    s.token_f1 = f1 / double(gold.size());
  }
  return s;
}

}  // namespace luke::tasks
