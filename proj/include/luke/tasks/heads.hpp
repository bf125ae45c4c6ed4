// Task heads on top of the encoder: input construction, logits, losses and
// decoding into predictions.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "luke/corpus/vocabulary.hpp"
#include "luke/model/model.hpp"
#include "luke/tasks/decode.hpp"
#include "luke/tasks/example.hpp"

namespace luke::tasks {

using corpus::Vocabulary;
using model::EncoderInput;

// Head parameter names. Start/end weights are stored [1, D] so that one
// matmul_bt yields a row of logits over positions.
namespace heads {
inline const std::string kTyping = "task.typing";
inline const std::string kRelation = "task.relation";
inline const std::string kNer = "task.ner";
inline const std::string kCloze = "task.cloze";
inline const std::string kStart = "task.start.weight";
inline const std::string kEnd = "task.end.weight";
}  // namespace heads

template <typename T>
struct TaskModel {
  ModelConfig config;
  TaskSpec spec;
  ParamStore<T> params;
  // Rows of B holding [HEAD] and [TAIL]; -1 outside the relation task.
  int head_entity = -1;
  int tail_entity = -1;
};

inline std::size_t ner_input_width(const ModelConfig& c) {
  return (c.use_entity_inputs ? 3 : 2) * c.hidden_size;
}

template <typename T>
void add_task_head(ParamStore<T>& p, const ModelConfig& c, const TaskSpec& spec, std::uint64_t seed) {
  const std::size_t d = c.hidden_size;
  const double sd = c.init_std;
  switch (spec.variant) {
    case Variant::kTyping: model::add_linear(p, heads::kTyping, d, spec.num_labels, sd, seed); break;
    case Variant::kRelation: model::add_linear(p, heads::kRelation, 2 * d, spec.num_labels, sd, seed); break;
    case Variant::kNer: model::add_linear(p, heads::kNer, ner_input_width(c), spec.num_labels + 1, sd, seed); break;
    case Variant::kCloze: model::add_linear(p, heads::kCloze, 2 * d, 1, sd, seed); break;
    case Variant::kExtractive:
      p.add(heads::kStart, model::normal_init<T>({1, d}, sd, seed, heads::kStart));
      p.add(heads::kEnd, model::normal_init<T>({1, d}, sd, seed, heads::kEnd));
      break;
  }
}

// Appends `count` rows to B, each a copy of the [MASK] entity row, and
// returns the first new id.
template <typename T>
int extend_entity_vocab(ParamStore<T>& p, ModelConfig& c, std::size_t count) {
  const Tensor<T>& b = p.at(model::names::kEntity);
  Tensor<T> out({b.dim(0) + count, b.dim(1)});
  std::copy(b.data().begin(), b.data().end(), out.data().begin());
  for (std::size_t k = 0; k < count; ++k) {
    auto src = b.row(Vocabulary::kMaskEntity);
    std::copy(src.begin(), src.end(), out.row(b.dim(0) + k).begin());
  }
  const int first = static_cast<int>(b.dim(0));
  p.set(model::names::kEntity, std::move(out));
  c.entity_vocab_size += count;
  return first;
}

// Encoder weights from a pretrained store (pretraining heads are dropped),
// a fresh task head, [HEAD]/[TAIL] rows for relations, and the typed query
// matrices copied from Q when the target mode is entity-aware.
template <typename T>
TaskModel<T> init_task_model(const ParamStore<T>& pretrained, ModelConfig config, const TaskSpec& spec,
                             AttentionMode mode, bool use_entity_inputs, std::uint64_t seed) {
  auto problems = spec.problems();
  if (!problems.empty()) throw ValidationError("invalid task spec: " + problems[0]);
  TaskModel<T> m;
  m.spec = spec;
  for (const auto& [name, t] : pretrained) {
    if (name.rfind("mlm.", 0) == 0 || name.rfind("entity_head.", 0) == 0) continue;
    m.params.add(name, t);
  }
  config.use_entity_inputs = use_entity_inputs;
  if (mode == AttentionMode::kEntityAware) {
    model::enable_entity_aware(m.params, config);
  } else {
    config.attention_mode = AttentionMode::kOriginal;
  }
  if (spec.variant == Variant::kRelation) {
    m.head_entity = extend_entity_vocab(m.params, config, 2);
    m.tail_entity = m.head_entity + 1;
  }
  add_task_head(m.params, config, spec, seed);
  config.validate();
  m.config = config;
  return m;
}

// Encoder input plus where each segment starts among the word rows.
struct BuiltInput {
  EncoderInput input;
  int text_offset = 1;
  int question_offset = -1;
  // Word rows standing in for each entity when entity inputs are off.
  std::vector<int> fallback_rows;

  int row(Segment s, int i) const { return (s == Segment::kQuestion ? question_offset : text_offset) + i; }
  std::size_t text_end(std::size_t text_len) const { return static_cast<std::size_t>(text_offset) + text_len; }
};

inline BuiltInput build_words(const TaskExample& ex, const Vocabulary& vocab) {
  BuiltInput b;
  auto& ids = b.input.word_ids;
  ids.push_back(Vocabulary::kCls);
  if (has_question(ex.variant)) {
    b.question_offset = 1;
    for (const auto& w : ex.question) ids.push_back(vocab.word_id(w));
    ids.push_back(Vocabulary::kSep);
    ids.push_back(Vocabulary::kSep);
  }
  b.text_offset = static_cast<int>(ids.size());
  for (const auto& w : ex.words) ids.push_back(vocab.word_id(w));
  ids.push_back(Vocabulary::kSep);
  return b;
}

namespace detail {

inline std::vector<int> rows_of(const BuiltInput& b, Segment s, Span span) {
  std::vector<int> rows;
  for (int i = span.start; i < span.end; ++i) rows.push_back(b.row(s, i));
  return rows;
}

inline void push_entity(BuiltInput& b, int id, std::vector<int> rows) {
  b.fallback_rows.push_back(rows.front());
  b.input.entity_ids.push_back(id);
  b.input.entity_positions.push_back(std::move(rows));
}

}  // namespace detail

// Inputs for every variant except NER, whose span entities are built per
// chunk by build_ner_chunk.
template <typename T>
BuiltInput build_input(const TaskExample& ex, const Vocabulary& vocab, const TaskModel<T>& m) {
  BuiltInput b = build_words(ex, vocab);
  switch (ex.variant) {
    case Variant::kTyping:
      detail::push_entity(b, Vocabulary::kMaskEntity, detail::rows_of(b, Segment::kText, ex.entities.at(0).span));
      break;
    case Variant::kRelation:
      if (m.head_entity < 0) throw ValidationError("model has no [HEAD]/[TAIL] entities");
      detail::push_entity(b, m.head_entity, detail::rows_of(b, ex.entities.at(0).segment, ex.entities[0].span));
      detail::push_entity(b, m.tail_entity, detail::rows_of(b, ex.entities.at(1).segment, ex.entities[1].span));
      break;
    case Variant::kCloze:
      detail::push_entity(b, Vocabulary::kMaskEntity, {b.row(Segment::kQuestion, ex.placeholder)});
      for (const auto& e : ex.entities) {
        detail::push_entity(b, Vocabulary::kMaskEntity, detail::rows_of(b, e.segment, e.span));
      }
      break;
    case Variant::kExtractive:
      for (const auto& e : ex.entities) {
        const int id = vocab.has_entity(e.title) ? vocab.entity_id(e.title) : Vocabulary::kUnkEntity;
        detail::push_entity(b, id, detail::rows_of(b, e.segment, e.span));
      }
      break;
    case Variant::kNer:
      break;
  }
  return b;
}

inline BuiltInput build_ner_chunk(const TaskExample& ex, const Vocabulary& vocab, const std::vector<Span>& spans) {
  BuiltInput b = build_words(ex, vocab);
  for (const auto& s : spans) {
    detail::push_entity(b, Vocabulary::kMaskEntity, detail::rows_of(b, Segment::kText, s));
  }
  return b;
}

// Span candidates cut into consecutive chunks of at most `size`.
inline std::vector<std::vector<Span>> ner_chunks(const std::vector<Span>& spans, std::size_t size) {
  std::vector<std::vector<Span>> out;
  for (std::size_t i = 0; i < spans.size(); i += size) {
    out.emplace_back(spans.begin() + i, spans.begin() + std::min(spans.size(), i + size));
  }
  return out;
}

template <typename T>
struct TaskForward {
  // typing [1, K]; relation [1, R]; ner [spans, K + 1]; cloze [candidates, 1];
  // extractive: start logits [1, words].
  Var<T> logits;
  Var<T> end_logits;  // extractive only
  std::vector<Span> spans;  // ner candidates, in logit row order
  std::size_t passage_begin = 0;
  std::size_t passage_end = 0;
};

namespace detail {

// Row j of the entity block, or its fallback word row without entity inputs.
template <typename T>
Var<T> entity_rows(const model::Encoded<T>& enc, const BuiltInput& b, const ModelConfig& c,
                   const std::vector<int>& js) {
  if (c.use_entity_inputs) return gather_rows(enc.entities, js);
  std::vector<int> rows;
  for (int j : js) rows.push_back(b.fallback_rows.at(j));
  return gather_rows(enc.words, rows);
}

}  // namespace detail

template <typename T>
TaskForward<T> task_forward(Tape<T>& tape, const TaskModel<T>& m, const TaskExample& ex, const Vocabulary& vocab,
                            std::optional<std::uint64_t> dropout_seed = {}) {
  validate(ex, m.spec);
  const ModelConfig& c = m.config;
  const ParamStore<T>& p = m.params;
  TaskForward<T> out;
  if (ex.variant == Variant::kNer) {
    out.spans = ner_enumerate(ex.words.size(), m.spec.max_span_length);
    std::vector<Var<T>> parts;
    std::uint64_t chunk_index = 0;
    for (const auto& chunk : ner_chunks(out.spans, m.spec.ner_chunk_size)) {
      BuiltInput b = build_ner_chunk(ex, vocab, chunk);
      std::optional<std::uint64_t> seed;
      if (dropout_seed) seed = *dropout_seed + chunk_index++;
      auto enc = model::encode(tape, p, c, b.input, seed);
      std::vector<int> first, last, idx;
      for (std::size_t k = 0; k < chunk.size(); ++k) {
        first.push_back(b.row(Segment::kText, chunk[k].start));
        last.push_back(b.row(Segment::kText, chunk[k].end - 1));
        idx.push_back(static_cast<int>(k));
      }
      std::vector<Var<T>> cols = {gather_rows(enc.words, first), gather_rows(enc.words, last)};
      if (c.use_entity_inputs) cols.push_back(gather_rows(enc.entities, idx));
      parts.push_back(model::apply_linear(tape, p, heads::kNer, concat_cols(cols)));
    }
    out.logits = parts.size() == 1 ? parts[0] : concat_rows(parts);
    return out;
  }
  BuiltInput b = build_input(ex, vocab, m);
  auto enc = model::encode(tape, p, c, b.input, dropout_seed);
  switch (ex.variant) {
    case Variant::kTyping:
      out.logits = model::apply_linear(tape, p, heads::kTyping, detail::entity_rows(enc, b, c, {0}));
      break;
    case Variant::kRelation:
      out.logits = model::apply_linear(
          tape, p, heads::kRelation,
          concat_cols<T>({detail::entity_rows(enc, b, c, {0}), detail::entity_rows(enc, b, c, {1})}));
      break;
    case Variant::kCloze: {
      const std::size_t n = ex.entities.size();
      std::vector<int> missing(n, 0), cands(n);
      for (std::size_t i = 0; i < n; ++i) cands[i] = static_cast<int>(i + 1);
      Var<T> q = detail::entity_rows(enc, b, c, missing);
      out.logits = model::apply_linear(tape, p, heads::kCloze,
                                       concat_cols<T>({q, detail::entity_rows(enc, b, c, cands)}));
      break;
    }
    case Variant::kExtractive:
      out.logits = matmul_bt(p.bind(tape, heads::kStart), enc.words);
      out.end_logits = matmul_bt(p.bind(tape, heads::kEnd), enc.words);
      out.passage_begin = static_cast<std::size_t>(b.text_offset);
      out.passage_end = b.text_end(ex.words.size());
      break;
    case Variant::kNer:
      break;
  }
  return out;
}

// Gold class per NER candidate: 0 is non-entity, type t is class t + 1.
inline std::vector<int> ner_targets(const TaskExample& ex, const std::vector<Span>& spans) {
  std::vector<int> targets(spans.size(), 0);
  for (const auto& g : ex.spans) {
    auto it = std::lower_bound(spans.begin(), spans.end(), g.span);
    if (it == spans.end() || !(*it == g.span)) throw ValidationError("gold span is not a candidate");
    targets[it - spans.begin()] = g.type + 1;
  }
  return targets;
}

// Per-example loss: typing and cloze use binary cross-entropy averaged over
// labels/candidates, relation cross-entropy, NER cross-entropy averaged over
// candidates, extractive the sum of start and end cross-entropies over all
// word positions.
template <typename T>
Var<T> task_loss(const TaskForward<T>& f, const TaskExample& ex, const TaskSpec& spec) {
  if (!ex.has_gold) throw ValidationError("example '" + ex.id + "' has no gold labels");
  switch (ex.variant) {
    case Variant::kTyping: {
      Tensor<T> targets({1, spec.num_labels});
      for (int t : ex.types) targets[t] = T(1);
      return scale(bce_with_logits_sum(f.logits, targets), T(1) / T(spec.num_labels));
    }
    case Variant::kRelation: return cross_entropy_sum(f.logits, {ex.relation});
    case Variant::kNer:
      return scale(cross_entropy_sum(f.logits, ner_targets(ex, f.spans)), T(1) / T(f.spans.size()));
    case Variant::kCloze: {
      Tensor<T> targets({ex.entities.size(), 1});
      for (int a : ex.answers) targets[a] = T(1);
      return scale(bce_with_logits_sum(f.logits, targets), T(1) / T(ex.entities.size()));
    }
    case Variant::kExtractive: {
      const int s = static_cast<int>(f.passage_begin) + ex.answer.start;
      const int e = static_cast<int>(f.passage_begin) + ex.answer.end - 1;
      return add(cross_entropy_sum(f.logits, {s}), cross_entropy_sum(f.end_logits, {e}));
    }
  }
  throw ValidationError("unknown task");
}

template <typename T>
std::vector<double> row_values(const Tensor<T>& t, std::size_t r) {
  auto row = t.row(r);
  return std::vector<double>(row.begin(), row.end());
}

// Typing keeps types with logit > 0; relation and cloze take the argmax
// (lowest index on ties); NER decodes greedily; extractive takes the best
// passage span.
template <typename T>
Prediction decode(const TaskForward<T>& f, const TaskExample& ex, const TaskSpec& spec) {
  Prediction p;
  p.example_id = ex.id;
  const Tensor<T>& logits = f.logits.value();
  switch (ex.variant) {
    case Variant::kTyping:
      p.scores = row_values(logits, 0);
      for (std::size_t k = 0; k < p.scores.size(); ++k) {
        if (p.scores[k] > 0) p.labels.push_back(static_cast<int>(k));
      }
      break;
    case Variant::kRelation:
      p.scores = row_values(logits, 0);
      p.labels = {static_cast<int>(argmax(p.scores))};
      break;
    case Variant::kCloze:
      for (std::size_t i = 0; i < logits.rows(); ++i) p.scores.push_back(double(logits(i, 0)));
      p.labels = {static_cast<int>(argmax(p.scores))};
      break;
    case Variant::kNer: {
      std::vector<SpanPrediction> preds;
      for (std::size_t r = 0; r < f.spans.size(); ++r) {
        const auto row = row_values(logits, r);
        const std::size_t cls = argmax(row);
        preds.push_back({f.spans[r], static_cast<int>(cls) - 1, row[cls]});
      }
      for (const auto& s : ner_decode(preds)) {
        p.spans.push_back({s.span, s.type});
        p.scores.push_back(s.logit);
      }
      break;
    }
    case Variant::kExtractive: {
      const auto start = row_values(logits, 0);
      const auto end = row_values(f.end_logits.value(), 0);
      AnswerSpan a = extractive_decode(start, end, f.passage_begin, f.passage_end, spec.max_answer_length);
      const int off = static_cast<int>(f.passage_begin);
      p.answer = {a.span.start - off, a.span.end - off};
      p.scores = {a.score};
      break;
    }
  }
  return p;
}

template <typename T>
Prediction predict(const TaskModel<T>& m, const TaskExample& ex, const Vocabulary& vocab) {
  Tape<T> tape(false);
  return decode(task_forward(tape, m, ex, vocab), ex, m.spec);
}

}  // namespace luke::tasks
