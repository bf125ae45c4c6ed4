// Fine-tuning examples, predictions, and their JSON-lines forms.
//
// One example per line:
//   {"id": "...", "task": "typing", "words": [...], "question": [...],
//    "entities": [{"title": "...", "segment": "text", "start": 0, "end": 2}],
//    "placeholder": 0, "types": [...], "relation": 1,
//    "spans": [{"start": 0, "end": 1, "type": 2}], "answers": [0],
//    "answer": {"start": 3, "end": 5}}
// Only the keys relevant to the task are required. Gold keys are optional;
// an example without them can be predicted but not scored.
#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "luke/corpus/document.hpp"
#include "luke/io.hpp"
#include "luke/json_util.hpp"

namespace luke::tasks {

enum class Variant : std::uint8_t { kTyping, kRelation, kNer, kCloze, kExtractive };

inline const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {Variant::kTyping, Variant::kRelation, Variant::kNer,
                                         Variant::kCloze, Variant::kExtractive};
  return v;
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kTyping: return "typing";
    case Variant::kRelation: return "relation";
    case Variant::kNer: return "ner";
    case Variant::kCloze: return "cloze";
    case Variant::kExtractive: return "extractive";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : all_variants()) {
    if (to_string(v) == s) return v;
  }
  throw ValidationError("unknown task '" + s +
                        "' (expected typing, relation, ner, cloze or extractive)");
}

// Question-answering variants read [CLS] question [SEP] [SEP] text [SEP].
inline bool has_question(Variant v) { return v == Variant::kCloze || v == Variant::kExtractive; }

// Half-open word range.
struct Span {
  int start = 0;
  int end = 0;

  int length() const { return end - start; }
  bool overlaps(const Span& o) const { return start < o.end && o.start < end; }
  friend bool operator==(const Span&, const Span&) = default;
  friend auto operator<=>(const Span&, const Span&) = default;
};

enum class Segment : std::uint8_t { kText, kQuestion };

struct TaskEntity {
  std::string title;  // may be empty for [MASK]-represented entities
  Segment segment = Segment::kText;
  Span span;
};

struct TypedSpan {
  Span span;
  int type = 0;
  friend bool operator==(const TypedSpan&, const TypedSpan&) = default;
  friend auto operator<=>(const TypedSpan&, const TypedSpan&) = default;
};

// Entity roles by variant:
//   typing      entities[0] is the target
//   relation    entities[0] is the head, entities[1] the tail
//   ner         unused; candidate spans are enumerated
//   cloze       the passage candidates; `answers` indexes into them
//   extractive  annotations fed to the encoder with their real ids
struct TaskExample {
  std::string id;
  Variant variant = Variant::kTyping;
  std::vector<std::string> words;
  std::vector<std::string> question;
  std::vector<TaskEntity> entities;
  int placeholder = -1;  // cloze: question word standing for the missing entity

  bool has_gold = false;
  std::vector<int> types;
  int relation = 0;
  std::vector<TypedSpan> spans;
  std::vector<int> answers;
  Span answer;

  const std::vector<std::string>& segment(Segment s) const {
    return s == Segment::kQuestion ? question : words;
  }
};

// Label-space sizes and decoding limits for one task.
struct TaskSpec {
  Variant variant = Variant::kTyping;
  // Types (typing, ner) or relations including no_relation = 0.
  std::size_t num_labels = 1;
  std::size_t max_span_length = 16;
  std::size_t max_answer_length = 30;
  // Upper bound on span entities per encoder pass.
  std::size_t ner_chunk_size = 64;

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    const bool labelled = variant == Variant::kTyping || variant == Variant::kRelation ||
                          variant == Variant::kNer;
    if (labelled && num_labels == 0) out.push_back("num_labels must be positive");
    if (variant == Variant::kRelation && num_labels < 2) {
      out.push_back("relation needs no_relation plus at least one relation");
    }
    if (max_span_length == 0) out.push_back("max_span_length must be positive");
    if (max_answer_length == 0) out.push_back("max_answer_length must be positive");
    if (ner_chunk_size == 0) out.push_back("ner_chunk_size must be positive");
    return out;
  }
};

inline nlohmann::json to_json(const TaskSpec& s) {
  return {{"task", to_string(s.variant)},
          {"num_labels", s.num_labels},
          {"max_span_length", s.max_span_length},
          {"max_answer_length", s.max_answer_length},
          {"ner_chunk_size", s.ner_chunk_size}};
}

inline void read_task_spec(StrictObject& o, TaskSpec& s) {
  if (o.has("task")) {
    std::string name;
    o.get("task", name);
    try {
      s.variant = parse_variant(name);
    } catch (const ValidationError& e) {
      o.problems().push_back(o.child_path("task") + ": " + e.what());
    }
  }
  o.get("num_labels", s.num_labels);
  o.get("max_span_length", s.max_span_length);
  o.get("max_answer_length", s.max_answer_length);
  o.get("ner_chunk_size", s.ner_chunk_size);
}

// All problems with `ex` under `spec`, empty when valid.
inline std::vector<std::string> example_problems(const TaskExample& ex, const TaskSpec& spec) {
  std::vector<std::string> out;
  auto bad = [&](const std::string& what) { out.push_back("example '" + ex.id + "': " + what); };
  if (ex.variant != spec.variant) bad("task is " + to_string(ex.variant) + ", expected " + to_string(spec.variant));
  if (ex.words.empty()) bad("no words");
  auto valid_span = [](const Span& s, std::size_t n) {
    return s.start >= 0 && s.start < s.end && static_cast<std::size_t>(s.end) <= n;
  };
  for (std::size_t j = 0; j < ex.entities.size(); ++j) {
    const auto& e = ex.entities[j];
    if (e.segment == Segment::kQuestion && !has_question(ex.variant)) bad("question entity without a question");
    if (!valid_span(e.span, ex.segment(e.segment).size())) bad("entity " + std::to_string(j) + " span out of range");
  }
  switch (ex.variant) {
    case Variant::kTyping:
      if (ex.entities.size() != 1) bad("typing needs exactly one target entity");
      for (int t : ex.types) {
        if (t < 0 || static_cast<std::size_t>(t) >= spec.num_labels) bad("type " + std::to_string(t) + " out of range");
      }
      break;
    case Variant::kRelation:
      if (ex.entities.size() != 2) bad("relation needs a head and a tail entity");
      if (ex.relation < 0 || static_cast<std::size_t>(ex.relation) >= spec.num_labels) bad("relation out of range");
      break;
    case Variant::kNer:
      for (const auto& s : ex.spans) {
        if (!valid_span(s.span, ex.words.size())) bad("gold span out of range");
        if (static_cast<std::size_t>(s.span.length()) > spec.max_span_length) bad("gold span longer than max_span_length");
        if (s.type < 0 || static_cast<std::size_t>(s.type) >= spec.num_labels) bad("span type out of range");
      }
      break;
    case Variant::kCloze:
      if (ex.entities.empty()) bad("cloze needs at least one passage entity");
      if (ex.placeholder < 0 || static_cast<std::size_t>(ex.placeholder) >= ex.question.size()) {
        bad("placeholder outside the question");
      }
      for (const auto& e : ex.entities) {
        if (e.segment != Segment::kText) bad("cloze candidates must be passage spans");
      }
      for (int a : ex.answers) {
        if (a < 0 || static_cast<std::size_t>(a) >= ex.entities.size()) bad("answer index out of range");
      }
      if (ex.has_gold && ex.answers.empty()) bad("cloze gold needs at least one answer");
      break;
    case Variant::kExtractive:
      if (ex.question.empty()) bad("extractive needs a question");
      if (ex.has_gold && !valid_span(ex.answer, ex.words.size())) bad("gold answer outside the passage");
      break;
  }
  return out;
}

inline void validate(const TaskExample& ex, const TaskSpec& spec) {
  auto p = example_problems(ex, spec);
  if (p.empty()) return;
  std::string msg = p[0];
  for (std::size_t i = 1; i < p.size(); ++i) msg += "; " + p[i];
  throw ValidationError(msg);
}

namespace detail {

inline Span read_span(const nlohmann::json& j, const std::string& path, std::vector<std::string>& problems) {
  Span s;
  StrictObject o(j, path, problems);
  o.get("start", s.start);
  o.get("end", s.end);
  if (!o.has("start") || !o.has("end")) problems.push_back(path + ": start and end are required");
  o.finish();
  return s;
}

}  // namespace detail

inline TaskExample parse_example(const nlohmann::json& j) {
  std::vector<std::string> problems;
  TaskExample ex;
  StrictObject o(j, "", problems);
  o.get("id", ex.id);
  std::string task;
  o.get("task", task);
  if (!o.has("task")) throw ValidationError("example needs a 'task' field");
  ex.variant = parse_variant(task);
  o.get("words", ex.words);
  o.get("question", ex.question);
  o.get("placeholder", ex.placeholder);
  if (o.has("entities") && o.raw("entities").is_array()) {
    const auto& arr = o.raw("entities");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      const std::string path = "entities[" + std::to_string(k) + "]";
      StrictObject e(arr[k], path, problems);
      TaskEntity ent;
      e.get("title", ent.title);
      std::string seg = "text";
      e.get("segment", seg);
      if (seg == "question") {
        ent.segment = Segment::kQuestion;
      } else if (seg != "text") {
        problems.push_back(path + ": segment must be 'text' or 'question'");
      }
      e.get("start", ent.span.start);
      e.get("end", ent.span.end);
      e.finish();
      ex.entities.push_back(ent);
    }
  }
  if (o.has("types")) ex.has_gold = true, o.get("types", ex.types);
  if (o.has("relation")) ex.has_gold = true, o.get("relation", ex.relation);
  if (o.has("answers")) ex.has_gold = true, o.get("answers", ex.answers);
  if (o.has("answer")) ex.has_gold = true, ex.answer = detail::read_span(o.raw("answer"), "answer", problems);
  if (o.has("spans") && o.raw("spans").is_array()) {
    ex.has_gold = true;
    const auto& arr = o.raw("spans");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      const std::string path = "spans[" + std::to_string(k) + "]";
      StrictObject s(arr[k], path, problems);
      TypedSpan ts;
      s.get("start", ts.span.start);
      s.get("end", ts.span.end);
      s.get("type", ts.type);
      s.finish();
      ex.spans.push_back(ts);
    }
  }
  o.finish();
  if (!problems.empty()) {
    std::string msg = problems[0];
    for (std::size_t i = 1; i < problems.size(); ++i) msg += "; " + problems[i];
    throw ValidationError(msg);
  }
  return ex;
}

inline nlohmann::json to_json(const TaskExample& ex) {
  nlohmann::json j = {{"id", ex.id}, {"task", to_string(ex.variant)}, {"words", ex.words}};
  if (has_question(ex.variant)) j["question"] = ex.question;
  if (ex.variant == Variant::kCloze) j["placeholder"] = ex.placeholder;
  if (ex.variant != Variant::kNer) {
    nlohmann::json ents = nlohmann::json::array();
    for (const auto& e : ex.entities) {
      ents.push_back({{"title", e.title},
                      {"segment", e.segment == Segment::kQuestion ? "question" : "text"},
                      {"start", e.span.start},
                      {"end", e.span.end}});
    }
    j["entities"] = ents;
  }
  if (!ex.has_gold) return j;
  switch (ex.variant) {
    case Variant::kTyping: j["types"] = ex.types; break;
    case Variant::kRelation: j["relation"] = ex.relation; break;
    case Variant::kNer: {
      nlohmann::json spans = nlohmann::json::array();
      for (const auto& s : ex.spans) spans.push_back({{"start", s.span.start}, {"end", s.span.end}, {"type", s.type}});
      j["spans"] = spans;
      break;
    }
    case Variant::kCloze: j["answers"] = ex.answers; break;
    case Variant::kExtractive: j["answer"] = {{"start", ex.answer.start}, {"end", ex.answer.end}}; break;
  }
  return j;
}

inline std::vector<TaskExample> read_examples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<TaskExample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_example(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw corpus::IngestError(n, std::string("malformed JSON: ") + e.what());
    } catch (const ValidationError& e) {
      throw corpus::IngestError(n, e.what());
    }
  }
  return out;
}

inline std::string to_jsonl(const std::vector<TaskExample>& examples) {
  std::string out;
  for (const auto& ex : examples) out += to_json(ex).dump() + "\n";
  return out;
}

// What a model answered for one example. The active fields depend on the
// variant: `labels` holds types, the relation, or the chosen cloze entity;
// `spans` holds NER spans; `answer` the extractive span.
struct Prediction {
  std::string example_id;
  std::vector<int> labels;
  std::vector<TypedSpan> spans;
  Span answer;
  std::vector<double> scores;
};

inline nlohmann::json to_json(const Prediction& p, Variant v) {
  nlohmann::json pred;
  switch (v) {
    case Variant::kTyping: pred = p.labels; break;
    case Variant::kRelation:
    case Variant::kCloze: pred = p.labels.empty() ? -1 : p.labels[0]; break;
    case Variant::kNer:
      pred = nlohmann::json::array();
      for (const auto& s : p.spans) pred.push_back({{"start", s.span.start}, {"end", s.span.end}, {"type", s.type}});
      break;
    case Variant::kExtractive: pred = {{"start", p.answer.start}, {"end", p.answer.end}}; break;
  }
  return {{"example_id", p.example_id}, {"prediction", pred}, {"scores", p.scores}};
}

inline Prediction parse_prediction(const nlohmann::json& j, Variant v) {
  Prediction p;
  p.example_id = j.at("example_id").get<std::string>();
  p.scores = j.at("scores").get<std::vector<double>>();
  const auto& pred = j.at("prediction");
  switch (v) {
    case Variant::kTyping: p.labels = pred.get<std::vector<int>>(); break;
    case Variant::kRelation:
    case Variant::kCloze: p.labels = {pred.get<int>()}; break;
    case Variant::kNer:
      for (const auto& s : pred) p.spans.push_back({{s.at("start").get<int>(), s.at("end").get<int>()}, s.at("type").get<int>()});
      break;
    case Variant::kExtractive: p.answer = {pred.at("start").get<int>(), pred.at("end").get<int>()}; break;
  }
  return p;
}

}  // namespace luke::tasks
