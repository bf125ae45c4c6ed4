// Subcommand bodies. Each reads its inputs from a RunConfig, writes its
// outputs atomically under an output directory, and throws on failure:
// ValidationError for bad input, AcceptanceFailure for a failed check, and
// anything else for runtime errors.
#pragma once

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "luke/cli/gradcheck_suite.hpp"
#include "luke/cli/run_config.hpp"
#include "luke/corpus/dictionary.hpp"
#include "luke/corpus/document.hpp"
#include "luke/corpus/tokenizer.hpp"
#include "luke/corpus/vocabulary.hpp"
#include "luke/io.hpp"
#include "luke/model/checkpoint.hpp"
#include "luke/pretrain/trainer.hpp"
#include "luke/tasks/finetune.hpp"
#include "luke/tasks/metrics.hpp"

namespace luke::cli {

namespace fs = std::filesystem;

class AcceptanceFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Command-line overrides applied on top of the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> steps;
  bool mlm_only = false;
  bool no_entities = false;
  std::optional<AttentionMode> attention;
  std::optional<Precision> precision;
};

// --steps applies to the training loop of `command` only.
inline void apply(RunConfig& c, const Overrides& o, const std::string& command) {
  if (o.seed) c.seed = *o.seed;
  c.pretrain.seed = c.seed;
  c.finetune.seed = c.seed;
  if (o.steps && command == "pretrain") c.pretrain.steps = *o.steps;
  if (o.steps && command == "finetune") {
    c.finetune.steps = *o.steps;
    c.finetune.epochs = 0.0;
  }
  if (o.mlm_only) c.pretrain.entity_loss = false;
  if (o.no_entities) c.model.use_entity_inputs = false;
  if (o.attention) {
    c.model.attention_mode = *o.attention;
    c.finetune_attention = *o.attention;
  }
  if (o.precision) c.precision = *o.precision;
  c.validate();
}

// Accepts a JSON config or a checkpoint, whose header carries the config of
// the run that wrote it.
inline RunConfig load_config_or_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 4 && bytes.compare(0, 4, kCheckpointMagic, 4) == 0) {
    Checkpoint ck = deserialize(bytes);
    if (!ck.metadata.contains("run_config")) throw ValidationError(path + ": checkpoint carries no run config");
    return run_config_from_json(ck.metadata.at("run_config"));
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

namespace detail {

inline const std::string& require(const std::string& path, const char* key) {
  if (path.empty()) throw ValidationError(std::string("data.") + key + " is not set");
  return path;
}

inline std::string jsonl(const std::vector<nlohmann::json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

inline void log_progress(const std::string& what, std::uint64_t step, std::uint64_t total, const std::string& extra) {
  std::cerr << what << " step " << step << "/" << total << extra << '\n';
}

inline std::uint64_t progress_every(std::uint64_t total) { return std::max<std::uint64_t>(1, total / 20); }

inline nlohmann::json metadata(const RunConfig& c, const std::string& kind, const corpus::Vocabulary& vocab) {
  return {{"kind", kind}, {"run_config", to_json(c)}, {"vocab", vocab.to_json()}};
}

inline corpus::Vocabulary checkpoint_vocab(const Checkpoint& ck, const std::string& path) {
  if (!ck.metadata.contains("vocab")) throw ValidationError(path + ": checkpoint carries no vocabulary");
  return corpus::Vocabulary::from_json(ck.metadata.at("vocab"));
}

inline std::string kind_of(const Checkpoint& ck) { return ck.metadata.value("kind", std::string()); }

// Rows of an existing metrics log up to and including `step`.
inline std::vector<nlohmann::json> metrics_prefix(const fs::path& path, std::uint64_t step) {
  std::vector<nlohmann::json> out;
  if (!fs::exists(path)) return out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (j.at("step").get<std::uint64_t>() <= step) out.push_back(j);
  }
  return out;
}

}  // namespace detail

inline corpus::Vocabulary load_vocab(const std::string& path) {
  try {
    return corpus::Vocabulary::from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("vocabulary " + path + ": " + e.what());
  }
}

inline std::string vocab_file_contents(const corpus::Vocabulary& v) { return v.to_json().dump() + "\n"; }

inline fs::path cmd_build_vocab(const RunConfig& c, const fs::path& out) {
  corpus::VocabCounts counts;
  corpus::for_each_document(detail::require(c.data.corpus, "corpus"),
                            [&counts](corpus::AnnotatedDocument&& d) { counts.add(d); });
  const auto vocab = corpus::build_vocab(counts, c.max_words, c.max_entities);
  const fs::path path = out / "vocab.json";
  write_file_atomic(path, vocab_file_contents(vocab));
  std::cerr << "vocabulary: " << vocab.word_size() << " words, " << vocab.entity_size() << " entities\n";
  return path;
}

inline fs::path cmd_build_dict(const RunConfig& c, const fs::path& out) {
  const auto dict = corpus::build_dictionary(corpus::ingest(detail::require(c.data.corpus, "corpus")));
  const fs::path path = out / "dictionary.tsv";
  write_file_atomic(path, dict.to_tsv());
  std::cerr << "dictionary: " << dict.names().size() << " names\n";
  return path;
}

// Writes checkpoint-<step>.luke every checkpoint_interval steps, and
// checkpoint.luke plus metrics.jsonl at the end. `resume` continues a run
// from one of its checkpoints.
template <typename T>
fs::path cmd_pretrain(RunConfig c, const fs::path& out, const std::string& resume = "") {
  const auto vocab = load_vocab(detail::require(c.data.vocab, "vocab"));
  const auto docs = corpus::ingest(detail::require(c.data.corpus, "corpus"));
  c.model.word_vocab_size = vocab.word_size();
  c.model.entity_vocab_size = vocab.entity_size();
  c.validate();
  const auto data = pretrain::to_inputs(docs, vocab, c.max_word_length);
  pretrain::PretrainState<T> st;
  if (resume.empty()) {
    st = pretrain::init_state<T>(c.model, c.seed);
  } else {
    const Checkpoint ck = load_checkpoint(resume);
    if (detail::kind_of(ck) != "pretrain") throw ValidationError(resume + ": not a pretraining checkpoint");
    if (!(detail::checkpoint_vocab(ck, resume) == vocab)) {
      throw ValidationError("vocabulary mismatch between " + resume + " and " + c.data.vocab);
    }
    st = pretrain::from_checkpoint<T>(ck);
    nlohmann::json have, want;
    to_json(have, st.config);
    to_json(want, c.model);
    if (have != want) throw ValidationError("model config of " + resume + " differs from the configured model");
  }
  const fs::path metrics_path = out / "metrics.jsonl";
  std::vector<nlohmann::json> rows = detail::metrics_prefix(metrics_path, st.step);
  const nlohmann::json meta = detail::metadata(c, "pretrain", vocab);
  const std::uint64_t every = detail::progress_every(c.pretrain.steps);
  pretrain::pretrain_loop<T>(
      st, data, c.pretrain,
      [&](const pretrain::MetricsRecord& r) {
        rows.push_back(r.to_json());
        if (r.step % every == 0 || r.step == c.pretrain.steps) {
          char buf[96];
          std::snprintf(buf, sizeof buf, "  mlm %.4f (acc %.3f)  entity %.4f (acc %.3f)", r.mlm_loss, r.mlm_acc,
                        r.entity_loss, r.entity_acc);
          detail::log_progress("pretrain", r.step, c.pretrain.steps, buf);
        }
      },
      [&](const pretrain::PretrainState<T>& s) {
        save_checkpoint((out / ("checkpoint-" + std::to_string(s.step) + ".luke")).string(),
                        pretrain::to_checkpoint(s, meta));
        write_file_atomic(metrics_path, detail::jsonl(rows));
      });
  const fs::path path = out / "checkpoint.luke";
  save_checkpoint(path.string(), pretrain::to_checkpoint(st, meta));
  write_file_atomic(metrics_path, detail::jsonl(rows));
  return path;
}

template <typename T>
tasks::FinetuneResult cmd_finetune(const RunConfig& c, const fs::path& out) {
  const std::string& init = detail::require(c.data.checkpoint, "checkpoint");
  const Checkpoint ck = load_checkpoint(init);
  if (detail::kind_of(ck) != "pretrain") throw ValidationError(init + ": not a pretraining checkpoint");
  const auto vocab = detail::checkpoint_vocab(ck, init);
  if (!c.data.vocab.empty() && !(load_vocab(c.data.vocab) == vocab)) {
    throw ValidationError("vocabulary mismatch between " + init + " and " + c.data.vocab);
  }
  const ModelConfig base = model_config_from_json(ck.metadata.at("model_config"));
  if (base.word_vocab_size != vocab.word_size() || base.entity_vocab_size != vocab.entity_size()) {
    throw ValidationError(init + ": vocabulary does not match the model's embedding tables");
  }
  const auto train = tasks::read_examples(detail::require(c.data.train, "train"));
  const auto dev = tasks::read_examples(detail::require(c.data.dev, "dev"));
  for (const auto* set : {&train, &dev}) {
    for (const auto& ex : *set) {
      if (ex.variant != c.task.variant) {
        throw ValidationError("example '" + ex.id + "' is " + tasks::to_string(ex.variant) + ", task is " +
                              tasks::to_string(c.task.variant));
      }
    }
  }
  auto m = tasks::init_task_model<T>(ck.get_all<T>("model/"), base, c.task, c.finetune_attention,
                                     c.model.use_entity_inputs, c.seed);
  std::vector<nlohmann::json> rows;
  const std::uint64_t total = c.finetune.total_steps(train.size());
  auto result = tasks::finetune(m, train, dev, vocab, c.finetune, [&](const tasks::FinetuneRecord& r) {
    rows.push_back(r.to_json());
    if (r.dev_metric) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "  loss %.4f  dev %.4f", r.loss, *r.dev_metric);
      detail::log_progress("finetune", r.step, total, buf);
    }
  });
  const fs::path path = out / "task.luke";
  save_checkpoint(path.string(), tasks::to_checkpoint(m, detail::metadata(c, "task", vocab)));
  write_file_atomic(out / "finetune_metrics.jsonl", detail::jsonl(rows));
  nlohmann::json summary = {{"best_metric", result.best_metric},
                            {"best_step", result.best_step},
                            {"steps_run", result.steps_run},
                            {"stopped_early", result.stopped_early},
                            {"dev", tasks::evaluate_model(m, dev, vocab).to_json()}};
  write_file_atomic(out / "dev_metrics.json", summary.dump(2) + "\n");
  return result;
}

struct EvalResult {
  std::size_t examples = 0;
  // Empty in predictions-only mode.
  std::optional<tasks::Scores> scores;
};

// Writes predictions.jsonl and metrics.json. Without gold labels on every
// example only predictions are scored out, with a notice on stderr.
template <typename T>
EvalResult cmd_eval(const RunConfig& c, const fs::path& out) {
  const std::string& path = detail::require(c.data.checkpoint, "checkpoint");
  const Checkpoint ck = load_checkpoint(path);
  if (detail::kind_of(ck) != "task") throw ValidationError(path + ": not a fine-tuned task checkpoint");
  const auto vocab = detail::checkpoint_vocab(ck, path);
  const auto m = tasks::task_model_from_checkpoint<T>(ck);
  const auto examples = tasks::read_examples(detail::require(c.data.test, "test"));
  if (examples.empty()) throw ValidationError("evaluation set " + c.data.test + " is empty");
  for (const auto& ex : examples) {
    if (ex.variant != m.spec.variant) {
      throw ValidationError("example '" + ex.id + "' is " + tasks::to_string(ex.variant) + ", checkpoint is " +
                            tasks::to_string(m.spec.variant));
    }
    tasks::validate(ex, m.spec);
  }
  const auto preds = tasks::predict_all(m, examples, vocab);
  std::vector<nlohmann::json> rows;
  for (const auto& p : preds) rows.push_back(tasks::to_json(p, m.spec.variant));
  write_file_atomic(out / "predictions.jsonl", detail::jsonl(rows));
  EvalResult r;
  r.examples = examples.size();
  std::size_t missing = 0;
  for (const auto& ex : examples) missing += ex.has_gold ? 0 : 1;
  nlohmann::json metrics;
  if (missing) {
    std::cerr << "notice: " << missing << " of " << examples.size()
              << " examples have no gold labels; running in predictions-only mode\n";
    metrics = {{"mode", "predictions_only"}, {"task", tasks::to_string(m.spec.variant)}, {"examples", examples.size()}};
  } else {
    r.scores = tasks::evaluate(examples, preds, m.spec.variant);
    metrics = r.scores->to_json();
  }
  write_file_atomic(out / "metrics.json", metrics.dump(2) + "\n");
  std::cout << metrics.dump() << '\n';
  return r;
}

// Attention restricts the suite to one mode; task heads run either way.
inline GradSuiteReport cmd_gradcheck(const RunConfig& c, const Overrides& o, const std::string& flip_group = "") {
  if (o.precision && *o.precision != Precision::kF64) {
    throw ValidationError("gradcheck runs in 64-bit precision only");
  }
  GradSuiteOptions g;
  g.tolerance = c.gradcheck_tolerance;
  g.seed = c.seed;
  g.flip_group = flip_group;
  if (o.attention) {
    g.original = *o.attention == AttentionMode::kOriginal;
    g.entity_aware = !g.original;
  }
  GradSuiteReport r = run_gradcheck_suite(g);
  std::cout << r.summary();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", r.worst_error());
  std::cout << (r.passed ? "PASS" : "FAIL") << "  worst relative error " << buf << "  tolerance " << g.tolerance
            << '\n';
  if (!r.passed) {
    std::string groups;
    for (const auto& f : r.failing()) groups += (groups.empty() ? "" : ", ") + f;
    throw AcceptanceFailure("gradient check failed for " + groups);
  }
  return r;
}

// One question or passage line: {"id": ..., "words": [...]} or
// {"id": ..., "text": "..."}. Passages may list the page's hyperlinks as
// "links": [{"anchor": "...", "title": "..."}]; without them every
// dictionary name maps to the titles it links to.
struct AnnotateInput {
  std::string id;
  std::vector<std::string> words;
  std::optional<corpus::PageMapping> page;
};

inline AnnotateInput parse_annotate_input(const nlohmann::json& j) {
  AnnotateInput in;
  std::vector<std::string> problems;
  StrictObject o(j, "", problems);
  o.get("id", in.id);
  if (!o.has("id")) problems.push_back("missing 'id'");
  if (o.has("words")) {
    o.get("words", in.words);
  } else if (o.has("text")) {
    std::string text;
    o.get("text", text);
    in.words = corpus::tokenize(text);
  } else {
    problems.push_back("needs 'words' or 'text'");
  }
  if (o.has("links")) {
    in.page.emplace();
    for (const auto& l : o.raw("links")) {
      if (!l.is_object() || !l.contains("anchor") || !l.contains("title")) {
        problems.push_back("each link needs 'anchor' and 'title'");
        break;
      }
      const auto& a = l.at("anchor");
      std::vector<std::string> anchor = a.is_string() ? corpus::tokenize(a.get<std::string>())
                                                      : a.get<std::vector<std::string>>();
      corpus::add_page_link(*in.page, anchor, l.at("title").get<std::string>());
    }
  }
  o.finish();
  if (!problems.empty()) throw ValidationError(problems[0]);
  return in;
}

inline std::vector<AnnotateInput> read_annotate_inputs(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<AnnotateInput> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_annotate_input(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + " line " + std::to_string(n) + ": malformed JSON: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline corpus::PageMapping dictionary_page(const corpus::EntityDictionary& dict) {
  corpus::PageMapping page;
  for (const auto& [name, e] : dict.names()) {
    for (const auto& [title, count] : e.links) {
      if (count > 0) page[name].insert(title);
    }
  }
  return page;
}

inline nlohmann::json annotations_json(const std::vector<corpus::Annotation>& as) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& a : as) out.push_back({{"title", a.title}, {"start", a.start}, {"end", a.end}});
  return out;
}

// Pairs question and passage lines by position; their ids must agree.
inline fs::path cmd_annotate(const RunConfig& c, const fs::path& out) {
  const auto dict = corpus::EntityDictionary::from_tsv(read_file(detail::require(c.data.dictionary, "dictionary")));
  const auto questions = read_annotate_inputs(detail::require(c.data.questions, "questions"));
  const auto passages = read_annotate_inputs(detail::require(c.data.passages, "passages"));
  if (questions.size() != passages.size()) {
    throw ValidationError("questions and passages differ in count (" + std::to_string(questions.size()) + " vs " +
                          std::to_string(passages.size()) + ")");
  }
  const corpus::PageMapping fallback = dictionary_page(dict);
  std::vector<nlohmann::json> rows;
  std::size_t total = 0;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const auto& q = questions[i];
    const auto& p = passages[i];
    if (q.id != p.id) {
      throw ValidationError("example " + std::to_string(i + 1) + ": question id '" + q.id + "' but passage id '" +
                            p.id + "'");
    }
    const auto pair = corpus::annotate(q.words, p.words, p.page ? *p.page : fallback, dict, c.annotate_threshold);
    total += pair.question.size() + pair.passage.size();
    rows.push_back({{"id", q.id},
                    {"question", q.words},
                    {"passage", p.words},
                    {"question_entities", annotations_json(pair.question)},
                    {"passage_entities", annotations_json(pair.passage)}});
  }
  const fs::path path = out / "annotated.jsonl";
  write_file_atomic(path, detail::jsonl(rows));
  std::cerr << "annotated " << rows.size() << " examples with " << total << " entity mentions\n";
  return path;
}

}  // namespace luke::cli
