// Run configuration shared by every subcommand. Every field has a default,
// unknown keys are rejected, and all problems are reported together.
#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "luke/io.hpp"
#include "luke/json_util.hpp"
#include "luke/model/config.hpp"
#include "luke/pretrain/trainer.hpp"
#include "luke/tasks/example.hpp"
#include "luke/tasks/finetune.hpp"

namespace luke::cli {

struct DataPaths {
  std::string corpus;
  std::string vocab;
  std::string dictionary;
  std::string train;
  std::string dev;
  std::string test;
  std::string checkpoint;
  std::string questions;
  std::string passages;
};

enum class Precision { kF32, kF64 };

inline std::string to_string(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw ValidationError("precision must be 'f32' or 'f64', got '" + s + "'");
}

struct RunConfig {
  std::uint64_t seed = 0;
  Precision precision = Precision::kF32;
  // Pretraining runs in model.attention_mode; fine-tuning switches to this mode.
  ModelConfig model;
  AttentionMode finetune_attention = AttentionMode::kEntityAware;
  std::size_t max_words = 50000;
  std::size_t max_entities = 50000;
  std::size_t max_word_length = 64;
  pretrain::PretrainOptions pretrain;
  tasks::FinetuneOptions finetune;
  tasks::TaskSpec task;
  double annotate_threshold = 0.01;
  double gradcheck_tolerance = 1e-5;
  DataPaths data;

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    auto add = [&out](const std::string& where, const std::vector<std::string>& ps) {
      for (const auto& p : ps) out.push_back(where + ": " + p);
    };
    add("model", model.problems());
    add("pretrain", pretrain.problems());
    add("finetune", finetune.problems());
    add("task", task.problems());
    if (max_words < static_cast<std::size_t>(corpus::Vocabulary::kNumWordSpecials)) {
      out.push_back("vocab: max_words must cover the word specials");
    }
    if (max_entities < static_cast<std::size_t>(corpus::Vocabulary::kNumEntitySpecials)) {
      out.push_back("vocab: max_entities must cover the entity specials");
    }
    if (max_word_length < 3) out.push_back("vocab: max_word_length must be at least 3");
    if (max_word_length > model.max_positions) {
      out.push_back("vocab: max_word_length exceeds model.max_positions");
    }
    if (annotate_threshold < 0.0 || annotate_threshold > 1.0) {
      out.push_back("annotate: threshold must be in [0, 1]");
    }
    if (gradcheck_tolerance <= 0.0) out.push_back("gradcheck: tolerance must be positive");
    return out;
  }

  void validate() const {
    auto ps = problems();
    if (ps.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& p : ps) msg += "\n  " + p;
    throw ValidationError(msg);
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json model;
  to_json(model, c.model);
  nlohmann::json finetune = tasks::to_json(c.finetune);
  finetune["attention_mode"] = to_string(c.finetune_attention);
  const DataPaths& d = c.data;
  return {{"seed", c.seed},
          {"precision", to_string(c.precision)},
          {"model", model},
          {"vocab",
           {{"max_words", c.max_words}, {"max_entities", c.max_entities}, {"max_word_length", c.max_word_length}}},
          {"pretrain", pretrain::to_json(c.pretrain)},
          {"finetune", finetune},
          {"task", tasks::to_json(c.task)},
          {"annotate", {{"threshold", c.annotate_threshold}}},
          {"gradcheck", {{"tolerance", c.gradcheck_tolerance}}},
          {"data",
           {{"corpus", d.corpus},
            {"vocab", d.vocab},
            {"dictionary", d.dictionary},
            {"train", d.train},
            {"dev", d.dev},
            {"test", d.test},
            {"checkpoint", d.checkpoint},
            {"questions", d.questions},
            {"passages", d.passages}}}};
}

namespace detail {

template <typename Fn>
void section(StrictObject& top, const nlohmann::json& j, const std::string& key, Fn&& read) {
  if (!top.has(key)) return;
  StrictObject o(j.at(key), top.child_path(key), top.problems());
  read(o);
}

template <typename Enum, typename Parse>
void get_enum(StrictObject& o, const std::string& key, Enum& out, Parse&& parse) {
  if (!o.has(key)) return;
  std::string s;
  o.get(key, s);
  try {
    out = parse(s);
  } catch (const ValidationError& e) {
    o.problems().push_back(o.child_path(key) + ": " + e.what());
  }
}

}  // namespace detail

// Keys absent from `j` keep their defaults. Throws ValidationError listing
// every unknown key, type error and invalid value.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  std::vector<std::string> problems;
  StrictObject top(j, "", problems);
  top.get("seed", c.seed);
  detail::get_enum(top, "precision", c.precision, parse_precision);
  detail::section(top, j, "model", [&](StrictObject& o) { read_model_config(o, c.model); });
  detail::section(top, j, "vocab", [&](StrictObject& o) {
    o.get("max_words", c.max_words);
    o.get("max_entities", c.max_entities);
    o.get("max_word_length", c.max_word_length);
    o.finish();
  });
  detail::section(top, j, "pretrain", [&](StrictObject& o) { pretrain::read_pretrain_options(o, c.pretrain); });
  detail::section(top, j, "finetune", [&](StrictObject& o) {
    detail::get_enum(o, "attention_mode", c.finetune_attention, parse_attention_mode);
    tasks::read_finetune_options(o, c.finetune);
  });
  detail::section(top, j, "task", [&](StrictObject& o) {
    tasks::read_task_spec(o, c.task);
    o.finish();
  });
  detail::section(top, j, "annotate", [&](StrictObject& o) {
    o.get("threshold", c.annotate_threshold);
    o.finish();
  });
  detail::section(top, j, "gradcheck", [&](StrictObject& o) {
    o.get("tolerance", c.gradcheck_tolerance);
    o.finish();
  });
  detail::section(top, j, "data", [&](StrictObject& o) {
    DataPaths& d = c.data;
    o.get("corpus", d.corpus);
    o.get("vocab", d.vocab);
    o.get("dictionary", d.dictionary);
    o.get("train", d.train);
    o.get("dev", d.dev);
    o.get("test", d.test);
    o.get("checkpoint", d.checkpoint);
    o.get("questions", d.questions);
    o.get("passages", d.passages);
    o.finish();
  });
  top.finish();
  c.pretrain.seed = c.seed;
  c.finetune.seed = c.seed;
  // Fields that failed to parse kept their defaults, so value checks still apply.
  for (const auto& p : c.problems()) problems.push_back(p);
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace luke::cli
