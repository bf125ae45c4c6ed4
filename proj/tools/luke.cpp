// luke: corpus tooling, pretraining, fine-tuning, evaluation, gradient
// checking and entity annotation behind one command line.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error,
// 3 acceptance-check failure.
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "luke/cli/commands.hpp"

namespace {

namespace cli = luke::cli;

enum ExitCode { kOk = 0, kValidation = 1, kRuntime = 2, kAcceptance = 3 };

struct Args {
  std::string config;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  bool mlm_only = false;
  bool no_entities = false;
  std::string attention;
  std::string precision;
  std::string out = ".";
  // Data paths that override the config's "data" section.
  std::string corpus, vocab, dictionary, train, dev, data, checkpoint, questions, passages;
  std::string task;
  double threshold = -1.0;
  std::string resume;
  std::string flip_group;
};

cli::RunConfig build_config(const std::string& command, const Args& a, CLI::App& app) {
  cli::RunConfig c = a.config.empty() ? cli::RunConfig{} : cli::load_config_or_checkpoint(a.config);
  auto set = [](std::string& field, const std::string& value) {
    if (!value.empty()) field = value;
  };
  set(c.data.corpus, a.corpus);
  set(c.data.vocab, a.vocab);
  set(c.data.dictionary, a.dictionary);
  set(c.data.train, a.train);
  set(c.data.dev, a.dev);
  set(c.data.test, a.data);
  set(c.data.checkpoint, a.checkpoint);
  set(c.data.questions, a.questions);
  set(c.data.passages, a.passages);
  if (!a.task.empty()) c.task.variant = luke::tasks::parse_variant(a.task);
  if (a.threshold >= 0.0) c.annotate_threshold = a.threshold;
  cli::Overrides o;
  if (app.count("--seed")) o.seed = a.seed;
  if (app.count("--steps")) o.steps = a.steps;
  o.mlm_only = a.mlm_only;
  o.no_entities = a.no_entities;
  if (!a.attention.empty()) o.attention = luke::parse_attention_mode(a.attention);
  if (!a.precision.empty()) o.precision = cli::parse_precision(a.precision);
  cli::apply(c, o, command);
  return c;
}

cli::Overrides overrides_of(const Args& a) {
  cli::Overrides o;
  if (!a.attention.empty()) o.attention = luke::parse_attention_mode(a.attention);
  if (!a.precision.empty()) o.precision = cli::parse_precision(a.precision);
  return o;
}

int run(const std::string& command, const Args& a, CLI::App& app) {
  const cli::RunConfig c = build_config(command, a, app);
  const std::filesystem::path out = a.out;
  const bool f64 = c.precision == cli::Precision::kF64;
  if (command == "build-vocab") {
    std::cout << cli::cmd_build_vocab(c, out).string() << '\n';
  } else if (command == "build-dict") {
    std::cout << cli::cmd_build_dict(c, out).string() << '\n';
  } else if (command == "pretrain") {
    auto path = f64 ? cli::cmd_pretrain<double>(c, out, a.resume) : cli::cmd_pretrain<float>(c, out, a.resume);
    std::cout << path.string() << '\n';
  } else if (command == "finetune") {
    auto r = f64 ? cli::cmd_finetune<double>(c, out) : cli::cmd_finetune<float>(c, out);
    std::cout << nlohmann::json{{"best_metric", r.best_metric},
                                {"best_step", r.best_step},
                                {"steps_run", r.steps_run},
                                {"stopped_early", r.stopped_early}}
                     .dump()
              << '\n';
  } else if (command == "eval") {
    f64 ? cli::cmd_eval<double>(c, out) : cli::cmd_eval<float>(c, out);
  } else if (command == "gradcheck") {
    cli::cmd_gradcheck(c, overrides_of(a), a.flip_group);
  } else if (command == "annotate") {
    std::cout << cli::cmd_annotate(c, out).string() << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entity-aware transformer: corpus tooling, pretraining, fine-tuning and evaluation"};
  app.fallthrough();
  app.require_subcommand(1, 1);
  Args a;
  app.add_option("--config", a.config, "JSON run config, or a checkpoint whose stored config is reused");
  app.add_option("--seed", a.seed, "Seed for initialization, masking and batching");
  app.add_option("--steps", a.steps, "Training steps (pretrain and finetune)");
  app.add_flag("--mlm-only", a.mlm_only, "Pretrain without the masked-entity loss");
  app.add_flag("--no-entities", a.no_entities, "Feed words only; entity inputs are ignored");
  app.add_option("--attention", a.attention, "Attention mode")->check(CLI::IsMember({"original", "entity_aware"}));
  app.add_option("--precision", a.precision, "Scalar type")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--out", a.out, "Output directory");
  app.add_option("--corpus", a.corpus, "Annotated corpus (JSON lines)");
  app.add_option("--vocab", a.vocab, "Vocabulary file");
  app.add_option("--dictionary", a.dictionary, "Entity dictionary (TSV)");
  app.add_option("--train", a.train, "Task training set (JSON lines)");
  app.add_option("--dev", a.dev, "Task development set (JSON lines)");
  app.add_option("--data", a.data, "Evaluation set (JSON lines)");
  app.add_option("--checkpoint", a.checkpoint, "Input checkpoint");
  app.add_option("--questions", a.questions, "Questions to annotate (JSON lines)");
  app.add_option("--passages", a.passages, "Passages to annotate (JSON lines)");
  app.add_option("--task", a.task, "Task variant")
      ->check(CLI::IsMember({"typing", "relation", "ner", "cloze", "extractive"}));
  app.add_option("--threshold", a.threshold, "Annotation link-probability threshold (default 0.01)")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--resume", a.resume, "Continue pretraining from this checkpoint");
  app.add_option("--flip-group", a.flip_group, "Negate one group's analytic gradient (mutation test)")
      ->group("");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"build-vocab", "Build word and entity vocabularies from a corpus"},
      {"build-dict", "Build the entity-name dictionary from corpus hyperlinks"},
      {"pretrain", "Masked word and entity pretraining"},
      {"finetune", "Fine-tune a task head from a pretraining checkpoint"},
      {"eval", "Predict and score a task dataset"},
      {"gradcheck", "Finite-difference check of every parameter group (64-bit)"},
      {"annotate", "Annotate question/passage pairs with dictionary entities"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, a, app);
  } catch (const cli::AcceptanceFailure& e) {
    std::cerr << "luke " << command << ": " << e.what() << '\n';
    return kAcceptance;
  } catch (const luke::ValidationError& e) {
    std::cerr << "luke " << command << ": " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "luke " << command << ": error: " << e.what() << '\n';
    return kRuntime;
  }
}
