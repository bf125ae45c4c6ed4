// Fine-tuning with periodic dev evaluation and early stopping, plus task
// checkpoints.
#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "luke/json_util.hpp"
#include "luke/model/checkpoint.hpp"
#include "luke/pretrain/optimizer.hpp"
#include "luke/pretrain/trainer.hpp"
#include "luke/tasks/heads.hpp"
#include "luke/tasks/metrics.hpp"

namespace luke::tasks {

struct FinetuneOptions {
  std::uint64_t steps = 1000;
  // When positive, overrides `steps` with ceil(epochs * train size / batch).
  double epochs = 0.0;
  std::size_t batch_size = 16;
  double peak_lr = 1e-3;
  double warmup_fraction = 0.06;
  pretrain::AdamWConfig adam;
  std::uint64_t eval_interval = 100;
  // Evaluations without improvement before stopping.
  std::size_t patience = 3;
  std::uint64_t log_interval = 10;
  std::uint64_t seed = 0;

  std::uint64_t total_steps(std::size_t train_size) const {
    if (epochs <= 0.0) return steps;
    return static_cast<std::uint64_t>(std::ceil(epochs * double(train_size) / double(batch_size)));
  }

  std::uint64_t warmup_steps(std::size_t train_size) const {
    return static_cast<std::uint64_t>(std::floor(warmup_fraction * double(total_steps(train_size))));
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (steps == 0 && epochs <= 0.0) out.push_back("steps or epochs must be positive");
    if (epochs < 0.0) out.push_back("epochs must be non-negative");
    if (batch_size == 0) out.push_back("batch_size must be positive");
    if (peak_lr < 0.0) out.push_back("peak_lr must be non-negative");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) out.push_back("warmup_fraction must be in [0, 1)");
    if (eval_interval == 0) out.push_back("eval_interval must be positive");
    if (patience == 0) out.push_back("patience must be positive");
    if (log_interval == 0) out.push_back("log_interval must be positive");
    if (adam.eps <= 0) out.push_back("Adam eps must be positive");
    return out;
  }
};

inline nlohmann::json to_json(const FinetuneOptions& o) {
  return {{"steps", o.steps},
          {"epochs", o.epochs},
          {"batch_size", o.batch_size},
          {"peak_lr", o.peak_lr},
          {"warmup_fraction", o.warmup_fraction},
          {"adam_beta1", o.adam.beta1},
          {"adam_beta2", o.adam.beta2},
          {"adam_eps", o.adam.eps},
          {"weight_decay", o.adam.weight_decay},
          {"eval_interval", o.eval_interval},
          {"patience", o.patience},
          {"log_interval", o.log_interval}};
}

inline void read_finetune_options(StrictObject& o, FinetuneOptions& f) {
  o.get("steps", f.steps);
  o.get("epochs", f.epochs);
  o.get("batch_size", f.batch_size);
  o.get("peak_lr", f.peak_lr);
  o.get("warmup_fraction", f.warmup_fraction);
  o.get("adam_beta1", f.adam.beta1);
  o.get("adam_beta2", f.adam.beta2);
  o.get("adam_eps", f.adam.eps);
  o.get("weight_decay", f.adam.weight_decay);
  o.get("eval_interval", f.eval_interval);
  o.get("patience", f.patience);
  o.get("log_interval", f.log_interval);
  o.finish();
}

struct FinetuneRecord {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> dev_metric;
  double wall_ms = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"step", step}, {"lr", lr}, {"loss", loss}, {"wall_ms", wall_ms}};
    if (dev_metric) j["dev_metric"] = *dev_metric;
    return j;
  }
};

struct FinetuneResult {
  double best_metric = -1.0;
  std::uint64_t best_step = 0;
  std::uint64_t steps_run = 0;
  bool stopped_early = false;
};

template <typename T>
std::vector<Prediction> predict_all(const TaskModel<T>& m, const std::vector<TaskExample>& examples,
                                    const Vocabulary& vocab) {
  std::vector<Prediction> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(predict(m, ex, vocab));
  return out;
}

template <typename T>
Scores evaluate_model(const TaskModel<T>& m, const std::vector<TaskExample>& examples, const Vocabulary& vocab) {
  if (examples.empty()) throw ValidationError("cannot evaluate on an empty dataset");
  return evaluate(examples, predict_all(m, examples, vocab), m.spec.variant);
}

// Trains every parameter with AdamW under warmup + linear decay. The dev set
// is scored every eval_interval steps and at the end; the parameters with the
// best primary metric are restored before returning.
template <typename T>
FinetuneResult finetune(TaskModel<T>& m, const std::vector<TaskExample>& train, const std::vector<TaskExample>& dev,
                        const Vocabulary& vocab, const FinetuneOptions& opt,
                        const std::function<void(const FinetuneRecord&)>& on_log = {}) {
  auto problems = opt.problems();
  if (!problems.empty()) {
    std::string msg = "invalid fine-tuning options:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
  if (train.empty()) throw ValidationError("empty training set");
  if (dev.empty()) throw ValidationError("empty development set");
  for (const auto& ex : train) {
    validate(ex, m.spec);
    if (!ex.has_gold) throw ValidationError("training example '" + ex.id + "' has no gold labels");
  }
  const std::uint64_t total = opt.total_steps(train.size());
  const std::uint64_t warmup = opt.warmup_steps(train.size());
  if (total <= warmup) throw ValidationError("fine-tuning run shorter than its warmup");
  pretrain::AdamState<T> adam;
  FinetuneResult result;
  std::optional<ParamStore<T>> best;
  std::size_t since_best = 0;
  auto run_eval = [&](std::uint64_t step) {
    const double metric = evaluate_model(m, dev, vocab).primary();
    if (metric > result.best_metric) {
      result.best_metric = metric;
      result.best_step = step;
      best = m.params;
      since_best = 0;
    } else {
      ++since_best;
    }
    return metric;
  };
  for (std::uint64_t step = 1; step <= total; ++step) {
    const auto start = std::chrono::steady_clock::now();
    const auto batch = pretrain::batch_for_step(opt.seed, step, opt.batch_size, train.size());
    Tape<T> tape;
    std::vector<Var<T>> losses;
    for (std::size_t k = 0; k < batch.index.size(); ++k) {
      std::optional<std::uint64_t> dropout_seed;
      if (m.config.dropout > 0) dropout_seed = (opt.seed * 0x9e3779b97f4a7c15ULL + step) * 1024 + k;
      const TaskExample& ex = train[batch.index[k]];
      losses.push_back(task_loss(task_forward(tape, m, ex, vocab, dropout_seed), ex, m.spec));
    }
    Var<T> loss = losses[0];
    for (std::size_t k = 1; k < losses.size(); ++k) loss = add(loss, losses[k]);
    loss = scale(loss, T(1) / T(losses.size()));
    tape.backward(loss);
    const double lr = pretrain::lr_schedule(step, warmup, total, opt.peak_lr);
    pretrain::adamw_step(m.params, tape.parameter_gradients(), adam, lr, opt.adam);
    result.steps_run = step;
    FinetuneRecord rec{step, lr, double(loss.value().item()), std::nullopt, 0.0};
    if (step % opt.eval_interval == 0 || step == total) rec.dev_metric = run_eval(step);
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (on_log && (step % opt.log_interval == 0 || rec.dev_metric)) on_log(rec);
    if (since_best >= opt.patience) {
      result.stopped_early = step < total;
      break;
    }
  }
  if (best) m.params = std::move(*best);
  return result;
}

inline nlohmann::json task_metadata(const TaskSpec& spec, int head_entity, int tail_entity) {
  nlohmann::json j = to_json(spec);
  j["head_entity"] = head_entity;
  j["tail_entity"] = tail_entity;
  return j;
}

template <typename T>
Checkpoint to_checkpoint(const TaskModel<T>& m, nlohmann::json metadata = nlohmann::json::object()) {
  Checkpoint ck;
  ck.metadata = std::move(metadata);
  nlohmann::json cfg;
  to_json(cfg, m.config);
  ck.metadata["model_config"] = cfg;
  ck.metadata["task"] = task_metadata(m.spec, m.head_entity, m.tail_entity);
  ck.put_all("model/", m.params);
  return ck;
}

template <typename T>
TaskModel<T> task_model_from_checkpoint(const Checkpoint& ck) {
  if (!ck.metadata.contains("task")) throw CheckpointError("checkpoint has no task head");
  TaskModel<T> m;
  m.config = model_config_from_json(ck.metadata.at("model_config"));
  nlohmann::json task = ck.metadata.at("task");
  m.head_entity = task.at("head_entity").get<int>();
  m.tail_entity = task.at("tail_entity").get<int>();
  task.erase("head_entity");
  task.erase("tail_entity");
  std::vector<std::string> problems;
  StrictObject o(task, "task", problems);
  read_task_spec(o, m.spec);
  o.finish();
  if (!problems.empty()) throw CheckpointError("bad task metadata: " + problems[0]);
  m.params = ck.get_all<T>("model/");
  return m;
}

}  // namespace luke::tasks
