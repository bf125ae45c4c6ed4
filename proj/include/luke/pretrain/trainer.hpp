// Pretraining loop, evaluation and resumable state.
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "luke/corpus/window.hpp"
#include "luke/json_util.hpp"
#include "luke/model/checkpoint.hpp"
#include "luke/pretrain/objective.hpp"
#include "luke/pretrain/optimizer.hpp"

namespace luke::pretrain {

struct PretrainOptions {
  std::uint64_t steps = 2000;
  std::size_t batch_size = 8;
  double peak_lr = 1e-3;
  double phase2_peak_lr = 1e-3;
  std::uint64_t warmup_steps = 100;
  std::uint64_t phase2_warmup_steps = 100;
  double phase1_fraction = 0.5;
  std::vector<std::string> frozen_groups = {"word_embeddings", "layers"};
  AdamWConfig adam;
  MaskingOptions masking;
  bool entity_loss = true;
  std::uint64_t log_interval = 1;
  std::uint64_t checkpoint_interval = 0;  // 0 disables periodic checkpoints
  std::uint64_t seed = 0;

  std::uint64_t phase1_steps() const {
    return static_cast<std::uint64_t>(std::llround(phase1_fraction * double(steps)));
  }

  PhasedSchedule schedule() const {
    return {steps, phase1_steps(), warmup_steps, phase2_warmup_steps, peak_lr, phase2_peak_lr};
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (steps == 0) out.push_back("steps must be positive");
    if (batch_size == 0) out.push_back("batch_size must be positive");
    if (phase1_fraction < 0.0 || phase1_fraction > 1.0) out.push_back("phase1_fraction must be in [0, 1]");
    if (log_interval == 0) out.push_back("log_interval must be positive");
    for (const auto& g : frozen_groups) {
      if (!freeze_groups().count(g)) out.push_back("unknown frozen group '" + g + "'");
    }
    for (double p : {masking.word_probability, masking.entity_probability}) {
      if (p < 0.0 || p > 1.0) out.push_back("mask probabilities must be in [0, 1]");
    }
    if (adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1) {
      out.push_back("Adam betas must be in [0, 1)");
    }
    if (adam.eps <= 0) out.push_back("Adam eps must be positive");
    if (steps > 0) {
      for (auto& p : schedule().problems()) out.push_back(p);
    }
    return out;
  }
};

inline nlohmann::json to_json(const PretrainOptions& o) {
  return {{"steps", o.steps},
          {"batch_size", o.batch_size},
          {"peak_lr", o.peak_lr},
          {"phase2_peak_lr", o.phase2_peak_lr},
          {"warmup_steps", o.warmup_steps},
          {"phase2_warmup_steps", o.phase2_warmup_steps},
          {"phase1_fraction", o.phase1_fraction},
          {"frozen_groups", o.frozen_groups},
          {"adam_beta1", o.adam.beta1},
          {"adam_beta2", o.adam.beta2},
          {"adam_eps", o.adam.eps},
          {"weight_decay", o.adam.weight_decay},
          {"word_mask_probability", o.masking.word_probability},
          {"entity_mask_probability", o.masking.entity_probability},
          {"word_mask_split", o.masking.word_split},
          {"entity_loss", o.entity_loss},
          {"log_interval", o.log_interval},
          {"checkpoint_interval", o.checkpoint_interval}};
}

inline void read_pretrain_options(StrictObject& o, PretrainOptions& p) {
  o.get("steps", p.steps);
  o.get("batch_size", p.batch_size);
  o.get("peak_lr", p.peak_lr);
  o.get("phase2_peak_lr", p.phase2_peak_lr);
  o.get("warmup_steps", p.warmup_steps);
  o.get("phase2_warmup_steps", p.phase2_warmup_steps);
  o.get("phase1_fraction", p.phase1_fraction);
  o.get("frozen_groups", p.frozen_groups);
  o.get("adam_beta1", p.adam.beta1);
  o.get("adam_beta2", p.adam.beta2);
  o.get("adam_eps", p.adam.eps);
  o.get("weight_decay", p.adam.weight_decay);
  o.get("word_mask_probability", p.masking.word_probability);
  o.get("entity_mask_probability", p.masking.entity_probability);
  o.get("word_mask_split", p.masking.word_split);
  o.get("entity_loss", p.entity_loss);
  o.get("log_interval", p.log_interval);
  o.get("checkpoint_interval", p.checkpoint_interval);
  o.finish();
}

struct MetricsRecord {
  std::uint64_t step = 0;
  double lr = 0.0;
  double mlm_loss = 0.0;
  double entity_loss = 0.0;
  double mlm_acc = 0.0;
  double entity_acc = 0.0;
  double wall_ms = 0.0;

  nlohmann::json to_json() const {
    return {{"step", step},         {"lr", lr},           {"mlm_loss", mlm_loss},
            {"entity_loss", entity_loss}, {"mlm_acc", mlm_acc}, {"entity_acc", entity_acc},
            {"wall_ms", wall_ms}};
  }
};

template <typename T>
struct PretrainState {
  ModelConfig config;
  ParamStore<T> params;
  AdamState<T> adam;
  std::uint64_t step = 0;
};

template <typename T>
PretrainState<T> init_state(const ModelConfig& c, std::uint64_t seed) {
  return {c, init_pretrain_model<T>(c, seed), {}, 0};
}

inline model::EncoderInput to_input(const corpus::TrainingSequence& s) {
  return {s.word_ids, s.entity_ids, s.entity_positions, {}, {}};
}

inline std::vector<model::EncoderInput> to_inputs(const std::vector<corpus::AnnotatedDocument>& docs,
                                                  const Vocabulary& vocab,
                                                  std::size_t max_word_length) {
  std::vector<model::EncoderInput> out;
  for (const auto& doc : docs) {
    for (const auto& seq : corpus::window(doc, vocab, max_word_length)) out.push_back(to_input(seq));
  }
  return out;
}

// Visiting order for one epoch.
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x73687566U};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Sequence indices and epochs for a 1-based step. A step's batch depends only
// on (seed, step), which makes resumed runs replay the same data.
struct BatchRef {
  std::vector<std::size_t> index;
  std::vector<std::uint64_t> epoch;
};

inline BatchRef batch_for_step(std::uint64_t seed, std::uint64_t step, std::size_t batch_size,
                               std::size_t n) {
  BatchRef b;
  std::uint64_t cached_epoch = ~0ULL;
  std::vector<std::size_t> order;
  for (std::size_t k = 0; k < batch_size; ++k) {
    const std::uint64_t g = (step - 1) * batch_size + k;
    const std::uint64_t epoch = g / n;
    if (epoch != cached_epoch) {
      order = epoch_order(seed, epoch, n);
      cached_epoch = epoch;
    }
    b.index.push_back(order[g % n]);
    b.epoch.push_back(epoch);
  }
  return b;
}

// Runs steps state.step + 1 .. opt.steps. `on_log` sees every log_interval-th
// step; `on_checkpoint` runs every checkpoint_interval steps.
template <typename T>
void pretrain_loop(PretrainState<T>& st, const std::vector<model::EncoderInput>& data,
                   const PretrainOptions& opt,
                   const std::function<void(const MetricsRecord&)>& on_log = {},
                   const std::function<void(const PretrainState<T>&)>& on_checkpoint = {},
                   std::uint64_t stop_at = 0) {
  auto problems = opt.problems();
  if (!problems.empty()) {
    std::string msg = "invalid pretraining options:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
  if (data.empty()) throw ValidationError("pretraining corpus produced no sequences");
  const PhasedSchedule sched = opt.schedule();
  std::set<std::string> frozen(opt.frozen_groups.begin(), opt.frozen_groups.end());
  LossOptions loss_opt{opt.entity_loss};
  MaskingOptions masking = opt.masking;
  if (!opt.entity_loss || !st.config.use_entity_inputs) masking.entity_probability = 0.0;
  const std::uint64_t last = stop_at ? std::min(stop_at, opt.steps) : opt.steps;
  while (st.step < last) {
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t step = st.step + 1;
    const BatchRef batch = batch_for_step(opt.seed, step, opt.batch_size, data.size());
    std::vector<model::EncoderInput> inputs;
    std::vector<MaskingPlan> plans;
    for (std::size_t k = 0; k < batch.index.size(); ++k) {
      inputs.push_back(data[batch.index[k]]);
      auto rng = masking_rng(opt.seed, batch.index[k], batch.epoch[k]);
      plans.push_back(make_masking_plan(inputs.back(), rng, masking, st.config.word_vocab_size));
    }
    std::optional<std::uint64_t> dropout_seed;
    if (st.config.dropout > 0) dropout_seed = opt.seed * 0x9e3779b97f4a7c15ULL + step;
    Tape<T> tape;
    PretrainLoss<T> loss = pretrain_loss(tape, st.params, st.config, inputs, plans, loss_opt,
                                         dropout_seed);
    const double lr = sched.lr(step);
    if (!loss.degenerate) {
      tape.backward(loss.total);
      const bool phase1 = sched.phase(step) == 1;
      adamw_step(st.params, tape.parameter_gradients(), st.adam, lr, opt.adam,
                 [&](const std::string& name) { return !phase1 || !frozen.count(freeze_group(name)); });
    }
    st.step = step;
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (on_log && step % opt.log_interval == 0) {
      on_log({step, lr, loss.mlm, loss.entity, loss.mlm_accuracy(), loss.entity_accuracy(), ms});
    }
    if (on_checkpoint && opt.checkpoint_interval && step % opt.checkpoint_interval == 0) {
      on_checkpoint(st);
    }
  }
}

struct MaskedAccuracy {
  double mlm = 0.0;
  double entity = 0.0;
  std::size_t mlm_count = 0;
  std::size_t entity_count = 0;
};

// Prediction accuracy at masked positions over `passes` independent maskings
// of every sequence.
template <typename T>
MaskedAccuracy evaluate_masked(const ParamStore<T>& p, const ModelConfig& c,
                               const std::vector<model::EncoderInput>& data,
                               const MaskingOptions& masking, std::uint64_t seed,
                               std::size_t passes = 1) {
  std::size_t mc = 0, mn = 0, ec = 0, en = 0;
  for (std::size_t pass = 0; pass < passes; ++pass) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto rng = masking_rng(seed, i, pass);
      auto plan = make_masking_plan(data[i], rng, masking, c.word_vocab_size);
      Tape<T> tape(false);
      auto loss = pretrain_loss(tape, p, c, {data[i]}, {plan});
      mc += loss.mlm_correct, mn += loss.mlm_count;
      ec += loss.entity_correct, en += loss.entity_count;
    }
  }
  return {mn ? double(mc) / double(mn) : 0.0, en ? double(ec) / double(en) : 0.0, mn, en};
}

template <typename T>
Checkpoint to_checkpoint(const PretrainState<T>& st, nlohmann::json metadata = nlohmann::json::object()) {
  Checkpoint ck;
  ck.metadata = std::move(metadata);
  nlohmann::json cfg;
  to_json(cfg, st.config);
  ck.metadata["model_config"] = cfg;
  ck.metadata["step"] = st.step;
  ck.metadata["adam_steps"] = st.adam.steps;
  ck.put_all("model/", st.params);
  ck.put_all("adam_m/", st.adam.m);
  ck.put_all("adam_v/", st.adam.v);
  return ck;
}

template <typename T>
PretrainState<T> from_checkpoint(const Checkpoint& ck) {
  PretrainState<T> st;
  st.config = model_config_from_json(ck.metadata.at("model_config"));
  st.params = ck.get_all<T>("model/");
  st.adam.m = ck.get_all<T>("adam_m/");
  st.adam.v = ck.get_all<T>("adam_v/");
  st.adam.steps = ck.metadata.value("adam_steps", std::map<std::string, std::uint64_t>{});
  st.step = ck.metadata.value("step", std::uint64_t{0});
  if (st.params.size() == 0) throw CheckpointError("checkpoint holds no model parameters");
  return st;
}

}  // namespace luke::pretrain
