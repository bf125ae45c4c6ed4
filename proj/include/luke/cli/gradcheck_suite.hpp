// Full-model finite-difference suite: the pretraining loss over every
// parameter in both attention modes, plus the loss of each task head.
#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "luke/corpus/vocabulary.hpp"
#include "luke/model/model.hpp"
#include "luke/numerics/grad_check.hpp"
#include "luke/pretrain/objective.hpp"
#include "luke/pretrain/trainer.hpp"
#include "luke/synth/world.hpp"
#include "luke/tasks/heads.hpp"
#include "luke/tasks/synth.hpp"

namespace luke::cli {

using corpus::Vocabulary;

struct GradSuiteOptions {
  bool original = true;
  bool entity_aware = true;
  bool tasks = true;
  double tolerance = 1e-5;
  double step = 1e-5;
  std::uint64_t seed = 0;
  // Group whose analytic gradient is negated before comparison (mutation test).
  std::string flip_group;
};

struct GroupResult {
  std::string section;
  std::string group;
  double worst_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
  bool passed = true;
};

struct GradSuiteReport {
  std::vector<GroupResult> groups;
  double tolerance = 0.0;
  bool passed = true;

  std::vector<std::string> failing() const {
    std::vector<std::string> out;
    for (const auto& g : groups) {
      if (!g.passed) out.push_back(g.section + ":" + g.group);
    }
    return out;
  }

  bool covers(const std::string& section, const std::string& group) const {
    return std::any_of(groups.begin(), groups.end(), [&](const GroupResult& g) {
      return g.section == section && g.group == group && g.checked > 0;
    });
  }

  double worst_error() const {
    double w = 0.0;
    for (const auto& g : groups) w = std::max(w, g.worst_error);
    return w;
  }

  std::string summary() const {
    std::ostringstream out;
    for (const auto& g : groups) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3e", g.worst_error);
      out << g.section << "  " << g.group << "  worst " << buf << "  (" << g.checked << " components, "
          << g.worst_param << ")  " << (g.passed ? "ok" : "FAIL") << '\n';
    }
    return out.str();
  }
};

// D=8, 2 layers, 2 heads over the vocabulary of a 12-entity synthetic world.
inline ModelConfig gradcheck_config(const Vocabulary& vocab, AttentionMode mode) {
  ModelConfig c;
  c.hidden_size = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.head_size = 4;
  c.entity_embedding_size = 4;
  c.word_vocab_size = vocab.word_size();
  c.entity_vocab_size = vocab.entity_size();
  c.max_positions = 40;
  c.ffn_multiplier = 2;
  c.init_std = 0.5;
  c.attention_mode = mode;
  return c;
}

namespace detail {

inline void add_noise(Tensor<double>& t, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += dist(rng);
}

// Moves every parameter off values where gradients vanish or coincide: biases
// and gains leave their constant init, and the three extra query matrices
// stop being copies of Q.
inline void perturb(ParamStore<double>& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [name, t] : p) {
    const std::string g = model::param_group(name);
    if (model::is_bias_or_norm(name) || name == "mlm.bias" || name == "entity_head.bias") {
      add_noise(t, rng, 0.1);
    } else if (g == "Q_w2e" || g == "Q_e2w" || g == "Q_e2e") {
      add_noise(t, rng, 0.3);
    }
  }
}

inline void collect(GradSuiteReport& out, const std::string& section, const GradCheckReport& r,
                    const std::function<std::string(const std::string&)>& group_of) {
  std::map<std::string, GroupResult> groups;
  std::vector<std::string> order;
  for (const auto& p : r.params) {
    const std::string g = group_of(p.name);
    auto [it, fresh] = groups.try_emplace(g, GroupResult{section, g});
    if (fresh) order.push_back(g);
    GroupResult& gr = it->second;
    if (p.worst_error >= gr.worst_error || gr.checked == 0) {
      gr.worst_error = p.worst_error;
      gr.worst_param = p.name;
    }
    gr.checked += p.checked;
    gr.passed = gr.passed && p.worst_error < r.tolerance;
  }
  for (const auto& g : order) {
    out.passed = out.passed && groups[g].passed;
    out.groups.push_back(groups[g]);
  }
}

inline GradCheckOptions check_options(const GradSuiteOptions& o) {
  GradCheckOptions g;
  g.step = o.step;
  g.tolerance = o.tolerance;
  g.seed = o.seed;
  if (!o.flip_group.empty()) {
    g.corrupt = [flip = o.flip_group](const std::string& name, Tensor<double>& grad) {
      if (model::param_group(name) != flip) return;
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = -grad[i];
    };
  }
  return g;
}

}  // namespace detail

// Two windowed sentences with a fixed masking that covers replaced, random and
// kept words plus masked and unmasked entities.
struct GradSuiteData {
  synth::World world{12};
  Vocabulary vocab;
  std::vector<model::EncoderInput> inputs;
  std::vector<pretrain::MaskingPlan> plans;

  GradSuiteData() {
    auto docs = synth::make_corpus(world, 12, 1);
    vocab = corpus::build_vocab(docs, 1000, 1000);
    auto all = pretrain::to_inputs(docs, vocab, 40);
    inputs = {all.at(0), all.at(1)};
    for (const auto& in : inputs) {
      pretrain::MaskingPlan plan;
      const int m = static_cast<int>(in.word_ids.size());
      plan.words.push_back({1, in.word_ids[1], pretrain::WordAction::kMask, Vocabulary::kMaskWord});
      plan.words.push_back({m - 3, in.word_ids[m - 3], pretrain::WordAction::kRandom, Vocabulary::kNumWordSpecials});
      plan.words.push_back({m - 2, in.word_ids[m - 2], pretrain::WordAction::kKeep, in.word_ids[m - 2]});
      plan.entities.push_back({0, in.entity_ids.at(0)});
      plans.push_back(plan);
    }
  }
};

inline void check_pretrain(GradSuiteReport& out, const GradSuiteData& data, AttentionMode mode,
                           const GradSuiteOptions& o) {
  const ModelConfig c = gradcheck_config(data.vocab, mode);
  auto p = pretrain::init_pretrain_model<double>(c, o.seed + 11);
  detail::perturb(p, o.seed + 12);
  auto report = grad_check(
      [&](Tape<double>& tape, const ParamStore<double>& ps) {
        return pretrain::pretrain_loss(tape, ps, c, data.inputs, data.plans).total;
      },
      p, detail::check_options(o));
  detail::collect(out, "pretrain/" + to_string(mode), report,
                  [](const std::string& n) { return model::param_group(n); });
}

// Task heads are checked on top of an entity-aware encoder; the entity table
// is included because relation's [HEAD]/[TAIL] rows live there.
inline void check_task(GradSuiteReport& out, const GradSuiteData& data, tasks::Variant v,
                       const GradSuiteOptions& o) {
  const ModelConfig c = gradcheck_config(data.vocab, AttentionMode::kOriginal);
  auto pretrained = pretrain::init_pretrain_model<double>(c, o.seed + 21);
  auto m = tasks::init_task_model<double>(pretrained, c, tasks::synth_spec(v), AttentionMode::kEntityAware,
                                          true, o.seed + 22);
  detail::perturb(m.params, o.seed + 23);
  std::vector<tasks::TaskExample> exs = {tasks::synth_example(data.world, v, o.seed + 9, 0),
                                         tasks::synth_example(data.world, v, o.seed + 9, 1)};
  GradCheckOptions opts = detail::check_options(o);
  opts.include = [](const std::string& n) { return n.rfind("task.", 0) == 0 || n == model::names::kEntity; };
  // Outlives each tape built by the check, which binds to its tensors.
  tasks::TaskModel<double> view = m;
  auto report = grad_check(
      [&](Tape<double>& tape, const ParamStore<double>& ps) {
        view.params = ps;
        Var<double> total = tasks::task_loss(tasks::task_forward(tape, view, exs[0], data.vocab), exs[0], m.spec);
        return add(total, tasks::task_loss(tasks::task_forward(tape, view, exs[1], data.vocab), exs[1], m.spec));
      },
      m.params, opts);
  const std::string head = "task:" + tasks::to_string(v);
  detail::collect(out, "task/" + tasks::to_string(v), report,
                  [head](const std::string& n) { return n.rfind("task.", 0) == 0 ? head : model::param_group(n); });
}

inline GradSuiteReport run_gradcheck_suite(const GradSuiteOptions& o = {}) {
  GradSuiteReport out;
  out.tolerance = o.tolerance;
  GradSuiteData data;
  if (o.original) check_pretrain(out, data, AttentionMode::kOriginal, o);
  if (o.entity_aware) check_pretrain(out, data, AttentionMode::kEntityAware, o);
  if (o.tasks) {
    for (auto v : tasks::all_variants()) check_task(out, data, v, o);
  }
  return out;
}

}  // namespace luke::cli
