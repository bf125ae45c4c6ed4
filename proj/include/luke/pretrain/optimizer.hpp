// AdamW, warmup + linear decay, and parameter freezing.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "luke/model/model.hpp"
#include "luke/numerics/params.hpp"

namespace luke::pretrain {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.01;
};

// Moments mirror their parameter's shape. Step counts are per parameter, so a
// tensor unfrozen mid-run starts its bias correction from its first update.
template <typename T>
struct AdamState {
  ParamStore<T> m;
  ParamStore<T> v;
  std::map<std::string, std::uint64_t> steps;
};

// Updates every parameter present in `grads` for which `trainable` holds.
// Other parameters and their moments are untouched. Weight decay is decoupled
// and skipped for biases and layer-norm parameters.
template <typename T>
void adamw_step(ParamStore<T>& params, const std::map<std::string, Tensor<T>>& grads,
                AdamState<T>& state, double lr, const AdamWConfig& cfg,
                const std::function<bool(const std::string&)>& trainable = {}) {
  for (const auto& [name, g] : grads) {
    if (trainable && !trainable(name)) continue;
    Tensor<T>& w = params.at(name);
    if (g.shape() != w.shape()) {
      throw DimensionError("adamw_step: gradient " + shape_str(g.shape()) + " for parameter '" +
                           name + "' of shape " + shape_str(w.shape()));
    }
    if (!state.m.contains(name)) {
      state.m.add(name, Tensor<T>(w.shape()));
      state.v.add(name, Tensor<T>(w.shape()));
    }
    Tensor<T>& m = state.m.at(name);
    Tensor<T>& v = state.v.at(name);
    if (m.shape() != w.shape()) {
      throw DimensionError("adamw_step: moment shape mismatch for '" + name + "'");
    }
    const std::uint64_t t = ++state.steps[name];
    const double c1 = 1.0 - std::pow(cfg.beta1, double(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(t));
    const double decay = model::is_bias_or_norm(name) ? 0.0 : cfg.weight_decay;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = double(g[i]);
      const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = T(mi);
      v[i] = T(vi);
      const double update = (mi / c1) / (std::sqrt(vi / c2) + cfg.eps) + decay * double(w[i]);
      w[i] = T(double(w[i]) - lr * update);
    }
  }
}

// Linear warmup from 0 to `peak` over `warmup` steps, then linear decay to 0
// at `total`.
inline double lr_schedule(std::uint64_t step, std::uint64_t warmup, std::uint64_t total,
                          double peak) {
  if (total <= warmup) {
    throw ValidationError("lr schedule: total steps (" + std::to_string(total) +
                          ") must exceed warmup steps (" + std::to_string(warmup) + ")");
  }
  if (step > total) throw ValidationError("lr schedule: step beyond total");
  if (step <= warmup && warmup > 0) return peak * double(step) / double(warmup);
  return peak * double(total - step) / double(total - warmup);
}

// Groups that can be named in a frozen-set list.
inline std::string freeze_group(const std::string& name) {
  const std::string g = model::param_group(name);
  if (g == "A" || g == "C") return "word_embeddings";
  if (g == "B" || g == "U" || g == "Dpos" || g == "e_type") return "entity_embeddings";
  if (name.rfind("embeddings.ln", 0) == 0) return "embedding_ln";
  if (name.rfind("layers.", 0) == 0) return "layers";
  if (name.rfind("mlm.", 0) == 0) return "mlm_head";
  if (name.rfind("entity_head.", 0) == 0) return "entity_head";
  return g;
}

inline const std::set<std::string>& freeze_groups() {
  static const std::set<std::string> g = {"word_embeddings", "entity_embeddings", "embedding_ln",
                                          "layers", "mlm_head", "entity_head"};
  return g;
}

// Two schedules back to back: phase 1 trains only the non-frozen parameters,
// phase 2 trains everything. Steps are 1-based.
struct PhasedSchedule {
  std::uint64_t total = 0;
  std::uint64_t phase1_steps = 0;
  std::uint64_t warmup1 = 0;
  std::uint64_t warmup2 = 0;
  double peak1 = 0.0;
  double peak2 = 0.0;

  int phase(std::uint64_t step) const { return step <= phase1_steps ? 1 : 2; }

  double lr(std::uint64_t step) const {
    if (step == 0 || step > total) throw ValidationError("step outside the schedule");
    if (step <= phase1_steps) return lr_schedule(step, warmup1, phase1_steps, peak1);
    return lr_schedule(step - phase1_steps, warmup2, total - phase1_steps, peak2);
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (phase1_steps > total) out.push_back("phase 1 is longer than the run");
    if (phase1_steps > 0 && phase1_steps <= warmup1) {
      out.push_back("phase 1 (" + std::to_string(phase1_steps) + " steps) must exceed its warmup (" +
                    std::to_string(warmup1) + ")");
    }
    if (total > phase1_steps && total - phase1_steps <= warmup2) {
      out.push_back("phase 2 (" + std::to_string(total - phase1_steps) +
                    " steps) must exceed its warmup (" + std::to_string(warmup2) + ")");
    }
    if (peak1 < 0 || peak2 < 0) out.push_back("peak learning rates must be non-negative");
    return out;
  }
};

}  // namespace luke::pretrain
