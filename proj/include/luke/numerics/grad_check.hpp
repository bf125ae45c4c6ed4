// Central finite-difference gradient verification.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "luke/numerics/ops.hpp"
#include "luke/numerics/params.hpp"

namespace luke {

class DeterminismError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // 0 checks every component; otherwise a seeded sample per parameter.
  std::size_t max_samples_per_param = 0;
  std::uint64_t seed = 0;
  // Parameters for which this returns false are skipped.
  std::function<bool(const std::string&)> include;
  // Applied to analytic gradients before comparison (fault injection).
  std::function<void(const std::string&, Tensor<double>&)> corrupt;
};

struct ParamCheck {
  std::string name;
  double worst_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double worst_error = 0.0;
  std::string worst_param;
  double tolerance = 0.0;
  bool passed = true;

  std::string summary() const {
    std::ostringstream out;
    for (const auto& p : params) {
      out << p.name << ": worst " << p.worst_error << " over " << p.checked
          << " components";
      if (p.worst_error >= tolerance) out << "  FAIL";
      out << '\n';
    }
    return out.str();
  }
};

// `loss` builds a scalar loss on the given tape from the given parameters and
// must be deterministic. Error per component is
// |analytic - numeric| / max(1, |numeric|).
template <typename LossFn>
GradCheckReport grad_check(LossFn&& loss, ParamStore<double>& params,
                           const GradCheckOptions& options = {}) {
  auto evaluate = [&]() {
    Tape<double> tape(false);
    return loss(tape, std::as_const(params)).value().item();
  };
  const double first = evaluate();
  if (const double second = evaluate(); first != second) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "loss is not deterministic: " << first << " then " << second;
    throw DeterminismError(msg.str());
  }

  std::map<std::string, Tensor<double>> analytic;
  {
    Tape<double> tape(true);
    Var<double> out = loss(tape, std::as_const(params));
    tape.backward(out);
    analytic = tape.parameter_gradients();
  }

  GradCheckReport report;
  report.worst_error = -1.0;
  report.tolerance = options.tolerance;
  std::mt19937_64 rng(options.seed);
  for (auto& [name, value] : params) {
    if (options.include && !options.include(name)) continue;
    Tensor<double> grad = analytic.count(name) ? analytic.at(name)
                                               : Tensor<double>(value.shape());
    if (options.corrupt) options.corrupt(name, grad);

    std::vector<std::size_t> indices(value.size());
    std::iota(indices.begin(), indices.end(), 0);
    if (options.max_samples_per_param && indices.size() > options.max_samples_per_param) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_samples_per_param);
      std::sort(indices.begin(), indices.end());
    }

    ParamCheck check{name};
    for (std::size_t idx : indices) {
      const double saved = value[idx];
      value[idx] = saved + options.step;
      const double plus = evaluate();
      value[idx] = saved - options.step;
      const double minus = evaluate();
      value[idx] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double err = std::abs(grad[idx] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > check.worst_error || check.checked == 0) {
        check.worst_error = err;
        check.worst_index = idx;
        check.analytic = grad[idx];
        check.numeric = numeric;
      }
      ++check.checked;
    }
    if (check.worst_error > report.worst_error) {
      report.worst_error = check.worst_error;
      report.worst_param = name;
    }
    if (check.worst_error >= options.tolerance) report.passed = false;
    report.params.push_back(std::move(check));
  }
  if (report.worst_error < 0) report.worst_error = 0;
  return report;
}

}  // namespace luke
