#pragma once

#include <map>
#include <string>
#include <vector>

#include "luke/numerics/tape.hpp"
#include "luke/numerics/tensor.hpp"

namespace luke {

// Named collection of learnable tensors. Iteration order is the sorted name
// order, which fixes checkpoint layout and optimizer traversal.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    auto [it, inserted] = params_.emplace(name, std::move(value));
    if (!inserted) throw ValidationError("parameter '" + name + "' already exists");
    return it->second;
  }

  void set(const std::string& name, Tensor<T> value) { params_[name] = std::move(value); }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  void erase(const std::string& name) { params_.erase(name); }

  Tensor<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter '" + name + "'");
    return it->second;
  }

  Var<T> bind(Tape<T>& tape, const std::string& name) const {
    return tape.parameter(name, at(name));
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : params_) out.push_back(name);
    return out;
  }

  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, t] : params_) out.add(name, t.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.params_ == b.params_;
  }

 private:
  Map params_;
};

}  // namespace luke
