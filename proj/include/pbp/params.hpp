/*
Copyright 2026 the pbpnet authors
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at
    http://www.apache.org/licenses/LICENSE-2.0
Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <map>
#include <string>
#include <vector>

#include "pbp/common.hpp"
#include "pbp/graph.hpp"
#include "pbp/tensor.hpp"

namespace pbp {

/// Named parameter tensors in a stable registration order (the checkpoint
/// record order). Gradient buffers live beside the values.
template <typename S>
struct ParamStoreT {
  struct Entry {
    std::string name;
    TensorT<S> value;
    TensorT<S> grad;
  };

  std::vector<Entry> entries;
  std::map<std::string, std::size_t> index;

  Entry& add(const std::string& name, TensorT<S> value) {
    if (index.count(name)) throw InvalidInputError("duplicate parameter " + name);
    index[name] = entries.size();
    Entry e;
    e.name = name;
    e.grad = TensorT<S>::zeros(value.shape);
    e.value = std::move(value);
    entries.push_back(std::move(e));
    return entries.back();
  }

  bool has(const std::string& name) const { return index.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw InvalidInputError("unknown parameter " + name);
    return entries[it->second];
  }
  const Entry& at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw InvalidInputError("unknown parameter " + name);
    return entries[it->second];
  }

  void zero_grads() {
    for (auto& e : entries) e.grad.data.setZero();
  }

  std::size_t size() const { return entries.size(); }

  template <typename S2>
  ParamStoreT<S2> cast() const {
    ParamStoreT<S2> out;
    for (const auto& e : entries) out.add(e.name, e.value.template cast<S2>());
    return out;
  }
};

using ParamStore = ParamStoreT<float>;

/// Uniform fan-in init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename S>
TensorT<S> fan_in_init(std::vector<Eigen::Index> shape, Eigen::Index fan_in,
                       RandomEngine& eng) {
  TensorT<S> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < t.size(); ++i)
    t.data(i) = static_cast<S>(uniform_real(eng, -bound, bound));
  return t;
}

/// Binds store entries to graph leaves on first use, so one forward pass
/// references each parameter exactly once; pull_grads scales and copies the
/// leaf gradients back out.
template <typename S>
class ParamBinding {
 public:
  ParamBinding(GraphT<S>& g, const ParamStoreT<S>& store, bool requires_grad = true)
      : g_(g), store_(store), requires_grad_(requires_grad) {}

  int operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const auto& e = store_.at(name);
    int id = g_.input(e.value, requires_grad_);
    bound_[name] = id;
    order_.emplace_back(name, id);
    return id;
  }

  /// grad[name] += scale * d(loss)/d(param) for every bound parameter.
  void pull_grads(ParamStoreT<S>& store, S scale = S(1)) {
    for (const auto& [name, id] : order_) {
      auto& e = store.at(name);
      e.grad.data += scale * g_.grad(id).data;
    }
  }

  /// (name, leaf id) pairs in first-use order.
  const std::vector<std::pair<std::string, int>>& bound() const { return order_; }

 private:
  GraphT<S>& g_;
  const ParamStoreT<S>& store_;
  bool requires_grad_ = true;
  std::map<std::string, int> bound_;
  std::vector<std::pair<std::string, int>> order_;
};

}  // namespace pbp
