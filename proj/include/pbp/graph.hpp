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

#include <functional>
#include <utility>
#include <vector>

#include "pbp/tensor.hpp"

namespace pbp {

/// Reverse-mode tape. Ops execute eagerly and append one record each, so the
/// record list is already topologically ordered; backward() walks it in exact
/// reverse order, accumulating cotangents into `grad` slots.
template <typename S>
class GraphT {
 public:
  using Tensor = TensorT<S>;
  using ValueId = int;

  /// Registers a leaf value. Only values reachable from a requires_grad leaf
  /// carry gradient storage.
  ValueId input(Tensor value, bool requires_grad = false) {
    values_.push_back(std::move(value));
    grads_.emplace_back();
    requires_.push_back(requires_grad);
    return static_cast<ValueId>(values_.size() - 1);
  }

  /// Appends an op record: its output value plus the backward thunk. The
  /// thunk reads grad(output) and accumulates into the op's inputs.
  ValueId emit(Tensor output, const std::vector<ValueId>& inputs,
               std::function<void(GraphT&, ValueId)> backward) {
    bool req = false;
    for (ValueId id : inputs) req = req || requires_[static_cast<std::size_t>(id)];
    ValueId out = input(std::move(output), req);
    if (req) records_.push_back({out, std::move(backward)});
    return out;
  }

  const Tensor& value(ValueId id) const { return values_[static_cast<std::size_t>(id)]; }
  bool requires_grad(ValueId id) const { return requires_[static_cast<std::size_t>(id)]; }

  /// Gradient slot, zero-initialized to the value's shape on first touch.
  Tensor& grad(ValueId id) {
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.size() == 0) g = Tensor::zeros(values_[static_cast<std::size_t>(id)].shape);
    return g;
  }

  void accumulate_grad(ValueId id, const Tensor& delta) {
    if (!requires_grad(id)) return;
    Tensor& g = grad(id);
    if (!g.same_shape(delta)) throw ShapeError("gradient shape mismatch");
    g.data += delta.data;
  }

  /// Seeds d(root)/d(root) = 1 and replays the tape backwards. root must be
  /// scalar-shaped.
  void backward(ValueId root) {
    if (value(root).size() != 1)
      throw ShapeError("backward root must be a scalar");
    if (!requires_grad(root)) return;  // nothing reachable requires grad
    grad(root).data.setOnes();
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (grads_[static_cast<std::size_t>(it->output)].size() == 0) continue;
      it->backward(*this, it->output);
    }
  }

  std::size_t num_records() const { return records_.size(); }

 private:
  struct Record {
    ValueId output;
    std::function<void(GraphT&, ValueId)> backward;
  };

  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  std::vector<bool> requires_;
  std::vector<Record> records_;
};

using Graph = GraphT<float>;

}  // namespace pbp
