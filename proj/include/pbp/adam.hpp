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

#include <cmath>
#include <cstdint>

#include "pbp/tensor.hpp"

namespace pbp {

/// First/second moment estimates for one parameter tensor.
template <typename S>
struct AdamStateT {
  TensorT<S> m;
  TensorT<S> v;
  std::int64_t t = 0;

  static AdamStateT zeros_like(const TensorT<S>& param) {
    AdamStateT st;
    st.m = TensorT<S>::zeros(param.shape);
    st.v = TensorT<S>::zeros(param.shape);
    return st;
  }
};

using AdamState = AdamStateT<float>;

/// Standard Adam step with bias correction; updates params and state in place.
template <typename S>
void adam_update(TensorT<S>& params, const TensorT<S>& grads, AdamStateT<S>& state,
                 S lr, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8)) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) ||
      !params.same_shape(state.v))
    throw ShapeError("adam_update: shape mismatch");
  state.t += 1;
  state.m.data = beta1 * state.m.data + (S(1) - beta1) * grads.data;
  state.v.data.array() =
      beta2 * state.v.data.array() + (S(1) - beta2) * grads.data.array().square();
  const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1),
                                               static_cast<double>(state.t)));
  const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2),
                                               static_cast<double>(state.t)));
  params.data.array() -=
      lr * (state.m.data.array() / bc1) /
      ((state.v.data.array() / bc2).sqrt() + eps);
}

}  // namespace pbp
