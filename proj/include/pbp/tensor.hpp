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

#include <Eigen/Dense>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "pbp/common.hpp"

namespace pbp {

/// Dense n-dimensional array with row-major layout over a flat Eigen vector.
/// 2D views are exposed as Eigen maps so everything matmul-shaped stays an
/// Eigen expression.
template <typename S>
struct TensorT {
  using Flat = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  using MatrixView = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixView =
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  std::vector<Eigen::Index> shape;
  Flat data;

  TensorT() = default;
  explicit TensorT(std::vector<Eigen::Index> shp) : shape(std::move(shp)) {
    data = Flat::Zero(count(shape));
  }

  static Eigen::Index count(const std::vector<Eigen::Index>& shp) {
    Eigen::Index n = 1;
    for (Eigen::Index d : shp) n *= d;
    return n;
  }

  static TensorT zeros(std::vector<Eigen::Index> shp) { return TensorT(std::move(shp)); }

  static TensorT full(std::vector<Eigen::Index> shp, S value) {
    TensorT t(std::move(shp));
    t.data.setConstant(value);
    return t;
  }

  static TensorT scalar(S value) {
    TensorT t({Eigen::Index(1)});
    t.data(0) = value;
    return t;
  }

  static TensorT from_flat(std::vector<Eigen::Index> shp, Flat values) {
    TensorT t;
    t.shape = std::move(shp);
    if (values.size() != count(t.shape))
      throw ShapeError("tensor data does not match shape");
    t.data = std::move(values);
    return t;
  }

  Eigen::Index size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  Eigen::Index dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  bool same_shape(const TensorT& other) const { return shape == other.shape; }

  /// Row-major 2D view; rows*cols must equal the element count.
  MatrixView matrix(Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != size()) throw ShapeError("matrix view size mismatch");
    return MatrixView(data.data(), rows, cols);
  }
  ConstMatrixView matrix(Eigen::Index rows, Eigen::Index cols) const {
    if (rows * cols != size()) throw ShapeError("matrix view size mismatch");
    return ConstMatrixView(data.data(), rows, cols);
  }

  /// View with all leading dims folded into rows and the last dim as columns.
  MatrixView rows_by_last() {
    Eigen::Index cols = shape.empty() ? 1 : shape.back();
    return matrix(size() / cols, cols);
  }
  ConstMatrixView rows_by_last() const {
    Eigen::Index cols = shape.empty() ? 1 : shape.back();
    return matrix(size() / cols, cols);
  }

  bool all_finite() const { return data.allFinite(); }

  template <typename S2>
  TensorT<S2> cast() const {
    TensorT<S2> out;
    out.shape = shape;
    out.data = data.template cast<S2>();
    return out;
  }

  std::string shape_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }
};

using Tensor = TensorT<float>;

template <typename S>
void require_shape(const TensorT<S>& t, const std::vector<Eigen::Index>& shp,
                   const char* who) {
  if (t.shape != shp)
    throw ShapeError(std::string(who) + ": expected shape mismatch, got " +
                     t.shape_string());
}

}  // namespace pbp
