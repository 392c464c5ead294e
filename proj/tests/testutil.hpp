// Shared helpers for the test suites: independent oracles (naive convolution,
// per-point set IoU) and finite-difference utilities. Everything here is
// deliberately written against the plain definitions, not the library's
// implementation paths.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "pbp/common.hpp"
#include "pbp/tensor.hpp"

namespace testutil {

inline double central_difference(const std::function<double(double)>& f, double x,
                                 double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_error(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

template <typename S>
pbp::TensorT<S> random_tensor(std::vector<Eigen::Index> shape, pbp::RandomEngine& eng,
                              double lo = -1.0, double hi = 1.0) {
  pbp::TensorT<S> t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i)
    t.data(i) = static_cast<S>(pbp::uniform_real(eng, lo, hi));
  return t;
}

// Nested-loop cross-correlation oracle, NHWC, zero padding.
template <typename S>
pbp::TensorT<S> naive_conv2d(const pbp::TensorT<S>& x, const pbp::TensorT<S>& k,
                             int stride, bool same_pad) {
  const Eigen::Index B = x.dim(0), H = x.dim(1), W = x.dim(2), Cin = x.dim(3);
  const Eigen::Index Kh = k.dim(0), Kw = k.dim(1), Cout = k.dim(3);
  const Eigen::Index Ph = same_pad ? (Kh - 1) / 2 : 0;
  const Eigen::Index Pw = same_pad ? (Kw - 1) / 2 : 0;
  const Eigen::Index Ho = (H + 2 * Ph - Kh) / stride + 1;
  const Eigen::Index Wo = (W + 2 * Pw - Kw) / stride + 1;
  pbp::TensorT<S> out({B, Ho, Wo, Cout});
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index oi = 0; oi < Ho; ++oi)
      for (Eigen::Index oj = 0; oj < Wo; ++oj)
        for (Eigen::Index co = 0; co < Cout; ++co) {
          S acc = S(0);
          for (Eigen::Index ki = 0; ki < Kh; ++ki)
            for (Eigen::Index kj = 0; kj < Kw; ++kj)
              for (Eigen::Index ci = 0; ci < Cin; ++ci) {
                const Eigen::Index ii = oi * stride + ki - Ph;
                const Eigen::Index jj = oj * stride + kj - Pw;
                if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                acc += x.data(((b * H + ii) * W + jj) * Cin + ci) *
                       k.data(((ki * Kw + kj) * Cin + ci) * Cout + co);
              }
          out.data(((b * Ho + oi) * Wo + oj) * Cout + co) = acc;
        }
  return out;
}

// Brute-force per-point set IoU: counts membership per class directly.
struct SetIou {
  bool defined;
  double value;
};

inline SetIou set_class_iou(const std::vector<int>& pred,
                            const std::vector<int>& truth, int c) {
  std::uint64_t tp = 0, t = 0, p = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool in_t = truth[i] == c, in_p = pred[i] == c;
    if (in_t) ++t;
    if (in_p) ++p;
    if (in_t && in_p) ++tp;
  }
  if (t + p == 0) return {false, 0.0};
  return {true, static_cast<double>(tp) / static_cast<double>(t + p - tp)};
}

inline double set_mean_iou(const std::vector<int>& pred,
                           const std::vector<int>& truth, int num_classes) {
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < num_classes; ++c) {
    const SetIou iou = set_class_iou(pred, truth, c);
    if (iou.defined) {
      sum += iou.value;
      ++defined;
    }
  }
  return sum / defined;
}

}  // namespace testutil
