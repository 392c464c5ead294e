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
#include <cmath>
#include <memory>
#include <vector>

#include "pbp/graph.hpp"
#include "pbp/planeops.hpp"
#include "pbp/pointcloud.hpp"
#include "pbp/tensor.hpp"

// Differentiable tensor ops recorded on GraphT. Each op runs its forward pass
// eagerly and tapes a VJP thunk; shapes are validated up front so backward
// can assume them.

namespace pbp {

enum class Pad { same, valid };

namespace opdetail {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Index nhwc(Eigen::Index H, Eigen::Index W, Eigen::Index C,
                         Eigen::Index b, Eigen::Index i, Eigen::Index j,
                         Eigen::Index c) {
  return ((b * H + i) * W + j) * C + c;
}

}  // namespace opdetail

// ---------------------------------------------------------------------------
// dense: y = x * w + b, x: {M, Fin}, w: {Fin, Fout}, b: {Fout}
// ---------------------------------------------------------------------------
template <typename S>
int dense(GraphT<S>& g, int x, int w, int b) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  const auto& bv = g.value(b);
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 ||
      xv.dim(1) != wv.dim(0) || wv.dim(1) != bv.dim(0))
    throw ShapeError("dense: incompatible shapes " + xv.shape_string() + " " +
                     wv.shape_string() + " " + bv.shape_string());
  const Eigen::Index M = xv.dim(0), Fin = xv.dim(1), Fout = wv.dim(1);

  TensorT<S> out({M, Fout});
  out.matrix(M, Fout).noalias() = xv.matrix(M, Fin) * wv.matrix(Fin, Fout);
  out.matrix(M, Fout).rowwise() += bv.data.transpose();

  return g.emit(std::move(out), {x, w, b}, [=](GraphT<S>& gr, int outid) {
    const auto& go = gr.grad(outid);
    auto gm = go.matrix(M, Fout);
    if (gr.requires_grad(x)) {
      TensorT<S> dx({M, Fin});
      dx.matrix(M, Fin).noalias() = gm * gr.value(w).matrix(Fin, Fout).transpose();
      gr.accumulate_grad(x, dx);
    }
    if (gr.requires_grad(w)) {
      TensorT<S> dw({Fin, Fout});
      dw.matrix(Fin, Fout).noalias() =
          gr.value(x).matrix(M, Fin).transpose() * gm;
      gr.accumulate_grad(w, dw);
    }
    if (gr.requires_grad(b)) {
      TensorT<S> db({Fout});
      db.data = gm.colwise().sum().transpose();
      gr.accumulate_grad(b, db);
    }
  });
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------
template <typename S>
int relu(GraphT<S>& g, int x) {
  const auto& xv = g.value(x);
  TensorT<S> out;
  out.shape = xv.shape;
  out.data = xv.data.cwiseMax(S(0));
  return g.emit(std::move(out), {x}, [=](GraphT<S>& gr, int outid) {
    if (!gr.requires_grad(x)) return;
    TensorT<S> dx;
    dx.shape = gr.value(x).shape;
    // derivative at exactly 0 is defined as 0
    dx.data = (gr.value(x).data.array() > S(0))
                  .select(gr.grad(outid).data.array(), S(0));
    gr.accumulate_grad(x, dx);
  });
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, NHWC x {B,H,W,Cin} with k {Kh,Kw,Cin,Cout}.
// Zero padding; `same` keeps H/stride, `valid` shrinks. Implemented as
// im2col + GEMM; the column matrix is retained for the kernel VJP.
// ---------------------------------------------------------------------------
template <typename S>
int conv2d(GraphT<S>& g, int x, int k, int stride = 1, Pad pad = Pad::same) {
  const auto& xv = g.value(x);
  const auto& kv = g.value(k);
  if (xv.rank() != 4 || kv.rank() != 4 || xv.dim(3) != kv.dim(2))
    throw ShapeError("conv2d: incompatible shapes " + xv.shape_string() + " " +
                     kv.shape_string());
  if (stride < 1) throw InvalidInputError("conv2d: stride must be >= 1");
  const Eigen::Index B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), Cin = xv.dim(3);
  const Eigen::Index Kh = kv.dim(0), Kw = kv.dim(1), Cout = kv.dim(3);
  if (pad == Pad::same && (Kh % 2 == 0 || Kw % 2 == 0))
    throw InvalidInputError("conv2d: same padding needs odd kernel dims");
  const Eigen::Index Ph = pad == Pad::same ? (Kh - 1) / 2 : 0;
  const Eigen::Index Pw = pad == Pad::same ? (Kw - 1) / 2 : 0;
  const Eigen::Index Ho = (H + 2 * Ph - Kh) / stride + 1;
  const Eigen::Index Wo = (W + 2 * Pw - Kw) / stride + 1;
  if (Ho < 1 || Wo < 1) throw ShapeError("conv2d: output would be empty");
  const Eigen::Index KKC = Kh * Kw * Cin;

  auto col = std::make_shared<opdetail::Mat<S>>(B * Ho * Wo, KKC);
  {
    auto xm = xv.matrix(B * H * W, Cin);  // rows are (b,i,j)
    Eigen::Index r = 0;
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index oi = 0; oi < Ho; ++oi)
        for (Eigen::Index oj = 0; oj < Wo; ++oj, ++r) {
          Eigen::Index cc = 0;
          for (Eigen::Index ki = 0; ki < Kh; ++ki)
            for (Eigen::Index kj = 0; kj < Kw; ++kj, cc += Cin) {
              const Eigen::Index ii = oi * stride + ki - Ph;
              const Eigen::Index jj = oj * stride + kj - Pw;
              if (ii < 0 || ii >= H || jj < 0 || jj >= W)
                col->block(r, cc, 1, Cin).setZero();
              else
                col->block(r, cc, 1, Cin) = xm.row((b * H + ii) * W + jj);
            }
        }
  }

  TensorT<S> out({B, Ho, Wo, Cout});
  out.matrix(B * Ho * Wo, Cout).noalias() = (*col) * kv.matrix(KKC, Cout);

  return g.emit(std::move(out), {x, k}, [=](GraphT<S>& gr, int outid) {
    auto gm = gr.grad(outid).matrix(B * Ho * Wo, Cout);
    if (gr.requires_grad(k)) {
      TensorT<S> dk({Kh, Kw, Cin, Cout});
      dk.matrix(KKC, Cout).noalias() = col->transpose() * gm;
      gr.accumulate_grad(k, dk);
    }
    if (gr.requires_grad(x)) {
      TensorT<S> dx({B, H, W, Cin});
      auto dxm = dx.matrix(B * H * W, Cin);
      opdetail::Mat<S> dcol = gm * gr.value(k).matrix(KKC, Cout).transpose();
      Eigen::Index r = 0;
      for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index oi = 0; oi < Ho; ++oi)
          for (Eigen::Index oj = 0; oj < Wo; ++oj, ++r) {
            Eigen::Index cc = 0;
            for (Eigen::Index ki = 0; ki < Kh; ++ki)
              for (Eigen::Index kj = 0; kj < Kw; ++kj, cc += Cin) {
                const Eigen::Index ii = oi * stride + ki - Ph;
                const Eigen::Index jj = oj * stride + kj - Pw;
                if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                dxm.row((b * H + ii) * W + jj) += dcol.block(r, cc, 1, Cin);
              }
          }
      gr.accumulate_grad(x, dx);
    }
  });
}

// Per-channel bias over NHWC maps.
template <typename S>
int bias_nhwc(GraphT<S>& g, int x, int b) {
  const auto& xv = g.value(x);
  const auto& bv = g.value(b);
  if (xv.rank() != 4 || bv.rank() != 1 || xv.dim(3) != bv.dim(0))
    throw ShapeError("bias_nhwc: incompatible shapes");
  const Eigen::Index rows = xv.size() / xv.dim(3), C = xv.dim(3);
  TensorT<S> out;
  out.shape = xv.shape;
  out.data = xv.data;
  out.matrix(rows, C).rowwise() += bv.data.transpose();
  return g.emit(std::move(out), {x, b}, [=](GraphT<S>& gr, int outid) {
    const auto& go = gr.grad(outid);
    if (gr.requires_grad(x)) gr.accumulate_grad(x, go);
    if (gr.requires_grad(b)) {
      TensorT<S> db({C});
      db.data = go.matrix(rows, C).colwise().sum().transpose();
      gr.accumulate_grad(b, db);
    }
  });
}

// ---------------------------------------------------------------------------
// maxpool2d: 2x2 window, stride 2; gradient routes to the argmax (first
// index on ties).
// ---------------------------------------------------------------------------
template <typename S>
int maxpool2d(GraphT<S>& g, int x) {
  const auto& xv = g.value(x);
  if (xv.rank() != 4) throw ShapeError("maxpool2d: expects {B,H,W,C}");
  const Eigen::Index B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw InvalidInputError("maxpool2d: H and W must be divisible by 2");
  const Eigen::Index Ho = H / 2, Wo = W / 2;

  TensorT<S> out({B, Ho, Wo, C});
  auto args = std::make_shared<std::vector<Eigen::Index>>(
      static_cast<std::size_t>(B * Ho * Wo * C));
  Eigen::Index o = 0;
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index oi = 0; oi < Ho; ++oi)
      for (Eigen::Index oj = 0; oj < Wo; ++oj)
        for (Eigen::Index c = 0; c < C; ++c, ++o) {
          S best = xv.data(opdetail::nhwc(H, W, C, b, 2 * oi, 2 * oj, c));
          Eigen::Index besti = opdetail::nhwc(H, W, C, b, 2 * oi, 2 * oj, c);
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) {
              const Eigen::Index idx =
                  opdetail::nhwc(H, W, C, b, 2 * oi + di, 2 * oj + dj, c);
              if (xv.data(idx) > best) {
                best = xv.data(idx);
                besti = idx;
              }
            }
          out.data(o) = best;
          (*args)[static_cast<std::size_t>(o)] = besti;
        }

  return g.emit(std::move(out), {x}, [=](GraphT<S>& gr, int outid) {
    if (!gr.requires_grad(x)) return;
    TensorT<S> dx = TensorT<S>::zeros(gr.value(x).shape);
    const auto& go = gr.grad(outid);
    for (Eigen::Index i = 0; i < go.size(); ++i)
      dx.data((*args)[static_cast<std::size_t>(i)]) += go.data(i);
    gr.accumulate_grad(x, dx);
  });
}

// Nearest-neighbor 2x upsampling; gradient of each input cell is the sum of
// its 2x2 replica block.
template <typename S>
int upsample_nearest2(GraphT<S>& g, int x) {
  const auto& xv = g.value(x);
  if (xv.rank() != 4) throw ShapeError("upsample_nearest2: expects {B,H,W,C}");
  const Eigen::Index B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  TensorT<S> out({B, 2 * H, 2 * W, C});
  auto xm = xv.matrix(B * H * W, C);
  auto om = out.matrix(B * 4 * H * W, C);
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index i = 0; i < 2 * H; ++i)
      for (Eigen::Index j = 0; j < 2 * W; ++j)
        om.row((b * 2 * H + i) * 2 * W + j) = xm.row((b * H + i / 2) * W + j / 2);
  return g.emit(std::move(out), {x}, [=](GraphT<S>& gr, int outid) {
    if (!gr.requires_grad(x)) return;
    TensorT<S> dx({B, H, W, C});
    auto dxm = dx.matrix(B * H * W, C);
    auto gm = gr.grad(outid).matrix(B * 4 * H * W, C);
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index i = 0; i < 2 * H; ++i)
        for (Eigen::Index j = 0; j < 2 * W; ++j)
          dxm.row((b * H + i / 2) * W + j / 2) +=
              gm.row((b * 2 * H + i) * 2 * W + j);
    gr.accumulate_grad(x, dx);
  });
}

// ---------------------------------------------------------------------------
// global_maxpool_points: {B,N,F} -> {B,F}, per-feature max over points.
// ---------------------------------------------------------------------------
template <typename S>
int global_maxpool_points(GraphT<S>& g, int x) {
  const auto& xv = g.value(x);
  if (xv.rank() != 3) throw ShapeError("global_maxpool_points: expects {B,N,F}");
  const Eigen::Index B = xv.dim(0), N = xv.dim(1), F = xv.dim(2);
  if (N < 1) throw InvalidInputError("global_maxpool_points: N must be >= 1");
  TensorT<S> out({B, F});
  auto args = std::make_shared<std::vector<Eigen::Index>>(
      static_cast<std::size_t>(B * F));
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index f = 0; f < F; ++f) {
      S best = xv.data((b * N + 0) * F + f);
      Eigen::Index bestn = 0;
      for (Eigen::Index n = 1; n < N; ++n) {
        const S v = xv.data((b * N + n) * F + f);
        if (v > best) {
          best = v;
          bestn = n;
        }
      }
      out.data(b * F + f) = best;
      (*args)[static_cast<std::size_t>(b * F + f)] = bestn;
    }
  return g.emit(std::move(out), {x}, [=](GraphT<S>& gr, int outid) {
    if (!gr.requires_grad(x)) return;
    TensorT<S> dx = TensorT<S>::zeros({B, N, F});
    const auto& go = gr.grad(outid);
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index f = 0; f < F; ++f) {
        const Eigen::Index n = (*args)[static_cast<std::size_t>(b * F + f)];
        dx.data((b * N + n) * F + f) += go.data(b * F + f);
      }
    gr.accumulate_grad(x, dx);
  });
}

// ---------------------------------------------------------------------------
// softmax_cross_entropy: mean point-wise CE over M rows; d_logits = (p-q)/M.
// ---------------------------------------------------------------------------
template <typename S>
int softmax_cross_entropy(GraphT<S>& g, int logits,
                          const std::vector<int>& labels) {
  const auto& lv = g.value(logits);
  if (lv.rank() != 2) throw ShapeError("softmax_cross_entropy: expects {M,K}");
  const Eigen::Index M = lv.dim(0), K = lv.dim(1);
  if (static_cast<Eigen::Index>(labels.size()) != M)
    throw ShapeError("softmax_cross_entropy: label count mismatch");
  for (int l : labels)
    if (l < 0 || l >= K)
      throw InvalidInputError("softmax_cross_entropy: label out of range");

  auto probs = std::make_shared<opdetail::Mat<S>>(M, K);
  S loss = S(0);
  auto lm = lv.matrix(M, K);
  for (Eigen::Index n = 0; n < M; ++n) {
    const S mx = lm.row(n).maxCoeff();
    Eigen::Array<S, Eigen::Dynamic, 1> z = (lm.row(n).transpose().array() - mx);
    const S lse = std::log(z.exp().sum());
    probs->row(n) = (z - lse).exp().transpose();
    loss -= z(labels[static_cast<std::size_t>(n)]) - lse;
  }
  loss /= static_cast<S>(M);

  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  return g.emit(TensorT<S>::scalar(loss), {logits}, [=](GraphT<S>& gr, int outid) {
    if (!gr.requires_grad(logits)) return;
    const S gscale = gr.grad(outid).data(0) / static_cast<S>(M);
    TensorT<S> dl({M, K});
    auto dm = dl.matrix(M, K);
    dm = *probs;
    for (Eigen::Index n = 0; n < M; ++n)
      dm(n, (*labels_copy)[static_cast<std::size_t>(n)]) -= S(1);
    dm *= gscale;
    gr.accumulate_grad(logits, dl);
  });
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------
template <typename S>
int add(GraphT<S>& g, int a, int b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  if (!av.same_shape(bv)) throw ShapeError("add: shape mismatch");
  TensorT<S> out;
  out.shape = av.shape;
  out.data = av.data + bv.data;
  return g.emit(std::move(out), {a, b}, [=](GraphT<S>& gr, int outid) {
    gr.accumulate_grad(a, gr.grad(outid));
    gr.accumulate_grad(b, gr.grad(outid));
  });
}

template <typename S>
int reshape(GraphT<S>& g, int x, std::vector<Eigen::Index> shape) {
  const auto& xv = g.value(x);
  if (TensorT<S>::count(shape) != xv.size())
    throw ShapeError("reshape: element count mismatch");
  TensorT<S> out;
  out.shape = shape;
  out.data = xv.data;
  return g.emit(std::move(out), {x}, [=](GraphT<S>& gr, int outid) {
    if (!gr.requires_grad(x)) return;
    TensorT<S> dx;
    dx.shape = gr.value(x).shape;
    dx.data = gr.grad(outid).data;
    gr.accumulate_grad(x, dx);
  });
}

template <typename S>
int affine(GraphT<S>& g, int x, S scale, S shift) {
  const auto& xv = g.value(x);
  TensorT<S> out;
  out.shape = xv.shape;
  out.data = scale * xv.data;
  out.data.array() += shift;
  return g.emit(std::move(out), {x}, [=](GraphT<S>& gr, int outid) {
    if (!gr.requires_grad(x)) return;
    TensorT<S> dx;
    dx.shape = gr.value(x).shape;
    dx.data = scale * gr.grad(outid).data;
    gr.accumulate_grad(x, dx);
  });
}

/// Concatenates along the last dimension; all leading dims must agree.
template <typename S>
int concat_last(GraphT<S>& g, const std::vector<int>& ids) {
  if (ids.empty()) throw InvalidInputError("concat_last: no inputs");
  const auto& first = g.value(ids[0]);
  std::vector<Eigen::Index> lead(first.shape.begin(), first.shape.end() - 1);
  Eigen::Index total = 0;
  std::vector<Eigen::Index> widths;
  for (int id : ids) {
    const auto& v = g.value(id);
    std::vector<Eigen::Index> l(v.shape.begin(), v.shape.end() - 1);
    if (l != lead) throw ShapeError("concat_last: leading dims mismatch");
    widths.push_back(v.shape.back());
    total += v.shape.back();
  }
  std::vector<Eigen::Index> oshape = lead;
  oshape.push_back(total);
  TensorT<S> out(oshape);
  const Eigen::Index rows = out.size() / total;
  auto om = out.matrix(rows, total);
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    om.middleCols(off, widths[i]) = g.value(ids[i]).matrix(rows, widths[i]);
    off += widths[i];
  }
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  auto widths_copy = std::make_shared<std::vector<Eigen::Index>>(widths);
  return g.emit(std::move(out), ids, [=](GraphT<S>& gr, int outid) {
    auto gm = gr.grad(outid).matrix(rows, total);
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < ids_copy->size(); ++i) {
      const int id = (*ids_copy)[i];
      const Eigen::Index wdt = (*widths_copy)[i];
      if (gr.requires_grad(id)) {
        TensorT<S> dx(gr.value(id).shape);
        dx.matrix(rows, wdt) = gm.middleCols(o, wdt);
        gr.accumulate_grad(id, dx);
      }
      o += wdt;
    }
  });
}

/// Batched coords * transform: {B,N,3} x {B,3,3} -> {B,N,3}.
template <typename S>
int bmm_points(GraphT<S>& g, int coords, int t) {
  const auto& cv = g.value(coords);
  const auto& tv = g.value(t);
  if (cv.rank() != 3 || cv.dim(2) != 3) throw ShapeError("bmm_points: coords {B,N,3}");
  if (tv.rank() != 3 || tv.dim(1) != 3 || tv.dim(2) != 3 || tv.dim(0) != cv.dim(0))
    throw ShapeError("bmm_points: transform {B,3,3}");
  const Eigen::Index B = cv.dim(0), N = cv.dim(1);
  TensorT<S> out({B, N, 3});
  for (Eigen::Index b = 0; b < B; ++b) {
    auto cb = cv.matrix(B * N, 3).middleRows(b * N, N);
    auto tb = tv.matrix(B * 3, 3).middleRows(b * 3, 3);
    out.matrix(B * N, 3).middleRows(b * N, N).noalias() = cb * tb;
  }
  return g.emit(std::move(out), {coords, t}, [=](GraphT<S>& gr, int outid) {
    auto gm = gr.grad(outid).matrix(B * N, 3);
    if (gr.requires_grad(coords)) {
      TensorT<S> dc({B, N, 3});
      for (Eigen::Index b = 0; b < B; ++b)
        dc.matrix(B * N, 3).middleRows(b * N, N).noalias() =
            gm.middleRows(b * N, N) *
            gr.value(t).matrix(B * 3, 3).middleRows(b * 3, 3).transpose();
      gr.accumulate_grad(coords, dc);
    }
    if (gr.requires_grad(t)) {
      TensorT<S> dt({B, 3, 3});
      for (Eigen::Index b = 0; b < B; ++b)
        dt.matrix(B * 3, 3).middleRows(b * 3, 3).noalias() =
            gr.value(coords).matrix(B * N, 3).middleRows(b * N, N).transpose() *
            gm.middleRows(b * N, N);
      gr.accumulate_grad(t, dt);
    }
  });
}

// ---------------------------------------------------------------------------
// project_to_grid: per batch element, fit the grid frame (bbox minimum plus
// the largest axis extent) and normalize coordinates into
// [margin, R-1-margin]. The VJP differentiates through the bbox statistics:
// min/extent gradients route to the extremal points, so the analytic gradient
// is the true derivative of the executed normalization.
// ---------------------------------------------------------------------------
namespace opdetail {

template <typename S>
struct GridFitStats {
  Eigen::Matrix<S, 3, 1> bbox_min;
  Eigen::Index argmin[3];
  Eigen::Index argmax[3];
  int extent_axis;
  S extent;      // after degenerate fallback
  bool degenerate;
};

}  // namespace opdetail

template <typename S>
int project_to_grid(GraphT<S>& g, int coords, int resolution, S margin = S(0.5)) {
  const auto& cv = g.value(coords);
  if (cv.rank() != 3 || cv.dim(2) != 3)
    throw ShapeError("project_to_grid: expects {B,N,3}");
  if (resolution < 4) throw InvalidInputError("project_to_grid: resolution >= 4");
  if (!(margin >= S(0.5))) throw InvalidInputError("project_to_grid: margin >= 0.5");
  if (!cv.all_finite())
    throw InvalidInputError("project_to_grid: non-finite coordinates");
  const Eigen::Index B = cv.dim(0), N = cv.dim(1);
  const S c = S(resolution - 1) - S(2) * margin;
  const S lo = margin, hi = S(resolution - 1) - margin;

  auto stats = std::make_shared<std::vector<opdetail::GridFitStats<S>>>(
      static_cast<std::size_t>(B));
  TensorT<S> out({B, N, 3});
  for (Eigen::Index b = 0; b < B; ++b) {
    auto& st = (*stats)[static_cast<std::size_t>(b)];
    Eigen::Matrix<S, 3, 1> bmax;
    for (int a = 0; a < 3; ++a) {
      S mn = cv.data((b * N + 0) * 3 + a), mx = mn;
      Eigen::Index imn = 0, imx = 0;
      for (Eigen::Index n = 1; n < N; ++n) {
        const S v = cv.data((b * N + n) * 3 + a);
        if (v < mn) { mn = v; imn = n; }
        if (v > mx) { mx = v; imx = n; }
      }
      st.bbox_min(a) = mn;
      bmax(a) = mx;
      st.argmin[a] = imn;
      st.argmax[a] = imx;
    }
    Eigen::Matrix<S, 3, 1> ext = bmax - st.bbox_min;
    st.extent_axis = 0;
    for (int a = 1; a < 3; ++a)
      if (ext(a) > ext(st.extent_axis)) st.extent_axis = a;
    st.degenerate = ext(st.extent_axis) == S(0);
    st.extent = st.degenerate ? S(1) : ext(st.extent_axis);
    const S s = c / st.extent;
    for (Eigen::Index n = 0; n < N; ++n)
      for (int a = 0; a < 3; ++a) {
        const S u = lo + (cv.data((b * N + n) * 3 + a) - st.bbox_min(a)) * s;
        out.data((b * N + n) * 3 + a) = std::min(std::max(u, lo), hi);
      }
  }

  return g.emit(std::move(out), {coords}, [=](GraphT<S>& gr, int outid) {
    if (!gr.requires_grad(coords)) return;
    const auto& go = gr.grad(outid);
    const auto& xin = gr.value(coords);
    TensorT<S> dx = TensorT<S>::zeros({B, N, 3});
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& st = (*stats)[static_cast<std::size_t>(b)];
      const S s = c / st.extent;
      Eigen::Matrix<S, 3, 1> dbmin = Eigen::Matrix<S, 3, 1>::Zero();
      S dext = S(0);
      for (Eigen::Index n = 0; n < N; ++n)
        for (int a = 0; a < 3; ++a) {
          const S x = xin.data((b * N + n) * 3 + a);
          const S u = lo + (x - st.bbox_min(a)) * s;
          if (u < lo || u > hi) continue;  // clamped region: zero gradient
          const S gout = go.data((b * N + n) * 3 + a);
          if (gout == S(0)) continue;
          dx.data((b * N + n) * 3 + a) += gout * s;
          dbmin(a) -= gout * s;
          dext -= gout * (u - lo) / st.extent;
        }
      for (int a = 0; a < 3; ++a)
        dx.data((b * N + st.argmin[a]) * 3 + a) += dbmin(a);
      if (!st.degenerate) {
        const int a = st.extent_axis;
        dx.data((b * N + st.argmax[a]) * 3 + a) += dext;
        dx.data((b * N + st.argmin[a]) * 3 + a) -= dext;
      }
    }
    gr.accumulate_grad(coords, dx);
  });
}

// ---------------------------------------------------------------------------
// plane_scatter / plane_gather: graph wrappers over the plane kernels.
// coord_grad=false detaches the coordinate input (features still flow).
// ---------------------------------------------------------------------------
template <typename S>
int plane_scatter(GraphT<S>& g, int grid, int feats, PlaneId plane, int resolution,
                  Accumulation mode = Accumulation::index_order,
                  bool coord_grad = true) {
  const auto& gv = g.value(grid);
  const auto& fv = g.value(feats);
  if (gv.rank() != 3 || gv.dim(2) != 3) throw ShapeError("plane_scatter: grid {B,N,3}");
  if (fv.rank() != 3 || fv.dim(0) != gv.dim(0) || fv.dim(1) != gv.dim(1))
    throw ShapeError("plane_scatter: feats {B,N,C} mismatch");
  const Eigen::Index B = gv.dim(0), N = gv.dim(1), C = fv.dim(2);
  const Eigen::Index R = resolution;

  TensorT<S> out({B, R, R, C});
  for (Eigen::Index b = 0; b < B; ++b) {
    Coord2Matrix<S> uv(N, 2);
    auto [a0, a1] = plane_axes(plane);
    for (Eigen::Index n = 0; n < N; ++n) {
      uv(n, 0) = gv.data((b * N + n) * 3 + a0);
      uv(n, 1) = gv.data((b * N + n) * 3 + a1);
    }
    FeatMatrix<S> f(N, C);
    f = fv.matrix(B * N, C).middleRows(b * N, N);
    FeatureMapT<S> map = scatter_bilinear<S>(uv, f, resolution, mode, plane);
    out.matrix(B * R * R, C).middleRows(b * R * R, R * R) = map.cells;
  }

  return g.emit(std::move(out), {grid, feats}, [=](GraphT<S>& gr, int outid) {
    const auto& go = gr.grad(outid);
    const auto& gvv = gr.value(grid);
    const auto& fvv = gr.value(feats);
    TensorT<S> dgrid = TensorT<S>::zeros({B, N, 3});
    TensorT<S> dfeats = TensorT<S>::zeros({B, N, C});
    auto [a0, a1] = plane_axes(plane);
    for (Eigen::Index b = 0; b < B; ++b) {
      Coord2Matrix<S> uv(N, 2);
      for (Eigen::Index n = 0; n < N; ++n) {
        uv(n, 0) = gvv.data((b * N + n) * 3 + a0);
        uv(n, 1) = gvv.data((b * N + n) * 3 + a1);
      }
      FeatMatrix<S> f(N, C);
      f = fvv.matrix(B * N, C).middleRows(b * N, N);
      FeatureMapT<S> up;
      up.resolution = static_cast<int>(R);
      up.plane = plane;
      up.cells = go.matrix(B * R * R, C).middleRows(b * R * R, R * R);
      ScatterVjpT<S> vjp = scatter_vjp<S>(uv, f, up);
      dfeats.matrix(B * N, C).middleRows(b * N, N) = vjp.d_feats;
      if (coord_grad)
        for (Eigen::Index n = 0; n < N; ++n) {
          dgrid.data((b * N + n) * 3 + a0) += vjp.d_coords(n, 0);
          dgrid.data((b * N + n) * 3 + a1) += vjp.d_coords(n, 1);
        }
    }
    gr.accumulate_grad(feats, dfeats);
    if (coord_grad) gr.accumulate_grad(grid, dgrid);
  });
}

/// Gathers a (possibly stride-downsampled) map at grid coords / stride.
/// Scaled coordinates are clamped to the coarse map's top edge; the clamped
/// region has zero coordinate gradient.
template <typename S>
int plane_gather(GraphT<S>& g, int map, int grid, PlaneId plane, int stride = 1,
                 bool coord_grad = true) {
  const auto& mv = g.value(map);
  const auto& gv = g.value(grid);
  if (mv.rank() != 4 || mv.dim(1) != mv.dim(2))
    throw ShapeError("plane_gather: map {B,Rm,Rm,C}");
  if (gv.rank() != 3 || gv.dim(2) != 3) throw ShapeError("plane_gather: grid {B,N,3}");
  if (mv.dim(0) != gv.dim(0)) throw ShapeError("plane_gather: batch mismatch");
  if (stride < 1) throw InvalidInputError("plane_gather: stride >= 1");
  const Eigen::Index B = gv.dim(0), N = gv.dim(1);
  const Eigen::Index Rm = mv.dim(1), C = mv.dim(3);
  const S vmax = static_cast<S>(Rm - 1);
  const S inv = S(1) / static_cast<S>(stride);

  auto scaled = [&](const TensorT<S>& gridv, Eigen::Index b, Coord2Matrix<S>& uv,
                    std::vector<unsigned char>* clamped) {
    auto [a0, a1] = plane_axes(plane);
    for (Eigen::Index n = 0; n < N; ++n) {
      const S u0 = gridv.data((b * N + n) * 3 + a0) * inv;
      const S u1 = gridv.data((b * N + n) * 3 + a1) * inv;
      uv(n, 0) = std::min(u0, vmax);
      uv(n, 1) = std::min(u1, vmax);
      if (clamped) {
        (*clamped)[static_cast<std::size_t>(2 * n)] = u0 > vmax;
        (*clamped)[static_cast<std::size_t>(2 * n + 1)] = u1 > vmax;
      }
    }
  };

  TensorT<S> out({B, N, C});
  for (Eigen::Index b = 0; b < B; ++b) {
    Coord2Matrix<S> uv(N, 2);
    scaled(gv, b, uv, nullptr);
    FeatureMapT<S> m;
    m.resolution = static_cast<int>(Rm);
    m.plane = plane;
    m.cells = mv.matrix(B * Rm * Rm, C).middleRows(b * Rm * Rm, Rm * Rm);
    out.matrix(B * N, C).middleRows(b * N, N) = gather_bilinear<S>(m, uv);
  }

  return g.emit(std::move(out), {map, grid}, [=](GraphT<S>& gr, int outid) {
    const auto& go = gr.grad(outid);
    const auto& mvv = gr.value(map);
    const auto& gvv = gr.value(grid);
    TensorT<S> dmap = TensorT<S>::zeros({B, Rm, Rm, C});
    TensorT<S> dgrid = TensorT<S>::zeros({B, N, 3});
    auto [a0, a1] = plane_axes(plane);
    for (Eigen::Index b = 0; b < B; ++b) {
      Coord2Matrix<S> uv(N, 2);
      std::vector<unsigned char> clamped(static_cast<std::size_t>(2 * N));
      scaled(gvv, b, uv, &clamped);
      FeatMatrix<S> up(N, C);
      up = go.matrix(B * N, C).middleRows(b * N, N);
      FeatureMapT<S> m;
      m.resolution = static_cast<int>(Rm);
      m.plane = plane;
      m.cells = mvv.matrix(B * Rm * Rm, C).middleRows(b * Rm * Rm, Rm * Rm);
      GatherVjpT<S> vjp = gather_vjp<S>(m, uv, up);
      dmap.matrix(B * Rm * Rm, C).middleRows(b * Rm * Rm, Rm * Rm) = vjp.d_map.cells;
      if (coord_grad && gr.requires_grad(grid))
        for (Eigen::Index n = 0; n < N; ++n) {
          if (!clamped[static_cast<std::size_t>(2 * n)])
            dgrid.data((b * N + n) * 3 + a0) += vjp.d_coords(n, 0) * inv;
          if (!clamped[static_cast<std::size_t>(2 * n + 1)])
            dgrid.data((b * N + n) * 3 + a1) += vjp.d_coords(n, 1) * inv;
        }
    }
    gr.accumulate_grad(map, dmap);
    if (coord_grad) gr.accumulate_grad(grid, dgrid);
  });
}

}  // namespace pbp
