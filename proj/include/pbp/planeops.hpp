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
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "pbp/common.hpp"
#include "pbp/pointcloud.hpp"

// The plane kernels: bilinear scatter of point features onto a grid, the
// transposed gather back to points, and their vector-Jacobian products.
// Both directions use the separable tent kernel
//   g(N, n) = max(0, 1 - |N - n|),   G(A, B, a, b) = g(A, a) * g(B, b)
// so gather is the exact linear transpose of scatter.

namespace pbp {

enum class PlaneId { XY, YZ, ZX };

constexpr std::array<PlaneId, 3> kAllPlanes{PlaneId::XY, PlaneId::YZ, PlaneId::ZX};

/// Ordered coordinate-axis pair read off a 3D point for each plane.
inline std::pair<int, int> plane_axes(PlaneId plane) {
  switch (plane) {
    case PlaneId::XY: return {0, 1};
    case PlaneId::YZ: return {1, 2};
    case PlaneId::ZX: return {2, 0};
  }
  throw InvalidInputError("bad plane id");
}

inline const char* plane_name(PlaneId plane) {
  switch (plane) {
    case PlaneId::XY: return "xy";
    case PlaneId::YZ: return "yz";
    case PlaneId::ZX: return "zx";
  }
  return "?";
}

template <typename S>
using Coord2Matrix = Eigen::Matrix<S, Eigen::Dynamic, 2, Eigen::RowMajor>;

/// Dense R x R x C feature grid on one projection plane. Cell (a, b) of
/// channel c lives at cells(a * resolution + b, c): first plane coordinate
/// indexes the row block, second the column.
template <typename S>
struct FeatureMapT {
  int resolution = 0;
  PlaneId plane = PlaneId::XY;
  FeatMatrix<S> cells;  // (R*R) x C

  static FeatureMapT zeros(int resolution, Eigen::Index channels,
                           PlaneId plane = PlaneId::XY) {
    FeatureMapT m;
    m.resolution = resolution;
    m.plane = plane;
    m.cells = FeatMatrix<S>::Zero(Eigen::Index(resolution) * resolution, channels);
    return m;
  }
  Eigen::Index channels() const { return cells.cols(); }
  Eigen::Index cell_index(Eigen::Index a, Eigen::Index b) const {
    return a * resolution + b;
  }
  S& at(Eigen::Index a, Eigen::Index b, Eigen::Index c) {
    return cells(cell_index(a, b), c);
  }
  S at(Eigen::Index a, Eigen::Index b, Eigen::Index c) const {
    return cells(cell_index(a, b), c);
  }
};

using FeatureMap = FeatureMapT<float>;

/// Accumulation order for scatter_bilinear. index_order is the serial
/// default; sorted canonicalizes point order so the result is invariant to
/// input permutation (bitwise); parallel partitions points into fixed chunks
/// and sums partial maps in chunk order (matches index_order within 1e-5).
enum class Accumulation { index_order, sorted, parallel };

/// Picks the plane's ordered axis pair out of N x 3 grid coordinates.
template <typename S>
Coord2Matrix<S> select_plane_coords(const PointMatrix<S>& grid_coords,
                                    PlaneId plane) {
  if (!grid_coords.allFinite())
    throw InvalidInputError("grid coordinates must be finite");
  auto [a0, a1] = plane_axes(plane);
  Coord2Matrix<S> out(grid_coords.rows(), 2);
  out.col(0) = grid_coords.col(a0);
  out.col(1) = grid_coords.col(a1);
  return out;
}

namespace detail {

// Tent-kernel footprint of one coordinate: two nodes i0, i0+1 with weights
// (1-frac), frac. A coordinate exactly at R-1 is folded to (i0=R-2, frac=1)
// so both nodes stay in range.
template <typename S>
struct TentAxis {
  Eigen::Index i0;
  S frac;
};

template <typename S>
inline TentAxis<S> tent_axis(S u, int resolution) {
  Eigen::Index i0 = static_cast<Eigen::Index>(std::floor(static_cast<double>(u)));
  if (i0 >= resolution - 1) i0 = resolution - 2;
  return {i0, u - static_cast<S>(i0)};
}

template <typename S>
inline void check_coords_in_range(const Coord2Matrix<S>& coords2d, int resolution,
                                  const char* who) {
  const S hi = static_cast<S>(resolution - 1);
  for (Eigen::Index n = 0; n < coords2d.rows(); ++n) {
    for (int a = 0; a < 2; ++a) {
      const S u = coords2d(n, a);
      if (!(u >= S(0)) || !(u <= hi))
        throw ContractViolationError(std::string(who) + ": coordinate " +
                                     std::to_string(static_cast<double>(u)) +
                                     " outside [0, " +
                                     std::to_string(static_cast<double>(hi)) +
                                     "] at point " + std::to_string(n));
    }
  }
}

// Serial scatter of the points listed in `order` into `map`, in that order.
template <typename S>
void scatter_points(const Coord2Matrix<S>& coords2d, const FeatMatrix<S>& feats,
                    const std::vector<Eigen::Index>& order, FeatureMapT<S>& map) {
  const int R = map.resolution;
  for (Eigen::Index p : order) {
    const TentAxis<S> ax = tent_axis(coords2d(p, 0), R);
    const TentAxis<S> ay = tent_axis(coords2d(p, 1), R);
    const S wu[2] = {S(1) - ax.frac, ax.frac};
    const S wv[2] = {S(1) - ay.frac, ay.frac};
    for (int di = 0; di < 2; ++di) {
      for (int dj = 0; dj < 2; ++dj) {
        const S w = wu[di] * wv[dj];
        if (w == S(0)) continue;  // keeps node hits bitwise exact
        map.cells.row(map.cell_index(ax.i0 + di, ay.i0 + dj)) +=
            w * feats.row(p);
      }
    }
  }
}

// Canonical point order: by plane coordinates, then feature row, so the
// sorted accumulation is a pure function of the point *set*.
template <typename S>
std::vector<Eigen::Index> canonical_order(const Coord2Matrix<S>& coords2d,
                                          const FeatMatrix<S>& feats) {
  std::vector<Eigen::Index> order(coords2d.rows());
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (coords2d(a, 0) != coords2d(b, 0)) return coords2d(a, 0) < coords2d(b, 0);
    if (coords2d(a, 1) != coords2d(b, 1)) return coords2d(a, 1) < coords2d(b, 1);
    for (Eigen::Index c = 0; c < feats.cols(); ++c)
      if (feats(a, c) != feats(b, c)) return feats(a, c) < feats(b, c);
    return false;
  });
  return order;
}

}  // namespace detail

/// Splats each point's feature row onto its four surrounding cells,
/// tent-kernel weighted; features landing in one cell are summed.
template <typename S>
FeatureMapT<S> scatter_bilinear(const Coord2Matrix<S>& coords2d,
                                const FeatMatrix<S>& feats, int resolution,
                                Accumulation mode = Accumulation::index_order,
                                PlaneId plane = PlaneId::XY) {
  if (resolution < 2) throw InvalidInputError("scatter needs resolution >= 2");
  if (feats.rows() != coords2d.rows())
    throw ShapeError("scatter: feature rows != coordinate rows");
  if (feats.cols() < 1) throw ShapeError("scatter: needs >= 1 channel");
  detail::check_coords_in_range(coords2d, resolution, "scatter_bilinear");

  FeatureMapT<S> map = FeatureMapT<S>::zeros(resolution, feats.cols(), plane);
  const Eigen::Index n = coords2d.rows();

  if (mode == Accumulation::parallel && n >= 2) {
    const int workers = std::min<Eigen::Index>(thread_budget(), n);
    if (workers > 1) {
      const Eigen::Index chunk = (n + workers - 1) / workers;
      std::vector<FeatureMapT<S>> partial(
          static_cast<std::size_t>((n + chunk - 1) / chunk));
      parallel_for(static_cast<std::int64_t>(partial.size()), workers,
                   [&](std::int64_t ci) {
                     const Eigen::Index lo = ci * chunk;
                     const Eigen::Index hi = std::min(n, lo + chunk);
                     std::vector<Eigen::Index> order(hi - lo);
                     std::iota(order.begin(), order.end(), lo);
                     partial[ci] =
                         FeatureMapT<S>::zeros(resolution, feats.cols(), plane);
                     detail::scatter_points(coords2d, feats, order, partial[ci]);
                   });
      for (const auto& part : partial) map.cells += part.cells;
      return map;
    }
  }

  std::vector<Eigen::Index> order;
  if (mode == Accumulation::sorted) {
    order = detail::canonical_order(coords2d, feats);
  } else {
    order.resize(n);
    std::iota(order.begin(), order.end(), Eigen::Index(0));
  }
  detail::scatter_points(coords2d, feats, order, map);
  return map;
}

/// Reads a per-point feature row back out of the grid: the tent-kernel
/// weighted sum of the four surrounding cells. Exact transpose of scatter.
template <typename S>
FeatMatrix<S> gather_bilinear(const FeatureMapT<S>& map,
                              const Coord2Matrix<S>& coords2d) {
  if (map.resolution < 2) throw InvalidInputError("gather needs resolution >= 2");
  detail::check_coords_in_range(coords2d, map.resolution, "gather_bilinear");
  const int R = map.resolution;
  FeatMatrix<S> out = FeatMatrix<S>::Zero(coords2d.rows(), map.channels());
  for (Eigen::Index p = 0; p < coords2d.rows(); ++p) {
    const detail::TentAxis<S> ax = detail::tent_axis(coords2d(p, 0), R);
    const detail::TentAxis<S> ay = detail::tent_axis(coords2d(p, 1), R);
    const S wu[2] = {S(1) - ax.frac, ax.frac};
    const S wv[2] = {S(1) - ay.frac, ay.frac};
    for (int di = 0; di < 2; ++di) {
      for (int dj = 0; dj < 2; ++dj) {
        const S w = wu[di] * wv[dj];
        if (w == S(0)) continue;
        out.row(p) += w * map.cells.row(map.cell_index(ax.i0 + di, ay.i0 + dj));
      }
    }
  }
  return out;
}

namespace detail {

// d/du of the two per-axis tent weights (1-frac, frac). At kink points
// (frac exactly 0 or 1, i.e. |N - n| in {0, 1}) the subderivative is 0.
template <typename S>
inline void tent_axis_dweights(const TentAxis<S>& ax, S (&dw)[2]) {
  if (ax.frac == S(0) || ax.frac == S(1)) {
    dw[0] = dw[1] = S(0);
  } else {
    dw[0] = S(-1);
    dw[1] = S(1);
  }
}

}  // namespace detail

template <typename S>
struct ScatterVjpT {
  FeatMatrix<S> d_feats;      // N x C
  Coord2Matrix<S> d_coords;   // N x 2
};

/// VJP of scatter_bilinear against an upstream R x R x C cotangent.
/// d_feats is exactly gather_bilinear(upstream, coords2d); d_coords uses the
/// tent subderivative (0 at kinks).
template <typename S>
ScatterVjpT<S> scatter_vjp(const Coord2Matrix<S>& coords2d,
                           const FeatMatrix<S>& feats,
                           const FeatureMapT<S>& upstream) {
  if (feats.rows() != coords2d.rows())
    throw ShapeError("scatter_vjp: feature rows != coordinate rows");
  if (feats.cols() != upstream.channels())
    throw ShapeError("scatter_vjp: channel mismatch with upstream");
  detail::check_coords_in_range(coords2d, upstream.resolution, "scatter_vjp");

  ScatterVjpT<S> out;
  out.d_feats = gather_bilinear(upstream, coords2d);
  out.d_coords = Coord2Matrix<S>::Zero(coords2d.rows(), 2);
  const int R = upstream.resolution;
  for (Eigen::Index p = 0; p < coords2d.rows(); ++p) {
    const detail::TentAxis<S> ax = detail::tent_axis(coords2d(p, 0), R);
    const detail::TentAxis<S> ay = detail::tent_axis(coords2d(p, 1), R);
    const S wu[2] = {S(1) - ax.frac, ax.frac};
    const S wv[2] = {S(1) - ay.frac, ay.frac};
    S du[2], dv[2];
    detail::tent_axis_dweights(ax, du);
    detail::tent_axis_dweights(ay, dv);
    S gu = S(0), gv = S(0);
    for (int di = 0; di < 2; ++di) {
      for (int dj = 0; dj < 2; ++dj) {
        const S dot = feats.row(p).dot(
            upstream.cells.row(upstream.cell_index(ax.i0 + di, ay.i0 + dj)));
        gu += du[di] * wv[dj] * dot;
        gv += wu[di] * dv[dj] * dot;
      }
    }
    out.d_coords(p, 0) = gu;
    out.d_coords(p, 1) = gv;
  }
  return out;
}

template <typename S>
struct GatherVjpT {
  FeatureMapT<S> d_map;       // R x R x C
  Coord2Matrix<S> d_coords;   // N x 2
};

/// VJP of gather_bilinear against per-point cotangents. d_map is exactly
/// scatter_bilinear(coords2d, upstream); d_coords as in scatter_vjp.
template <typename S>
GatherVjpT<S> gather_vjp(const FeatureMapT<S>& map,
                         const Coord2Matrix<S>& coords2d,
                         const FeatMatrix<S>& upstream) {
  if (upstream.rows() != coords2d.rows())
    throw ShapeError("gather_vjp: upstream rows != coordinate rows");
  if (upstream.cols() != map.channels())
    throw ShapeError("gather_vjp: channel mismatch with map");
  detail::check_coords_in_range(coords2d, map.resolution, "gather_vjp");

  GatherVjpT<S> out;
  out.d_map = scatter_bilinear(coords2d, upstream, map.resolution,
                               Accumulation::index_order, map.plane);
  out.d_coords = Coord2Matrix<S>::Zero(coords2d.rows(), 2);
  const int R = map.resolution;
  for (Eigen::Index p = 0; p < coords2d.rows(); ++p) {
    const detail::TentAxis<S> ax = detail::tent_axis(coords2d(p, 0), R);
    const detail::TentAxis<S> ay = detail::tent_axis(coords2d(p, 1), R);
    const S wu[2] = {S(1) - ax.frac, ax.frac};
    const S wv[2] = {S(1) - ay.frac, ay.frac};
    S du[2], dv[2];
    detail::tent_axis_dweights(ax, du);
    detail::tent_axis_dweights(ay, dv);
    S gu = S(0), gv = S(0);
    for (int di = 0; di < 2; ++di) {
      for (int dj = 0; dj < 2; ++dj) {
        const S dot = upstream.row(p).dot(
            map.cells.row(map.cell_index(ax.i0 + di, ay.i0 + dj)));
        gu += du[di] * wv[dj] * dot;
        gv += wu[di] * dv[dj] * dot;
      }
    }
    out.d_coords(p, 0) = gu;
    out.d_coords(p, 1) = gv;
  }
  return out;
}

}  // namespace pbp
