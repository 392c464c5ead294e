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
#include <optional>
#include <string>
#include <vector>

#include "pbp/common.hpp"

namespace pbp {

template <typename S>
using PointMatrix = Eigen::Matrix<S, Eigen::Dynamic, 3, Eigen::RowMajor>;
template <typename S>
using FeatMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Mat3 = Eigen::Matrix<S, 3, 3, Eigen::RowMajor>;

/// A set of N points with optional per-point features and class labels.
template <typename S>
struct PointCloudT {
  PointMatrix<S> coords;          // N x 3, world units
  FeatMatrix<S> feats;            // N x F, empty when absent
  std::vector<int> labels;        // size N or empty

  Eigen::Index size() const { return coords.rows(); }
  bool has_feats() const { return feats.size() > 0; }
  bool has_labels() const { return !labels.empty(); }
};

using PointCloud = PointCloudT<float>;

template <typename S>
void validate_cloud(const PointCloudT<S>& cloud, int num_classes = -1) {
  if (cloud.size() < 1) throw InvalidInputError("point cloud is empty");
  if (!cloud.coords.allFinite())
    throw InvalidInputError("point cloud has non-finite coordinates");
  if (cloud.has_feats() && cloud.feats.rows() != cloud.size())
    throw ShapeError("feature row count does not match point count");
  if (cloud.has_labels()) {
    if (static_cast<Eigen::Index>(cloud.labels.size()) != cloud.size())
      throw ShapeError("label count does not match point count");
    for (int l : cloud.labels) {
      if (l < 0 || (num_classes >= 0 && l >= num_classes))
        throw InvalidInputError("label " + std::to_string(l) + " out of range");
    }
  }
}

/// Mapping from continuous world coordinates into one plane's grid frame.
/// A cloud is scaled uniformly (largest axis extent) so that every axis lands
/// in [margin, resolution-1-margin] grid cells.
template <typename S>
struct GridSpecT {
  int resolution = 0;   // cells per side
  S margin = S(0.5);    // cells
  Vec3<S> bbox_min = Vec3<S>::Zero();
  S bbox_extent = S(1);

  void validate() const {
    if (resolution < 4) throw InvalidInputError("grid resolution must be >= 4");
    if (!(margin >= S(0.5))) throw InvalidInputError("grid margin must be >= 0.5");
    if (!(bbox_extent > S(0))) throw InvalidInputError("grid extent must be > 0");
  }
  S scale() const {
    return (S(resolution - 1) - S(2) * margin) / bbox_extent;
  }
};

using GridSpec = GridSpecT<float>;

template <typename S>
struct AffineTransformT {
  Mat3<S> matrix = Mat3<S>::Identity();
};

using AffineTransform = AffineTransformT<float>;

// ---------------------------------------------------------------------------
// Grid fitting and normalization. Coordinate-matrix overloads carry the math;
// PointCloud overloads are thin wrappers.
// ---------------------------------------------------------------------------

template <typename S>
GridSpecT<S> fit_grid_spec_coords(const PointMatrix<S>& coords, int resolution,
                                  S margin = S(0.5)) {
  if (coords.rows() < 1) throw InvalidInputError("cannot fit grid to empty cloud");
  if (!coords.allFinite())
    throw InvalidInputError("cannot fit grid: non-finite coordinates");
  GridSpecT<S> spec;
  spec.resolution = resolution;
  spec.margin = margin;
  Vec3<S> lo = coords.colwise().minCoeff().transpose();
  Vec3<S> hi = coords.colwise().maxCoeff().transpose();
  spec.bbox_min = lo;
  spec.bbox_extent = (hi - lo).maxCoeff();
  if (spec.bbox_extent == S(0)) spec.bbox_extent = S(1);  // degenerate cloud
  spec.validate();
  return spec;
}

template <typename S>
GridSpecT<S> fit_grid_spec(const PointCloudT<S>& cloud, int resolution,
                           S margin = S(0.5)) {
  validate_cloud(cloud);
  return fit_grid_spec_coords<S>(cloud.coords, resolution, margin);
}

/// u = margin + (x - bbox_min) * (R-1-2*margin) / extent, clamped to
/// [margin, R-1-margin] so the tent kernel support stays inside the grid.
template <typename S>
PointMatrix<S> normalize_to_grid_coords(const PointMatrix<S>& coords,
                                        const GridSpecT<S>& spec) {
  spec.validate();
  const S s = spec.scale();
  const S lo = spec.margin;
  const S hi = S(spec.resolution - 1) - spec.margin;
  PointMatrix<S> out(coords.rows(), 3);
  for (Eigen::Index n = 0; n < coords.rows(); ++n) {
    for (int a = 0; a < 3; ++a) {
      S u = lo + (coords(n, a) - spec.bbox_min(a)) * s;
      out(n, a) = std::min(std::max(u, lo), hi);
    }
  }
  return out;
}

template <typename S>
PointMatrix<S> normalize_to_grid(const PointCloudT<S>& cloud,
                                 const GridSpecT<S>& spec) {
  return normalize_to_grid_coords<S>(cloud.coords, spec);
}

// coords' = coords * matrix. An exact identity is a bitwise no-op (a GEMM
// with I would rewrite signed zeros).
template <typename S>
PointMatrix<S> apply_transform_coords(const PointMatrix<S>& coords,
                                      const Mat3<S>& matrix) {
  if (!matrix.allFinite())
    throw InvalidInputError("transform matrix has non-finite entries");
  if (matrix == Mat3<S>::Identity()) return coords;
  return coords * matrix;
}

template <typename S>
PointCloudT<S> apply_transform(const PointCloudT<S>& cloud,
                               const AffineTransformT<S>& t) {
  PointCloudT<S> out = cloud;
  out.coords = apply_transform_coords<S>(cloud.coords, t.matrix);
  return out;
}

/// Draws exactly n points: a Fisher-Yates prefix without replacement when
/// N >= n, uniform with replacement otherwise. Deterministic given seed.
template <typename S>
PointCloudT<S> sample_fixed_count(const PointCloudT<S>& cloud, Eigen::Index n,
                                  std::uint64_t seed) {
  if (n < 1) throw InvalidInputError("sample count must be >= 1");
  const Eigen::Index N = cloud.size();
  RandomEngine eng(seed);
  std::vector<Eigen::Index> pick(static_cast<std::size_t>(n));
  if (N >= n) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(N));
    for (Eigen::Index i = 0; i < N; ++i) idx[i] = i;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index j = i + static_cast<Eigen::Index>(bounded_rand(eng, N - i));
      std::swap(idx[i], idx[j]);
      pick[i] = idx[i];
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i)
      pick[i] = static_cast<Eigen::Index>(bounded_rand(eng, N));
  }
  PointCloudT<S> out;
  out.coords.resize(n, 3);
  if (cloud.has_feats()) out.feats.resize(n, cloud.feats.cols());
  if (cloud.has_labels()) out.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    out.coords.row(i) = cloud.coords.row(pick[i]);
    if (cloud.has_feats()) out.feats.row(i) = cloud.feats.row(pick[i]);
    if (cloud.has_labels()) out.labels[i] = cloud.labels[pick[i]];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic segmentation tasks, desk-scale stand-ins for real scan data.
// ---------------------------------------------------------------------------

enum class SyntheticKind { z_halves, quadrants, two_spheres };

inline int synthetic_num_classes(SyntheticKind kind) {
  return kind == SyntheticKind::quadrants ? 4 : 2;
}

inline SyntheticKind synthetic_kind_from_name(const std::string& name) {
  if (name == "z_halves") return SyntheticKind::z_halves;
  if (name == "quadrants") return SyntheticKind::quadrants;
  if (name == "two_spheres") return SyntheticKind::two_spheres;
  throw InvalidInputError("unknown synthetic task '" + name + "'");
}

inline int quadrant_label(double x, double y) {
  if (x > 0 && y > 0) return 0;
  if (x <= 0 && y > 0) return 1;
  if (x <= 0 && y <= 0) return 2;
  return 3;
}

/// z_halves: uniform cube, label = (z > 0). quadrants: label by XY quadrant.
/// two_spheres: two balls at (-1,0,0) and (+1,0,0), label by nearer center.
inline PointCloud make_synthetic_task(SyntheticKind kind, Eigen::Index n_points,
                                      std::uint64_t seed) {
  if (n_points < 8) throw InvalidInputError("synthetic task needs >= 8 points");
  RandomEngine eng(seed);
  PointCloud cloud;
  cloud.coords.resize(n_points, 3);
  cloud.labels.resize(static_cast<std::size_t>(n_points));
  const Eigen::Vector3f c0(-1.f, 0.f, 0.f), c1(1.f, 0.f, 0.f);
  for (Eigen::Index i = 0; i < n_points; ++i) {
    if (kind == SyntheticKind::two_spheres) {
      // rejection-sample a unit ball offset, radius 0.75, around one center
      Eigen::Vector3f p;
      do {
        p = Eigen::Vector3f(static_cast<float>(uniform_real(eng, -1, 1)),
                            static_cast<float>(uniform_real(eng, -1, 1)),
                            static_cast<float>(uniform_real(eng, -1, 1)));
      } while (p.squaredNorm() > 1.f);
      p *= 0.75f;
      p += (i % 2 == 0) ? c0 : c1;
      cloud.coords.row(i) = p.transpose();
      cloud.labels[i] = (p - c0).squaredNorm() <= (p - c1).squaredNorm() ? 0 : 1;
    } else {
      float x = static_cast<float>(uniform_real(eng, -1, 1));
      float y = static_cast<float>(uniform_real(eng, -1, 1));
      float z = static_cast<float>(uniform_real(eng, -1, 1));
      cloud.coords.row(i) << x, y, z;
      cloud.labels[i] = kind == SyntheticKind::z_halves ? (z > 0.f ? 1 : 0)
                                                        : quadrant_label(x, y);
    }
  }
  return cloud;
}

}  // namespace pbp
