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

#include <string>
#include <utility>
#include <vector>

#include "pbp/pointcloud.hpp"
#include "pbp/tensor.hpp"

namespace pbp {

/// One sample reference: either a file pair or a synthetic seed.
struct SampleRef {
  bool synthetic = false;
  std::string points_path;   // file-backed samples
  std::string labels_path;   // optional .seg companion
  SyntheticKind kind = SyntheticKind::z_halves;
  std::uint64_t seed = 0;
  Eigen::Index synth_points = 0;
  int category = 0;
  int label_offset = 0;      // category-local ids shift into the global space
  int local_parts = 0;       // 0 = unconstrained (labels already global)
  std::string name;
};

struct DatasetSplit {
  std::vector<SampleRef> samples;
  int num_classes = 0;
  std::vector<std::string> category_names;
  // global part-id range [begin, end) per category; empty when flat-labelled
  std::vector<std::pair<int, int>> category_part_range;

  std::size_t size() const { return samples.size(); }
};

/// Parses lines of ASCII "x y z [label]"; '#' comments and blank lines are
/// skipped. Labels are all-or-nothing across data lines.
PointCloud load_points_text(const std::string& path);

/// Directory of *.pts / *.txt / *.xyz point files (or a single file), with
/// inline labels; the class count is the max label + 1 across the split.
DatasetSplit load_points_dir(const std::string& path);

/// ShapeNet-Part layout: <root>/<category>/points/*.pts with matching
/// <root>/<category>/points_label/*.seg (one 1-based local part id per line).
/// Local ids are remapped to the global part-id space via per-category
/// offsets derived from all categories under the root. `split` is one of
/// train/test/all; an optional <root>/<category>/<split>.txt stem list takes
/// precedence, otherwise a deterministic modulo rule partitions the sorted
/// samples (every 7th to test).
DatasetSplit load_shapenet_part(const std::string& root,
                                const std::string& category,
                                const std::string& split);

DatasetSplit make_synthetic_split(SyntheticKind kind, int count,
                                  Eigen::Index points_per_cloud,
                                  std::uint64_t seed);

/// Loads (or generates) one sample with labels mapped to the global space.
PointCloud load_sample(const DatasetSplit& split, std::size_t index);

struct Batch {
  Tensor coords;                           // {B, N, 3}
  std::vector<int> labels;                 // B * N, row-major with coords
  std::vector<int> categories;             // B
  std::vector<std::size_t> sample_indices; // B
  Eigen::Index batch_size() const { return coords.rank() == 3 ? coords.dim(0) : 0; }
};

/// Deterministic epoch iterator: shuffles sample order per epoch from the
/// seed, enforces a fixed point count per cloud, and emits the final partial
/// batch as-is.
class BatchIterator {
 public:
  BatchIterator(const DatasetSplit& split, int batch_size,
                Eigen::Index points_per_cloud, std::uint64_t seed);

  void begin_epoch(int epoch);
  bool next(Batch& out);

  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const DatasetSplit* split_;
  int batch_size_;
  Eigen::Index points_;
  std::uint64_t seed_;
  int epoch_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace pbp
