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

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "pbp/common.hpp"

namespace pbp {

/// K x K accumulation of (ground truth, prediction) counts.
/// Rows index ground truth, columns index prediction; counts only grow.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return k_; }
  std::uint64_t at(int truth, int pred) const;
  std::uint64_t total() const;
  std::uint64_t truth_count(int c) const;  // T_c
  std::uint64_t pred_count(int c) const;   // P_c

  void update(const std::vector<int>& pred, const std::vector<int>& truth);
  void merge(const ConfusionMatrix& other);

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

inline void confusion_update(ConfusionMatrix& cm, const std::vector<int>& pred,
                             const std::vector<int>& truth) {
  cm.update(pred, truth);
}

/// IoU_c = TP / (T + P - TP); empty union yields no value.
std::optional<double> class_iou(const ConfusionMatrix& cm, int c);

/// Mean over classes with non-empty union. Throws when no class is defined.
double mean_iou(const ConfusionMatrix& cm);

double overall_accuracy(const ConfusionMatrix& cm);

/// Per-shape IoU averaged over the parts in [part_begin, part_end);
/// parts absent from both prediction and truth count as 1.0.
double shape_mean_part_iou(const std::vector<int>& pred,
                           const std::vector<int>& truth, int part_begin,
                           int part_end);

/// Mean over categories of the mean per-shape IoU within each category.
double category_mean_iou(const std::vector<std::vector<double>>& ious_by_category);

void write_report_table(std::ostream& os, const ConfusionMatrix& cm);
void write_report_kv(std::ostream& os, const ConfusionMatrix& cm);

}  // namespace pbp
