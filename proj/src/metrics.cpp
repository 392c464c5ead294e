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
#include "pbp/metrics.hpp"

#include <iomanip>
#include <string>

namespace pbp {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1) throw InvalidInputError("confusion matrix needs K >= 1");
  counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

std::uint64_t ConfusionMatrix::at(int truth, int pred) const {
  if (truth < 0 || truth >= k_ || pred < 0 || pred >= k_)
    throw InvalidInputError("confusion matrix index out of range");
  return counts_[static_cast<std::size_t>(truth) * k_ + pred];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (std::uint64_t c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::truth_count(int c) const {
  std::uint64_t t = 0;
  for (int p = 0; p < k_; ++p) t += at(c, p);
  return t;
}

std::uint64_t ConfusionMatrix::pred_count(int c) const {
  std::uint64_t t = 0;
  for (int g = 0; g < k_; ++g) t += at(g, c);
  return t;
}

void ConfusionMatrix::update(const std::vector<int>& pred,
                             const std::vector<int>& truth) {
  if (pred.size() != truth.size())
    throw InvalidInputError("confusion update: size mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], t = truth[i];
    if (p < 0 || p >= k_ || t < 0 || t >= k_)
      throw InvalidInputError("confusion update: class id out of range at index " +
                              std::to_string(i));
    counts_[static_cast<std::size_t>(t) * k_ + p] += 1;
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("confusion merge: K mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::optional<double> class_iou(const ConfusionMatrix& cm, int c) {
  const std::uint64_t tp = cm.at(c, c);
  const std::uint64_t t = cm.truth_count(c);
  const std::uint64_t p = cm.pred_count(c);
  if (t + p == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(t + p - tp);
}

double mean_iou(const ConfusionMatrix& cm) {
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < cm.num_classes(); ++c) {
    if (auto iou = class_iou(cm, c)) {
      sum += *iou;
      ++defined;
    }
  }
  if (defined == 0) throw NumericError("mean_iou: no class has support");
  return sum / defined;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw NumericError("accuracy: empty confusion matrix");
  std::uint64_t diag = 0;
  for (int c = 0; c < cm.num_classes(); ++c) diag += cm.at(c, c);
  return static_cast<double>(diag) / static_cast<double>(total);
}

double shape_mean_part_iou(const std::vector<int>& pred,
                           const std::vector<int>& truth, int part_begin,
                           int part_end) {
  if (pred.size() != truth.size())
    throw InvalidInputError("shape iou: size mismatch");
  if (part_end <= part_begin) throw InvalidInputError("shape iou: empty part range");
  double sum = 0.0;
  for (int c = part_begin; c < part_end; ++c) {
    std::uint64_t tp = 0, t = 0, p = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool in_t = truth[i] == c, in_p = pred[i] == c;
      tp += in_t && in_p;
      t += in_t;
      p += in_p;
    }
    sum += (t + p == 0) ? 1.0
                        : static_cast<double>(tp) / static_cast<double>(t + p - tp);
  }
  return sum / (part_end - part_begin);
}

double category_mean_iou(const std::vector<std::vector<double>>& ious_by_category) {
  if (ious_by_category.empty())
    throw InvalidInputError("category_mean_iou: no categories");
  double sum = 0.0;
  for (std::size_t c = 0; c < ious_by_category.size(); ++c) {
    const auto& shapes = ious_by_category[c];
    if (shapes.empty())
      throw InvalidInputError("category_mean_iou: empty category " +
                              std::to_string(c));
    double s = 0.0;
    for (double v : shapes) s += v;
    sum += s / shapes.size();
  }
  return sum / ious_by_category.size();
}

void write_report_table(std::ostream& os, const ConfusionMatrix& cm) {
  os << "class      iou  support\n";
  for (int c = 0; c < cm.num_classes(); ++c) {
    auto iou = class_iou(cm, c);
    if (!iou) continue;  // undefined classes are excluded from the report
    os << std::setw(5) << c << " " << std::setw(8) << std::fixed
       << std::setprecision(4) << *iou << " " << std::setw(8)
       << cm.truth_count(c) << "\n";
  }
  os << "miou " << std::setw(8) << std::fixed << std::setprecision(4)
     << mean_iou(cm) << "\n";
  os << "accuracy " << std::setw(8) << std::fixed << std::setprecision(4)
     << overall_accuracy(cm) << "\n";
}

void write_report_kv(std::ostream& os, const ConfusionMatrix& cm) {
  os << std::setprecision(10);
  for (int c = 0; c < cm.num_classes(); ++c) {
    auto iou = class_iou(cm, c);
    if (!iou) continue;
    os << "iou." << c << " = " << *iou << "\n";
    os << "support." << c << " = " << cm.truth_count(c) << "\n";
  }
  os << "miou = " << mean_iou(cm) << "\n";
  os << "accuracy = " << overall_accuracy(cm) << "\n";
}

}  // namespace pbp
