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

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pbp/model.hpp"

namespace pbp {

struct GradCheckGroup {
  std::string name;
  int checked = 0;
  double max_rel = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double tolerance = 0.0;
  bool passed() const {
    for (const auto& g : groups)
      if (!g.pass) return false;
    return !groups.empty();
  }
};

namespace gcdetail {

template <typename S>
S model_loss(const ParamStoreT<S>& params, const PbpConfig& cfg,
             const TensorT<S>& coords, const std::vector<int>& labels) {
  GraphT<S> g;
  int cid = g.input(coords, false);
  ParamBinding<S> bind(g, params, /*requires_grad=*/false);
  auto ids = pbp_forward(g, bind, cfg, cid);
  int loss = segmentation_loss(g, ids.logits, labels);
  return g.value(loss).data(0);
}

}  // namespace gcdetail

/// Central finite-difference check of d(loss)/d(param) for a sample of
/// entries in every parameter tensor, plus d(loss)/d(coords). Relative error
/// uses max(|analytic|, |numeric|, floor) as denominator; `corrupt` scales
/// one parameter's analytic gradient by 1.5 to exercise the check's
/// sensitivity (test fixture use only).
template <typename S>
GradCheckReport gradcheck_model(const ParamStoreT<S>& params, const PbpConfig& cfg,
                                const TensorT<S>& coords,
                                const std::vector<int>& labels, double tolerance,
                                double step, double floor,
                                int samples_per_group = 4,
                                const std::string& corrupt = std::string(),
                                std::uint64_t seed = 7) {
  // one backward pass for all analytic gradients, including coords
  ParamStoreT<S> work = params;
  GraphT<S> g;
  int cid = g.input(coords, /*requires_grad=*/true);
  ParamBinding<S> bind(g, work, true);
  auto ids = pbp_forward(g, bind, cfg, cid);
  int loss_id = segmentation_loss(g, ids.logits, labels);
  g.backward(loss_id);
  work.zero_grads();
  bind.pull_grads(work);
  TensorT<S> coords_grad = g.grad(cid);

  RandomEngine eng(seed);
  GradCheckReport report;
  report.tolerance = tolerance;

  auto check_entry = [&](const std::string& group, TensorT<S>& target,
                         const TensorT<S>& analytic, GradCheckGroup& row) {
    const Eigen::Index n = target.size();
    const int samples =
        static_cast<int>(std::min<Eigen::Index>(samples_per_group, n));
    for (int s = 0; s < samples; ++s) {
      const Eigen::Index idx =
          static_cast<Eigen::Index>(bounded_rand(eng, static_cast<std::uint64_t>(n)));
      const S saved = target.data(idx);
      const S h = static_cast<S>(
          step * std::max(1.0, std::abs(static_cast<double>(saved))));
      target.data(idx) = saved + h;
      const double lp =
          static_cast<double>(gcdetail::model_loss(work, cfg, coords, labels));
      target.data(idx) = saved - h;
      const double lm =
          static_cast<double>(gcdetail::model_loss(work, cfg, coords, labels));
      target.data(idx) = saved;
      const double fd = (lp - lm) / (2.0 * static_cast<double>(h));
      double an = static_cast<double>(analytic.data(idx));
      if (group == corrupt) an *= 1.5;
      const double rel =
          std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
      row.max_rel = std::max(row.max_rel, rel);
      ++row.checked;
    }
    row.pass = row.max_rel <= tolerance;
  };

  // work.entries hold both values (perturbed in place) and analytic grads;
  // coords is perturbed through a mutable copy bound by reference below.
  TensorT<S> coords_work = coords;
  for (auto& e : work.entries) {
    GradCheckGroup row;
    row.name = e.name;
    TensorT<S> analytic = e.grad;
    check_entry(e.name, e.value, analytic, row);
    report.groups.push_back(row);
  }
  {
    GradCheckGroup row;
    row.name = "coords";
    const Eigen::Index n = coords_work.size();
    const int samples =
        static_cast<int>(std::min<Eigen::Index>(samples_per_group, n));
    for (int s = 0; s < samples; ++s) {
      const Eigen::Index idx =
          static_cast<Eigen::Index>(bounded_rand(eng, static_cast<std::uint64_t>(n)));
      const S saved = coords_work.data(idx);
      const S h = static_cast<S>(
          step * std::max(1.0, std::abs(static_cast<double>(saved))));
      coords_work.data(idx) = saved + h;
      const double lp = static_cast<double>(
          gcdetail::model_loss(work, cfg, coords_work, labels));
      coords_work.data(idx) = saved - h;
      const double lm = static_cast<double>(
          gcdetail::model_loss(work, cfg, coords_work, labels));
      coords_work.data(idx) = saved;
      const double fd = (lp - lm) / (2.0 * static_cast<double>(h));
      double an = static_cast<double>(coords_grad.data(idx));
      if (corrupt == "coords") an *= 1.5;
      const double rel =
          std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
      row.max_rel = std::max(row.max_rel, rel);
      ++row.checked;
    }
    row.pass = row.max_rel <= tolerance;
    report.groups.push_back(row);
  }
  return report;
}

}  // namespace pbp
