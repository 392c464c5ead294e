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

#include <optional>
#include <ostream>
#include <vector>

#include "pbp/config.hpp"
#include "pbp/datasets.hpp"
#include "pbp/gradcheck.hpp"
#include "pbp/metrics.hpp"
#include "pbp/model.hpp"

namespace pbp {

DatasetSplit build_split(const RunConfig& cfg, bool train);
int resolve_classes(const RunConfig& cfg, const DatasetSplit& split);

struct EpochRecord {
  int epoch;
  double loss;
  double accuracy;
  double lr;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  PbpConfig model;
  ParamStore params;
};

/// Adam training with step-based lr decay; logs one record per epoch, writes
/// the checkpoint at the end and on best epoch loss (path + ".best").
TrainResult run_train(const RunConfig& cfg, std::ostream* console);

/// Mean loss and correct-prediction count for one batch; parameter gradients
/// are accumulated into `params` (per-element graphs reduced in element
/// order, so results are independent of the thread count).
std::pair<double, long> batch_loss_and_grads(ParamStore& params,
                                             const PbpConfig& model,
                                             const Batch& batch, int threads);

struct EvalResult {
  int classes = 0;
  double miou = 0.0;
  double accuracy = 0.0;
  std::optional<double> mciou;
};

/// Per-shape evaluation of a split with in-memory parameters.
EvalResult evaluate_split(const ParamStore& params, const PbpConfig& model,
                          const DatasetSplit& split, const RunConfig& cfg,
                          ConfusionMatrix* cm_out = nullptr);

/// Loads the checkpoint, evaluates the test split, prints the report table
/// and writes the key-value report when configured.
EvalResult run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                    std::ostream* console);

/// Finite-difference check on a tiny fixture (8 points, R=8) at 64-bit;
/// one report row per parameter tensor plus the coordinate input.
GradCheckReport run_gradcheck(const RunConfig& cfg, double tolerance,
                              std::ostream* console);

struct AblateRow {
  int num_planes;
  bool tnet;
  bool multiscale;
  bool additional;
  double miou;
};

/// Trains and evaluates the {planes} x {tnet} x {multiscale} x {additional}
/// grid (24 variants) under one seed.
std::vector<AblateRow> run_ablate(const RunConfig& cfg, std::ostream* console);

}  // namespace pbp
