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
#include <vector>

#include "pbp/model.hpp"

namespace pbp {

/// Everything a run needs: the model configuration plus dataset and
/// optimization knobs. Parsed from `key = value` files with flag overrides.
struct RunConfig {
  // model
  int resolution = 64;
  int classes = 0;  // 0 = derive from dataset
  std::string planes = "xy,yz,zx";
  bool tnet = true;
  bool multiscale = true;
  bool additional = true;
  bool shared_backbone = true;
  int shallow_dim = 16;
  int additional_dim = 32;
  double margin = 0.5;
  bool coord_grad = true;

  // dataset
  std::string dataset = "z_halves";  // z_halves|quadrants|two_spheres|points|shapenet
  std::string data_path;
  std::string category = "all";
  int train_count = 32;
  int test_count = 8;
  long points = 2048;  // points sampled per cloud

  // optimization
  int epochs = 50;
  int batch = 8;
  double lr = 0.001;
  double lr_decay = 0.5;
  long lr_decay_step = 200000;
  double stop_at_acc = 0.0;  // 0 = disabled
  std::uint64_t seed = 1;
  bool deterministic = false;

  // artifacts
  std::string checkpoint;
  std::string log;
  std::string report;

  void validate() const;
  PbpConfig model_config(int resolved_classes) const;
  std::vector<PlaneId> plane_list() const;
};

/// Applies one `key = value` assignment; unknown keys and malformed values
/// throw ConfigError naming the key.
void apply_config_kv(RunConfig& cfg, const std::string& key,
                     const std::string& value);

/// Reads a config file (lines of `key = value`, '#' comments) and then the
/// `key=value` overrides, in order. Empty path = defaults + overrides.
RunConfig parse_config(const std::string& path,
                       const std::vector<std::string>& overrides);

}  // namespace pbp
