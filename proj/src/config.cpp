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
#include "pbp/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace pbp {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no")
    return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + value + "'");
}

long parse_long(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size())
    throw ConfigError("key '" + key + "': expected an integer, got '" + value + "'");
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size())
    throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
  return v;
}

}  // namespace

std::vector<PlaneId> RunConfig::plane_list() const {
  std::vector<PlaneId> out;
  std::stringstream ss(planes);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    if (item == "xy") out.push_back(PlaneId::XY);
    else if (item == "yz") out.push_back(PlaneId::YZ);
    else if (item == "zx") out.push_back(PlaneId::ZX);
    else throw ConfigError("key 'planes': unknown plane '" + item + "'");
  }
  if (out.empty()) throw ConfigError("key 'planes': at least one plane required");
  return out;
}

void RunConfig::validate() const {
  if (epochs < 1) throw ConfigError("key 'epochs': must be >= 1");
  if (!(lr > 0)) throw ConfigError("key 'lr': learning rate must be > 0");
  if (!(lr_decay > 0) || lr_decay > 1)
    throw ConfigError("key 'lr_decay': decay factor must be in (0, 1]");
  if (lr_decay_step < 1) throw ConfigError("key 'lr_decay_step': must be >= 1");
  if (batch < 1) throw ConfigError("key 'batch': must be >= 1");
  if (points < 1) throw ConfigError("key 'points': must be >= 1");
  if (train_count < 1) throw ConfigError("key 'train_count': must be >= 1");
  if (test_count < 1) throw ConfigError("key 'test_count': must be >= 1");
  if (classes < 0) throw ConfigError("key 'classes': must be >= 0");
  if (stop_at_acc < 0 || stop_at_acc > 1)
    throw ConfigError("key 'stop_at_acc': must be in [0, 1]");
  if (dataset != "z_halves" && dataset != "quadrants" && dataset != "two_spheres" &&
      dataset != "points" && dataset != "shapenet")
    throw ConfigError("key 'dataset': unknown dataset '" + dataset + "'");
  if ((dataset == "points" || dataset == "shapenet") && data_path.empty())
    throw ConfigError("key 'data_path': required for dataset '" + dataset + "'");
  model_config(std::max(classes, 2));  // validates model-side constraints
}

PbpConfig RunConfig::model_config(int resolved_classes) const {
  PbpConfig m;
  m.resolution = resolution;
  m.num_classes = resolved_classes;
  m.planes = plane_list();
  m.use_tnet = tnet;
  m.use_multiscale = multiscale;
  m.use_additional = additional;
  m.shared_backbone = shared_backbone;
  m.shallow_dim = shallow_dim;
  m.additional_dim = additional_dim;
  m.margin = margin;
  m.coord_grad = coord_grad;
  m.scatter_mode =
      deterministic ? Accumulation::sorted : Accumulation::index_order;
  m.validate();
  return m;
}

void apply_config_kv(RunConfig& cfg, const std::string& rawkey,
                     const std::string& rawvalue) {
  const std::string key = trim(rawkey);
  const std::string value = trim(rawvalue);
  if (key.empty()) throw ConfigError("empty config key");

  if (key == "resolution") cfg.resolution = static_cast<int>(parse_long(key, value));
  else if (key == "classes") cfg.classes = static_cast<int>(parse_long(key, value));
  else if (key == "planes") cfg.planes = value;
  else if (key == "tnet") cfg.tnet = parse_bool(key, value);
  else if (key == "multiscale") cfg.multiscale = parse_bool(key, value);
  else if (key == "additional") cfg.additional = parse_bool(key, value);
  else if (key == "shared_backbone") cfg.shared_backbone = parse_bool(key, value);
  else if (key == "shallow_dim") cfg.shallow_dim = static_cast<int>(parse_long(key, value));
  else if (key == "additional_dim") cfg.additional_dim = static_cast<int>(parse_long(key, value));
  else if (key == "margin") cfg.margin = parse_double(key, value);
  else if (key == "coord_grad") cfg.coord_grad = parse_bool(key, value);
  else if (key == "dataset") cfg.dataset = value;
  else if (key == "data_path") cfg.data_path = value;
  else if (key == "category") cfg.category = value;
  else if (key == "train_count") cfg.train_count = static_cast<int>(parse_long(key, value));
  else if (key == "test_count") cfg.test_count = static_cast<int>(parse_long(key, value));
  else if (key == "points") cfg.points = parse_long(key, value);
  else if (key == "epochs") cfg.epochs = static_cast<int>(parse_long(key, value));
  else if (key == "batch") cfg.batch = static_cast<int>(parse_long(key, value));
  else if (key == "lr") cfg.lr = parse_double(key, value);
  else if (key == "lr_decay") cfg.lr_decay = parse_double(key, value);
  else if (key == "lr_decay_step") cfg.lr_decay_step = parse_long(key, value);
  else if (key == "stop_at_acc") cfg.stop_at_acc = parse_double(key, value);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_long(key, value));
  else if (key == "deterministic") cfg.deterministic = parse_bool(key, value);
  else if (key == "checkpoint") cfg.checkpoint = value;
  else if (key == "log") cfg.log = value;
  else if (key == "report") cfg.report = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& path,
                       const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const std::size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) +
                          " is not 'key = value': " + t);
      apply_config_kv(cfg, t.substr(0, eq), t.substr(eq + 1));
    }
  }
  for (const std::string& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override is not key=value: " + ov);
    apply_config_kv(cfg, ov.substr(0, eq), ov.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

}  // namespace pbp
