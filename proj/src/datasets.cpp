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
#include "pbp/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace pbp {

namespace {

bool is_comment_or_blank(const std::string& line) {
  for (char ch : line) {
    if (std::isspace(static_cast<unsigned char>(ch))) continue;
    return ch == '#';
  }
  return true;
}

std::vector<std::string> sorted_stems(const fs::path& dir,
                                      const std::vector<std::string>& exts) {
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (std::find(exts.begin(), exts.end(), ext) != exts.end())
      stems.push_back(e.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  return stems;
}

std::vector<int> read_label_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label file " + path);
  std::vector<int> labels;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_comment_or_blank(line)) continue;
    std::istringstream ss(line);
    int v;
    if (!(ss >> v))
      throw DataError("malformed label in " + path + " line " +
                      std::to_string(lineno));
    labels.push_back(v);
  }
  return labels;
}

}  // namespace

PointCloud load_points_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open point file " + path);
  std::vector<float> coords;
  std::vector<int> labels;
  bool has_labels = false;
  std::string line;
  int lineno = 0, datalines = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_comment_or_blank(line)) continue;
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x >> y >> z))
      throw DataError("parse error in " + path + " line " +
                      std::to_string(lineno) + ": expected 'x y z [label]'");
    long label = -1;
    bool line_has_label = false;
    std::string rest;
    if (ss >> rest) {
      std::size_t used = 0;
      try {
        label = std::stol(rest, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != rest.size())
        throw DataError("parse error in " + path + " line " +
                        std::to_string(lineno) + ": bad label '" + rest + "'");
      line_has_label = true;
      std::string extra;
      if (ss >> extra)
        throw DataError("parse error in " + path + " line " +
                        std::to_string(lineno) + ": trailing tokens");
    }
    if (datalines == 0) {
      has_labels = line_has_label;
    } else if (line_has_label != has_labels) {
      throw DataError("parse error in " + path + " line " +
                      std::to_string(lineno) + ": mixed labeled/unlabeled lines");
    }
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
      throw InvalidInputError("non-finite coordinate in " + path + " line " +
                              std::to_string(lineno));
    if (line_has_label && label < 0)
      throw DataError("negative label in " + path + " line " +
                      std::to_string(lineno));
    coords.push_back(static_cast<float>(x));
    coords.push_back(static_cast<float>(y));
    coords.push_back(static_cast<float>(z));
    if (line_has_label) labels.push_back(static_cast<int>(label));
    ++datalines;
  }
  if (datalines == 0) throw InvalidInputError("point file " + path + " is empty");

  PointCloud cloud;
  cloud.coords.resize(datalines, 3);
  for (int i = 0; i < datalines; ++i)
    cloud.coords.row(i) << coords[3 * i], coords[3 * i + 1], coords[3 * i + 2];
  if (has_labels) cloud.labels = std::move(labels);
  validate_cloud(cloud);
  return cloud;
}

DatasetSplit load_points_dir(const std::string& path) {
  DatasetSplit split;
  split.category_names = {"points"};
  std::vector<std::string> files;
  fs::path p(path);
  if (!fs::exists(p)) throw DataError("path does not exist: " + path);
  if (fs::is_directory(p)) {
    for (const auto& e : fs::directory_iterator(p)) {
      if (!e.is_regular_file()) continue;
      const std::string ext = e.path().extension().string();
      if (ext == ".pts" || ext == ".txt" || ext == ".xyz")
        files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no point files under " + path);
  } else {
    files.push_back(path);
  }
  int max_label = -1;
  for (const auto& f : files) {
    PointCloud cloud = load_points_text(f);
    if (!cloud.has_labels())
      throw DataError("sample " + f + " has no labels");
    for (int l : cloud.labels) max_label = std::max(max_label, l);
    SampleRef ref;
    ref.points_path = f;
    ref.name = f;
    split.samples.push_back(std::move(ref));
  }
  split.num_classes = max_label + 1;
  if (split.num_classes < 1) throw DataError("no labels found under " + path);
  split.category_part_range = {{0, split.num_classes}};
  return split;
}

DatasetSplit load_shapenet_part(const std::string& root,
                                const std::string& category,
                                const std::string& split_name) {
  if (split_name != "train" && split_name != "test" && split_name != "all")
    throw DataError("unknown split '" + split_name + "' (train|test|all)");
  fs::path rootp(root);
  if (!fs::is_directory(rootp)) throw DataError("dataset root not found: " + root);

  // Every category under the root participates in the global part-id space.
  std::vector<std::string> categories;
  for (const auto& e : fs::directory_iterator(rootp))
    if (e.is_directory() && fs::is_directory(e.path() / "points"))
      categories.push_back(e.path().filename().string());
  std::sort(categories.begin(), categories.end());
  if (categories.empty()) throw DataError("no category directories under " + root);

  DatasetSplit out;
  out.category_names = categories;
  std::vector<int> parts_per_category(categories.size(), 0);
  int offset = 0;
  int wanted = -1;
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const fs::path cdir = rootp / categories[c];
    const auto stems = sorted_stems(cdir / "points", {".pts", ".txt"});
    int max_part = 0;
    for (const auto& stem : stems) {
      const fs::path seg = cdir / "points_label" / (stem + ".seg");
      if (!fs::exists(seg))
        throw DataError("missing label file for sample " + categories[c] + "/" +
                        stem);
      for (int v : read_label_file(seg.string())) {
        if (v < 1)
          throw DataError("label id " + std::to_string(v) + " in " +
                          seg.string() + " is not a 1-based part id");
        max_part = std::max(max_part, v);
      }
    }
    parts_per_category[c] = std::max(max_part, 1);
    out.category_part_range.emplace_back(offset, offset + parts_per_category[c]);
    if (categories[c] == category) wanted = static_cast<int>(c);
    offset += parts_per_category[c];
  }
  out.num_classes = offset;
  if (category != "all" && wanted < 0)
    throw DataError("unknown category '" + category + "' under " + root);

  for (std::size_t c = 0; c < categories.size(); ++c) {
    if (category != "all" && static_cast<int>(c) != wanted) continue;
    const fs::path cdir = rootp / categories[c];
    std::vector<std::string> stems = sorted_stems(cdir / "points", {".pts", ".txt"});
    // optional explicit split list, else deterministic modulo partition
    const fs::path listfile = cdir / (split_name + ".txt");
    if (split_name != "all" && fs::exists(listfile)) {
      std::ifstream in(listfile.string());
      stems.clear();
      std::string line;
      while (std::getline(in, line)) {
        if (is_comment_or_blank(line)) continue;
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back())))
          line.pop_back();
        stems.push_back(line);
      }
    } else if (split_name != "all") {
      std::vector<std::string> filtered;
      for (std::size_t i = 0; i < stems.size(); ++i) {
        const bool test = i % 7 == 0;
        if ((split_name == "test") == test) filtered.push_back(stems[i]);
      }
      stems = std::move(filtered);
    }
    for (const auto& stem : stems) {
      SampleRef ref;
      ref.points_path = (cdir / "points" / (stem + ".pts")).string();
      if (!fs::exists(ref.points_path))
        ref.points_path = (cdir / "points" / (stem + ".txt")).string();
      ref.labels_path = (cdir / "points_label" / (stem + ".seg")).string();
      if (!fs::exists(ref.points_path) || !fs::exists(ref.labels_path))
        throw DataError("missing files for sample " + categories[c] + "/" + stem);
      ref.category = static_cast<int>(c);
      ref.label_offset = out.category_part_range[c].first;
      ref.local_parts = parts_per_category[c];
      ref.name = categories[c] + "/" + stem;
      out.samples.push_back(std::move(ref));
    }
  }
  return out;
}

DatasetSplit make_synthetic_split(SyntheticKind kind, int count,
                                  Eigen::Index points_per_cloud,
                                  std::uint64_t seed) {
  if (count < 1) throw InvalidInputError("synthetic split needs >= 1 sample");
  DatasetSplit out;
  out.num_classes = synthetic_num_classes(kind);
  out.category_names = {"synthetic"};
  out.category_part_range = {{0, out.num_classes}};
  for (int i = 0; i < count; ++i) {
    SampleRef ref;
    ref.synthetic = true;
    ref.kind = kind;
    ref.seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    ref.synth_points = points_per_cloud;
    ref.name = "synthetic/" + std::to_string(i);
    out.samples.push_back(std::move(ref));
  }
  return out;
}

PointCloud load_sample(const DatasetSplit& split, std::size_t index) {
  if (index >= split.samples.size())
    throw InvalidInputError("sample index out of range");
  const SampleRef& ref = split.samples[index];
  if (ref.synthetic)
    return make_synthetic_task(ref.kind, ref.synth_points, ref.seed);

  PointCloud cloud = load_points_text(ref.points_path);
  if (!ref.labels_path.empty()) {
    std::vector<int> local = read_label_file(ref.labels_path);
    if (static_cast<Eigen::Index>(local.size()) != cloud.size())
      throw DataError("label count mismatch for sample " + ref.name);
    cloud.labels.resize(local.size());
    for (std::size_t i = 0; i < local.size(); ++i) {
      const int zero_based = local[i] - 1;  // files carry 1-based local ids
      if (zero_based < 0 || (ref.local_parts > 0 && zero_based >= ref.local_parts))
        throw DataError("label out of range in sample " + ref.name);
      cloud.labels[i] = ref.label_offset + zero_based;
    }
  }
  if (!cloud.has_labels()) throw DataError("sample " + ref.name + " has no labels");
  validate_cloud(cloud, split.num_classes);
  return cloud;
}

BatchIterator::BatchIterator(const DatasetSplit& split, int batch_size,
                             Eigen::Index points_per_cloud, std::uint64_t seed)
    : split_(&split), batch_size_(batch_size), points_(points_per_cloud),
      seed_(seed) {
  if (batch_size < 1) throw InvalidInputError("batch size must be >= 1");
  if (points_per_cloud < 1) throw InvalidInputError("points per cloud must be >= 1");
  begin_epoch(0);
}

void BatchIterator::begin_epoch(int epoch) {
  epoch_ = epoch;
  cursor_ = 0;
  order_.resize(split_->size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  RandomEngine eng(mix_seed(seed_, 0x9000 + static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = 0; i + 1 < order_.size(); ++i) {
    const std::size_t j =
        i + static_cast<std::size_t>(bounded_rand(eng, order_.size() - i));
    std::swap(order_[i], order_[j]);
  }
}

bool BatchIterator::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t take = std::min<std::size_t>(
      static_cast<std::size_t>(batch_size_), order_.size() - cursor_);
  const Eigen::Index B = static_cast<Eigen::Index>(take);
  out.coords = Tensor::zeros({B, points_, 3});
  out.labels.assign(static_cast<std::size_t>(B * points_), 0);
  out.categories.resize(take);
  out.sample_indices.resize(take);
  for (std::size_t b = 0; b < take; ++b) {
    const std::size_t idx = order_[cursor_ + b];
    PointCloud cloud = load_sample(*split_, idx);
    cloud = sample_fixed_count(
        cloud, points_,
        mix_seed(seed_, 0x51000000ull +
                            (static_cast<std::uint64_t>(epoch_) << 24) + idx));
    for (Eigen::Index n = 0; n < points_; ++n) {
      for (int a = 0; a < 3; ++a)
        out.coords.data((static_cast<Eigen::Index>(b) * points_ + n) * 3 + a) =
            cloud.coords(n, a);
      out.labels[b * static_cast<std::size_t>(points_) +
                 static_cast<std::size_t>(n)] = cloud.labels[n];
    }
    out.categories[b] = split_->samples[idx].category;
    out.sample_indices[b] = idx;
  }
  cursor_ += take;
  return true;
}

}  // namespace pbp
