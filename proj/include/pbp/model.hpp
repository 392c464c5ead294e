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

#include <array>
#include <string>
#include <vector>

#include "pbp/adam.hpp"
#include "pbp/ops.hpp"
#include "pbp/params.hpp"

// Full network assembly: mini T-Net alignment, shallow point features,
// per-plane scatter, the channel-reduced multi-scale 2D backbone, per-plane
// gather, plane-sum + channel-concat fusion, the additional point-wise
// branch, and the classifier head.

namespace pbp {

struct PbpConfig {
  int resolution = 64;            // plane cells per side (224 at paper scale)
  int num_classes = 2;
  std::vector<PlaneId> planes = {PlaneId::XY, PlaneId::YZ, PlaneId::ZX};
  bool use_tnet = true;
  bool use_multiscale = true;
  bool use_additional = true;
  bool shared_backbone = true;    // one backbone for all planes
  int shallow_dim = 16;
  int additional_dim = 32;
  double margin = 0.5;
  bool coord_grad = true;         // gradients through scatter/gather coords
  Accumulation scatter_mode = Accumulation::index_order;

  void validate() const {
    if (planes.empty()) throw ConfigError("at least one projection plane required");
    if (resolution < 4) throw ConfigError("resolution must be >= 4");
    if (resolution % 4 != 0) throw ConfigError("resolution must be divisible by 4");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (shallow_dim < 1) throw ConfigError("shallow_dim must be >= 1");
    if (additional_dim < 1) throw ConfigError("additional_dim must be >= 1");
    if (!(margin >= 0.5)) throw ConfigError("margin must be >= 0.5");
    for (std::size_t i = 0; i < planes.size(); ++i)
      for (std::size_t j = i + 1; j < planes.size(); ++j)
        if (planes[i] == planes[j]) throw ConfigError("duplicate plane in config");
  }

  std::vector<int> scale_channels() const {
    return use_multiscale ? std::vector<int>{128, 64, 16} : std::vector<int>{16};
  }
  std::vector<int> scale_strides() const {
    return use_multiscale ? std::vector<int>{4, 2, 1} : std::vector<int>{1};
  }
  int fused_width() const {
    int w = 0;
    for (int c : scale_channels()) w += c;
    return w;
  }
  int head_input_width() const {
    return fused_width() + (use_additional ? additional_dim : 0);
  }
};

namespace modeldetail {

constexpr int kTnetPointChannels[3] = {32, 64, 128};
constexpr int kTnetHeadChannels[2] = {64, 32};

template <typename S>
void add_dense_params(ParamStoreT<S>& store, RandomEngine& eng,
                      const std::string& name, Eigen::Index fin, Eigen::Index fout) {
  store.add(name + ".w", fan_in_init<S>({fin, fout}, fin, eng));
  store.add(name + ".b", TensorT<S>::zeros({fout}));
}

template <typename S>
void add_conv_params(ParamStoreT<S>& store, RandomEngine& eng,
                     const std::string& name, Eigen::Index cin, Eigen::Index cout) {
  store.add(name + ".k", fan_in_init<S>({3, 3, cin, cout}, 9 * cin, eng));
  store.add(name + ".b", TensorT<S>::zeros({cout}));
}

// Mini T-Net parameters; the final layer emits the flattened identity.
template <typename S>
void add_tnet_params(ParamStoreT<S>& store, RandomEngine& eng,
                     const std::string& prefix) {
  int in = 3;
  for (int i = 0; i < 3; ++i) {
    add_dense_params(store, eng, prefix + ".mlp" + std::to_string(i + 1), in,
                     kTnetPointChannels[i]);
    in = kTnetPointChannels[i];
  }
  for (int i = 0; i < 2; ++i) {
    add_dense_params(store, eng, prefix + ".fc" + std::to_string(i + 1), in,
                     kTnetHeadChannels[i]);
    in = kTnetHeadChannels[i];
  }
  store.add(prefix + ".fc3.w", TensorT<S>::zeros({Eigen::Index(in), 9}));
  TensorT<S> ident({9});
  ident.data(0) = ident.data(4) = ident.data(8) = S(1);
  store.add(prefix + ".fc3.b", std::move(ident));
}

template <typename S>
void add_backbone_params(ParamStoreT<S>& store, RandomEngine& eng,
                         const std::string& prefix, int in_channels) {
  add_conv_params(store, eng, prefix + ".enc1", in_channels, 32);
  add_conv_params(store, eng, prefix + ".enc2", 32, 64);
  add_conv_params(store, eng, prefix + ".enc3", 64, 128);
  add_conv_params(store, eng, prefix + ".dec1", 128, 64);
  add_conv_params(store, eng, prefix + ".dec2", 64, 16);
}

}  // namespace modeldetail

template <typename S>
std::string backbone_prefix(const PbpConfig& cfg, PlaneId plane) {
  return cfg.shared_backbone ? std::string("backbone")
                             : std::string("backbone.") + plane_name(plane);
}

/// Creates all learnable parameters for a config, in checkpoint order,
/// deterministically from the seed.
template <typename S>
ParamStoreT<S> init_params(const PbpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RandomEngine eng(mix_seed(seed, 0xBB));
  ParamStoreT<S> store;
  if (cfg.use_tnet) modeldetail::add_tnet_params(store, eng, "tnet");
  modeldetail::add_dense_params(store, eng, "shallow", 3, cfg.shallow_dim);
  if (cfg.shared_backbone) {
    modeldetail::add_backbone_params(store, eng, "backbone", cfg.shallow_dim);
  } else {
    for (PlaneId p : cfg.planes)
      modeldetail::add_backbone_params(
          store, eng, std::string("backbone.") + plane_name(p), cfg.shallow_dim);
  }
  if (cfg.use_additional) {
    modeldetail::add_tnet_params(store, eng, "add.tnet");
    modeldetail::add_dense_params(store, eng, "add.fc1", 3, 32);
    modeldetail::add_dense_params(store, eng, "add.fc2", 32, cfg.additional_dim);
  }
  modeldetail::add_dense_params(store, eng, "head.fc1", cfg.head_input_width(), 128);
  modeldetail::add_dense_params(store, eng, "head.fc2", 128, 64);
  modeldetail::add_dense_params(store, eng, "head.fc3", 64, cfg.num_classes);
  return store;
}

// ---------------------------------------------------------------------------
// graph builders
// ---------------------------------------------------------------------------

/// Mini T-Net: shared per-point MLP 3->32->64->128, global max-pool,
/// dense 128->64->32->9 reshaped to one 3x3 transform per batch element.
/// Identity at initialization.
template <typename S>
int tnet_forward(GraphT<S>& g, ParamBinding<S>& P, const std::string& prefix,
                 int coords) {
  const auto& cv = g.value(coords);
  const Eigen::Index B = cv.dim(0), N = cv.dim(1);
  int x = reshape(g, coords, {B * N, 3});
  for (int i = 1; i <= 3; ++i) {
    const std::string name = prefix + ".mlp" + std::to_string(i);
    x = relu(g, dense(g, x, P(name + ".w"), P(name + ".b")));
  }
  x = reshape(g, x, {B, N, Eigen::Index(modeldetail::kTnetPointChannels[2])});
  int pooled = global_maxpool_points(g, x);
  for (int i = 1; i <= 2; ++i) {
    const std::string name = prefix + ".fc" + std::to_string(i);
    pooled = relu(g, dense(g, pooled, P(name + ".w"), P(name + ".b")));
  }
  int t9 = dense(g, pooled, P(prefix + ".fc3.w"), P(prefix + ".fc3.b"));
  return reshape(g, t9, {B, 3, 3});
}

/// One shared per-point dense layer + relu over grid coordinates
/// (affine-conditioned to [-1,1] so activations are resolution-independent).
template <typename S>
int shallow_point_features(GraphT<S>& g, ParamBinding<S>& P, const PbpConfig& cfg,
                           int grid) {
  const auto& gv = g.value(grid);
  const Eigen::Index B = gv.dim(0), N = gv.dim(1);
  const S scale = S(2) / static_cast<S>(cfg.resolution - 1);
  int x = affine(g, grid, scale, S(-1));
  x = reshape(g, x, {B * N, 3});
  x = relu(g, dense(g, x, P("shallow.w"), P("shallow.b")));
  return reshape(g, x, {B, N, Eigen::Index(cfg.shallow_dim)});
}

/// Encoder conv32-pool-conv64-pool-conv128 plus a two-stage
/// upsample-conv decoder; returns the configured taps (128 @ R/4, 64 @ R/2,
/// 16 @ R with multi-scale, else just the final 16-channel map).
template <typename S>
std::vector<int> backbone_forward(GraphT<S>& g, ParamBinding<S>& P,
                                  const PbpConfig& cfg, const std::string& prefix,
                                  int map) {
  const auto& mv = g.value(map);
  if (mv.dim(1) % 4 != 0)
    throw InvalidInputError("backbone: resolution must be divisible by 4");
  auto conv = [&](int x, const std::string& name) {
    return bias_nhwc(g, conv2d(g, x, P(prefix + "." + name + ".k")),
                     P(prefix + "." + name + ".b"));
  };
  int e1 = relu(g, conv(map, "enc1"));
  int p1 = maxpool2d(g, e1);
  int e2 = relu(g, conv(p1, "enc2"));
  int p2 = maxpool2d(g, e2);
  int e3 = relu(g, conv(p2, "enc3"));                       // 128 ch @ R/4
  int d1 = relu(g, conv(upsample_nearest2(g, e3), "dec1"));  // 64 ch @ R/2
  int d2 = conv(upsample_nearest2(g, d1), "dec2");           // 16 ch @ R, linear
  if (cfg.use_multiscale) return {e3, d1, d2};
  return {d2};
}

/// Independent mini T-Net alignment followed by per-point dense layers.
template <typename S>
int additional_branch(GraphT<S>& g, ParamBinding<S>& P, const PbpConfig& cfg,
                      int coords) {
  const auto& cv = g.value(coords);
  const Eigen::Index B = cv.dim(0), N = cv.dim(1);
  int t = tnet_forward(g, P, "add.tnet", coords);
  int aligned = bmm_points(g, coords, t);
  int x = reshape(g, aligned, {B * N, 3});
  x = relu(g, dense(g, x, P("add.fc1.w"), P("add.fc1.b")));
  x = relu(g, dense(g, x, P("add.fc2.w"), P("add.fc2.b")));
  return reshape(g, x, {B, N, Eigen::Index(cfg.additional_dim)});
}

template <typename S>
struct PbpForwardIds {
  int coords = -1;   // input leaf
  int aligned = -1;
  int grid = -1;
  int shallow = -1;
  std::vector<std::vector<int>> maps;       // [plane][scale]
  std::vector<std::vector<int>> subfeats;   // [plane][scale]
  int fused = -1;
  int logits = -1;
};

/// Full pipeline: (optional T-Net) -> grid normalization -> shallow features
/// -> per-plane scatter -> backbone -> per-plane multi-scale gather -> fusion
/// -> (optional additional branch) -> per-point classifier head.
template <typename S>
PbpForwardIds<S> pbp_forward(GraphT<S>& g, ParamBinding<S>& P,
                             const PbpConfig& cfg, int coords) {
  cfg.validate();
  const auto& cv = g.value(coords);
  if (cv.rank() != 3 || cv.dim(2) != 3)
    throw ShapeError("pbp_forward: coords must be {B,N,3}");
  const Eigen::Index B = cv.dim(0), N = cv.dim(1);
  const int R = cfg.resolution;

  PbpForwardIds<S> ids;
  ids.coords = coords;
  ids.aligned = cfg.use_tnet
                    ? bmm_points(g, coords, tnet_forward(g, P, "tnet", coords))
                    : coords;
  ids.grid = project_to_grid(g, ids.aligned, R, static_cast<S>(cfg.margin));
  ids.shallow = shallow_point_features(g, P, cfg, ids.grid);

  const std::vector<int> strides = cfg.scale_strides();
  for (PlaneId plane : cfg.planes) {
    int map0 = plane_scatter(g, ids.grid, ids.shallow, plane, R, cfg.scatter_mode,
                             cfg.coord_grad);
    std::vector<int> taps =
        backbone_forward(g, P, cfg, backbone_prefix<S>(cfg, plane), map0);
    std::vector<int> sub;
    for (std::size_t s = 0; s < taps.size(); ++s)
      sub.push_back(
          plane_gather(g, taps[s], ids.grid, plane, strides[s], cfg.coord_grad));
    ids.maps.push_back(std::move(taps));
    ids.subfeats.push_back(std::move(sub));
  }

  // Fusion: per scale, sum sub-features over planes, then concatenate scales.
  std::vector<int> per_scale;
  for (std::size_t s = 0; s < strides.size(); ++s) {
    int acc = ids.subfeats[0][s];
    for (std::size_t p = 1; p < ids.subfeats.size(); ++p)
      acc = add(g, acc, ids.subfeats[p][s]);
    per_scale.push_back(acc);
  }
  ids.fused = per_scale.size() == 1 ? per_scale[0] : concat_last(g, per_scale);

  int head_in = ids.fused;
  if (cfg.use_additional)
    head_in = concat_last(g, {ids.fused, additional_branch(g, P, cfg, coords)});

  int x = reshape(g, head_in, {B * N, Eigen::Index(cfg.head_input_width())});
  x = relu(g, dense(g, x, P("head.fc1.w"), P("head.fc1.b")));
  x = relu(g, dense(g, x, P("head.fc2.w"), P("head.fc2.b")));
  x = dense(g, x, P("head.fc3.w"), P("head.fc3.b"));
  ids.logits = reshape(g, x, {B, N, Eigen::Index(cfg.num_classes)});
  return ids;
}

/// Mean point-wise cross-entropy over all B*N points.
template <typename S>
int segmentation_loss(GraphT<S>& g, int logits, const std::vector<int>& labels) {
  const auto& lv = g.value(logits);
  if (lv.rank() != 3) throw ShapeError("segmentation_loss: logits {B,N,K}");
  int flat = reshape(g, logits, {lv.dim(0) * lv.dim(1), lv.dim(2)});
  return softmax_cross_entropy(g, flat, labels);
}

/// Convenience forward-only evaluation; parameters are bound without grad
/// tracking so no tape state is retained.
template <typename S>
TensorT<S> pbp_predict(const ParamStoreT<S>& params, const PbpConfig& cfg,
                       const TensorT<S>& coords) {
  GraphT<S> g;
  int cid = g.input(coords, /*requires_grad=*/false);
  ParamBinding<S> bind(g, params, /*requires_grad=*/false);
  auto ids = pbp_forward(g, bind, cfg, cid);
  return g.value(ids.logits);
}

}  // namespace pbp
