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
#include "pbp/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "pbp/checkpoint.hpp"

namespace pbp {

namespace {

std::vector<int> argmax_rows(const Tensor& logits) {
  auto m = logits.rows_by_last();
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Eigen::Index best;
    m.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

Tensor slice_element(const Tensor& coords, Eigen::Index b) {
  const Eigen::Index N = coords.dim(1);
  Tensor out({1, N, 3});
  out.data = coords.data.segment(b * N * 3, N * 3);
  return out;
}

void log_line(std::ostream* console, std::ofstream* file, const std::string& line) {
  if (console) (*console) << line << "\n" << std::flush;
  if (file && file->is_open()) (*file) << line << "\n" << std::flush;
}

}  // namespace

DatasetSplit build_split(const RunConfig& cfg, bool train) {
  if (cfg.dataset == "points") return load_points_dir(cfg.data_path);
  if (cfg.dataset == "shapenet")
    return load_shapenet_part(cfg.data_path, cfg.category, train ? "train" : "test");
  const SyntheticKind kind = synthetic_kind_from_name(cfg.dataset);
  return make_synthetic_split(kind, train ? cfg.train_count : cfg.test_count,
                              cfg.points,
                              mix_seed(cfg.seed, train ? 0xA11CE : 0xB0B));
}

int resolve_classes(const RunConfig& cfg, const DatasetSplit& split) {
  if (split.num_classes < 2)
    throw DataError("dataset provides fewer than 2 classes");
  if (cfg.classes == 0) return split.num_classes;
  if (cfg.classes < split.num_classes)
    throw ConfigError("key 'classes': dataset needs >= " +
                      std::to_string(split.num_classes) + " classes");
  return cfg.classes;
}

std::pair<double, long> batch_loss_and_grads(ParamStore& params,
                                             const PbpConfig& model,
                                             const Batch& batch, int threads) {
  const Eigen::Index B = batch.batch_size();
  const Eigen::Index N = batch.coords.dim(1);

  struct ElemResult {
    double loss = 0.0;
    long correct = 0;
    std::vector<Tensor> grads;  // aligned with params.entries
    std::string error;
  };
  std::vector<ElemResult> results(static_cast<std::size_t>(B));

  parallel_for(B, threads, [&](std::int64_t b) {
    auto& res = results[static_cast<std::size_t>(b)];
    try {
      GraphT<float> g;
      int cid = g.input(slice_element(batch.coords, b), false);
      ParamBinding<float> bind(g, params);
      auto ids = pbp_forward(g, bind, model, cid);
      std::vector<int> labels(batch.labels.begin() + b * N,
                              batch.labels.begin() + (b + 1) * N);
      int loss_id = segmentation_loss(g, ids.logits, labels);
      res.loss = static_cast<double>(g.value(loss_id).data(0));
      g.backward(loss_id);

      res.grads.resize(params.size());
      for (const auto& [name, id] : bind.bound()) {
        const std::size_t slot = params.index.at(name);
        res.grads[slot] = g.grad(id);
      }
      std::vector<int> pred = argmax_rows(g.value(ids.logits));
      for (Eigen::Index n = 0; n < N; ++n)
        res.correct += pred[static_cast<std::size_t>(n)] ==
                       labels[static_cast<std::size_t>(n)];
    } catch (const std::exception& ex) {
      res.error = ex.what();
    }
  });

  double loss = 0.0;
  long correct = 0;
  const float scale = 1.0f / static_cast<float>(B);
  for (const auto& res : results) {
    if (!res.error.empty()) throw NumericError("forward/backward failed: " + res.error);
    loss += res.loss / static_cast<double>(B);
    correct += res.correct;
    for (std::size_t i = 0; i < params.size(); ++i)
      if (res.grads[i].size() > 0)
        params.entries[i].grad.data += scale * res.grads[i].data;
  }
  return {loss, correct};
}

TrainResult run_train(const RunConfig& cfg, std::ostream* console) {
  cfg.validate();
  DatasetSplit split = build_split(cfg, /*train=*/true);
  const int K = resolve_classes(cfg, split);
  PbpConfig model = cfg.model_config(K);

  TrainResult result;
  result.model = model;
  result.params = init_params<float>(model, cfg.seed);
  std::vector<AdamState> adam;
  adam.reserve(result.params.size());
  for (const auto& e : result.params.entries)
    adam.push_back(AdamState::zeros_like(e.value));

  std::ofstream logf;
  if (!cfg.log.empty()) {
    logf.open(cfg.log, std::ios::app);
    if (!logf) throw DataError("cannot open log file " + cfg.log);
  }

  BatchIterator iter(split, cfg.batch, cfg.points, mix_seed(cfg.seed, 0xDA7A));
  // per-element graphs are reduced in element order, so the thread count
  // never changes results; deterministic mode needs no cap here
  const int threads = thread_budget();
  double lr = cfg.lr;
  long steps = 0;
  double best_loss = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    iter.begin_epoch(epoch - 1);
    double loss_sum = 0.0;
    long correct = 0, points_total = 0, elems = 0;
    Batch batch;
    while (iter.next(batch)) {
      const Eigen::Index B = batch.batch_size();
      result.params.zero_grads();
      auto [loss, ok] = batch_loss_and_grads(result.params, model, batch, threads);
      if (!std::isfinite(loss))
        throw NumericError("non-finite loss at optimizer step " +
                           std::to_string(steps + 1));
      for (std::size_t i = 0; i < result.params.size(); ++i)
        adam_update(result.params.entries[i].value, result.params.entries[i].grad,
                    adam[i], static_cast<float>(lr));
      ++steps;
      if (steps % cfg.lr_decay_step == 0) lr *= cfg.lr_decay;
      loss_sum += loss * static_cast<double>(B);
      correct += ok;
      points_total += B * batch.coords.dim(1);
      elems += B;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(elems);
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(points_total);
    rec.lr = lr;
    result.history.push_back(rec);

    std::ostringstream line;
    line << "epoch=" << epoch << " loss=" << std::fixed << std::setprecision(6)
         << rec.loss << " acc=" << std::setprecision(4) << rec.accuracy
         << " lr=" << std::setprecision(8) << rec.lr;
    log_line(console, logf.is_open() ? &logf : nullptr, line.str());

    if (rec.loss < best_loss) {
      best_loss = rec.loss;
      if (!cfg.checkpoint.empty())
        save_checkpoint(result.params, cfg.checkpoint + ".best");
    }
    if (cfg.stop_at_acc > 0 && rec.accuracy >= cfg.stop_at_acc) {
      log_line(console, logf.is_open() ? &logf : nullptr,
               "stop=accuracy_target epoch=" + std::to_string(epoch));
      break;
    }
  }
  if (!cfg.checkpoint.empty()) save_checkpoint(result.params, cfg.checkpoint);
  return result;
}

EvalResult evaluate_split(const ParamStore& params, const PbpConfig& model,
                          const DatasetSplit& split, const RunConfig& cfg,
                          ConfusionMatrix* cm_out) {
  if (split.size() == 0) throw DataError("evaluation split is empty");
  const int K = model.num_classes;
  const bool per_category = split.category_part_range.size() > 1;

  struct ShapeResult {
    std::vector<int> pred, truth;
    int category = 0;
    std::string error;
  };
  std::vector<ShapeResult> shapes(split.size());

  parallel_for(static_cast<std::int64_t>(split.size()), thread_budget(),
               [&](std::int64_t i) {
                 auto& sr = shapes[static_cast<std::size_t>(i)];
                 try {
                   PointCloud cloud = load_sample(split, static_cast<std::size_t>(i));
                   cloud = sample_fixed_count(
                       cloud, cfg.points,
                       mix_seed(cfg.seed, 0xE7A1000ull + static_cast<std::uint64_t>(i)));
                   Tensor coords({1, cfg.points, 3});
                   for (Eigen::Index n = 0; n < cfg.points; ++n)
                     for (int a = 0; a < 3; ++a)
                       coords.data(n * 3 + a) = cloud.coords(n, a);
                   Tensor logits = pbp_predict(params, model, coords);
                   sr.pred = argmax_rows(logits);
                   sr.truth = cloud.labels;
                   sr.category = split.samples[static_cast<std::size_t>(i)].category;
                 } catch (const std::exception& ex) {
                   sr.error = ex.what();
                 }
               });

  ConfusionMatrix cm(K);
  std::vector<std::vector<double>> ious_by_category(split.category_part_range.size());
  for (const auto& sr : shapes) {
    if (!sr.error.empty()) throw DataError("evaluation failed: " + sr.error);
    cm.update(sr.pred, sr.truth);
    if (per_category) {
      const auto [lo, hi] =
          split.category_part_range[static_cast<std::size_t>(sr.category)];
      ious_by_category[static_cast<std::size_t>(sr.category)].push_back(
          shape_mean_part_iou(sr.pred, sr.truth, lo, hi));
    }
  }

  EvalResult out;
  out.classes = K;
  out.miou = mean_iou(cm);
  out.accuracy = overall_accuracy(cm);
  if (per_category) {
    // drop categories with no evaluated shapes (e.g. single-category loads)
    std::vector<std::vector<double>> present;
    for (auto& v : ious_by_category)
      if (!v.empty()) present.push_back(std::move(v));
    out.mciou = category_mean_iou(present);
  }
  if (cm_out) *cm_out = cm;
  return out;
}

EvalResult run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                    std::ostream* console) {
  cfg.validate();
  if (checkpoint_path.empty())
    throw ConfigError("eval requires a checkpoint path");
  DatasetSplit split = build_split(cfg, /*train=*/false);
  const int K = resolve_classes(cfg, split);
  PbpConfig model = cfg.model_config(K);
  ParamStore params = init_params<float>(model, cfg.seed);
  load_checkpoint(params, checkpoint_path);

  ConfusionMatrix cm(K);
  EvalResult result = evaluate_split(params, model, split, cfg, &cm);
  if (console) {
    write_report_table(*console, cm);
    if (result.mciou)
      (*console) << "mciou " << std::setw(8) << std::fixed << std::setprecision(4)
                 << *result.mciou << "\n";
  }
  if (!cfg.report.empty()) {
    std::ofstream rf(cfg.report);
    if (!rf) throw DataError("cannot write report file " + cfg.report);
    write_report_kv(rf, cm);
    if (result.mciou) rf << "mciou = " << std::setprecision(10) << *result.mciou << "\n";
  }
  return result;
}

GradCheckReport run_gradcheck(const RunConfig& cfg, double tolerance,
                              std::ostream* console) {
  // tiny fixture: 8 points, R=8, two classes
  PbpConfig model = cfg.model_config(2);
  model.resolution = 8;
  model.validate();
  PointCloud cloud = make_synthetic_task(SyntheticKind::z_halves, 8,
                                         mix_seed(cfg.seed, 0x6C));
  TensorT<double> coords({1, cloud.size(), 3});
  for (Eigen::Index n = 0; n < cloud.size(); ++n)
    for (int a = 0; a < 3; ++a)
      coords.data(n * 3 + a) = static_cast<double>(cloud.coords(n, a));

  ParamStoreT<double> params =
      init_params<float>(model, cfg.seed).cast<double>();
  GradCheckReport report =
      gradcheck_model<double>(params, model, coords, cloud.labels, tolerance,
                              /*step=*/1e-5, /*floor=*/1e-6,
                              /*samples_per_group=*/4);
  if (console) {
    for (const auto& g : report.groups)
      (*console) << "group=" << g.name << " checked=" << g.checked
                 << " max_rel=" << std::scientific << std::setprecision(3)
                 << g.max_rel << (g.pass ? " pass" : " FAIL") << "\n";
    (*console) << (report.passed() ? "gradcheck: pass" : "gradcheck: FAIL")
               << " (tolerance " << std::scientific << std::setprecision(1)
               << tolerance << ")\n";
  }
  return report;
}

std::vector<AblateRow> run_ablate(const RunConfig& cfg, std::ostream* console) {
  cfg.validate();
  static const char* plane_sets[3] = {"xy", "xy,yz", "xy,yz,zx"};
  std::vector<AblateRow> rows;
  if (console)
    (*console) << "planes tnet multiscale additional miou\n" << std::flush;
  for (int np = 1; np <= 3; ++np)
    for (int tn = 0; tn < 2; ++tn)
      for (int ms = 0; ms < 2; ++ms)
        for (int ad = 0; ad < 2; ++ad) {
          RunConfig variant = cfg;
          variant.planes = plane_sets[np - 1];
          variant.tnet = tn != 0;
          variant.multiscale = ms != 0;
          variant.additional = ad != 0;
          variant.checkpoint.clear();
          variant.log.clear();
          variant.report.clear();
          TrainResult trained = run_train(variant, nullptr);
          DatasetSplit test = build_split(variant, /*train=*/false);
          EvalResult ev =
              evaluate_split(trained.params, trained.model, test, variant);
          AblateRow row{np, variant.tnet, variant.multiscale, variant.additional,
                        ev.miou};
          rows.push_back(row);
          if (console)
            (*console) << np << " " << tn << " " << ms << " " << ad << " "
                       << std::fixed << std::setprecision(4) << ev.miou << "\n"
                       << std::flush;
        }
  return rows;
}

}  // namespace pbp
