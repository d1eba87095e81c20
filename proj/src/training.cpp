// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "crosskd/checkpoint.hpp"
#include "crosskd/csv.hpp"

namespace crosskd {

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("optimizer.lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (epochs < 0) throw ConfigError("optimizer.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("optimizer.batch_size must be >= 1");
  if (!std::is_sorted(lr_steps.begin(), lr_steps.end())) throw ConfigError("optimizer.lr_steps must be ascending");
  if (!(lr_decay > 0.0)) throw ConfigError("optimizer.lr_decay must be > 0");
  if (warmup_iters < 0) throw ConfigError("optimizer.warmup_iters must be >= 0");
  if (!(warmup_ratio > 0.0 && warmup_ratio <= 1.0)) throw ConfigError("optimizer.warmup_ratio must lie in (0, 1]");
  if (!(grad_clip >= 0.0)) throw ConfigError("optimizer.grad_clip must be >= 0");
}

double learning_rate(const OptimizerConfig& c, int epoch, int iteration) {
  double lr = c.lr;
  for (int step : c.lr_steps) {
    if (epoch >= step) lr *= c.lr_decay;
  }
  if (iteration < c.warmup_iters) {
    const double k = static_cast<double>(iteration) / c.warmup_iters;
    lr *= c.warmup_ratio + (1.0 - c.warmup_ratio) * k;
  }
  return lr;
}

namespace {

std::vector<std::pair<ParamGroup, ConvLayer*>> layer_list(DetectorParams& p) {
  std::vector<std::pair<ParamGroup, ConvLayer*>> out;
  p.for_each_layer([&](const std::string&, ParamGroup g, ConvLayer& l) { out.emplace_back(g, &l); });
  return out;
}

std::vector<const ConvLayer*> layer_list(const DetectorParams& p) {
  std::vector<const ConvLayer*> out;
  p.for_each_layer([&](const std::string&, ParamGroup, const ConvLayer& l) { out.push_back(&l); });
  return out;
}

template <typename Fn>
void for_each_value(ConvLayer& l, Fn&& fn) {
  for (double& v : l.weight) fn(v);
  for (double& v : l.bias) fn(v);
}

}  // namespace

void SgdOptimizer::step(DetectorModel& model, const DetectorParams& grads, double lr) {
  if (!initialised_) {
    velocity_ = model.params().zeros_like();
    initialised_ = true;
  }
  auto params = layer_list(model.params());
  const auto g = layer_list(grads);
  auto vel = layer_list(velocity_);
  if (g.size() != params.size()) throw ContractViolation("SgdOptimizer: gradient layout mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (model.frozen(params[k].first)) continue;
    ConvLayer& p = *params[k].second;
    ConvLayer& v = *vel[k].second;
    const ConvLayer& gl = *g[k];
    auto update = [&](std::vector<double>& pv, std::vector<double>& vv, const std::vector<double>& gv) {
      for (std::size_t j = 0; j < pv.size(); ++j) {
        vv[j] = config_.momentum * vv[j] + gv[j] + config_.weight_decay * pv[j];
        pv[j] -= lr * vv[j];
      }
    };
    update(p.weight, v.weight, gl.weight);
    update(p.bias, v.bias, gl.bias);
  }
}

std::string train_log_to_csv(const TrainLog& log) {
  std::ostringstream os;
  os << "# config_hash=" << log.config_hash << " seed=" << log.seed << '\n';
  os << "epoch,ap,det_cls,det_reg,kd_cls,kd_reg,feat,l1_pred_teacher,l1_cls_gt,l1_box_gt\n";
  for (const auto& r : log.records) {
    os << r.epoch;
    for (double v : {r.ap, r.det_cls, r.det_reg, r.kd_cls, r.kd_reg, r.feat, r.l1_pred_teacher, r.l1_cls_gt,
                     r.l1_box_gt}) {
      os << ',' << csv::num(v);
    }
    os << '\n';
  }
  return os.str();
}

TrainLog train_log_from_csv(const std::string& text) {
  TrainLog log;
  std::istringstream is(text);
  std::string first;
  std::getline(is, first);
  if (first.rfind("# config_hash=", 0) == 0) {
    std::istringstream meta(first.substr(2));
    std::string tok;
    while (meta >> tok) {
      if (tok.rfind("config_hash=", 0) == 0) log.config_hash = tok.substr(12);
      if (tok.rfind("seed=", 0) == 0) log.seed = std::stoull(tok.substr(5));
    }
  }
  const auto lines = csv::data_lines(text);
  if (lines.empty() || lines.front().rfind("epoch,ap,", 0) != 0) throw ConfigError("TrainLog CSV: unexpected header");
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto f = csv::split(lines[k]);
    if (f.size() != 10) throw ConfigError("TrainLog CSV line " + std::to_string(k + 1) + ": expected 10 fields");
    EpochRecord r;
    r.epoch = csv::to_int(f[0]);
    double* dst[] = {&r.ap, &r.det_cls, &r.det_reg, &r.kd_cls, &r.kd_reg,
                     &r.feat, &r.l1_pred_teacher, &r.l1_cls_gt, &r.l1_box_gt};
    for (int j = 0; j < 9; ++j) *dst[j] = csv::to_double(f[j + 1]);
    log.records.push_back(r);
  }
  return log;
}

Distances track_distances(const std::vector<std::vector<PredictionMap>>& student_preds,
                          const std::vector<std::vector<PredictionMap>>& teacher_preds,
                          const std::vector<AssignmentResult>& assignments) {
  if (student_preds.size() != assignments.size() ||
      (!teacher_preds.empty() && teacher_preds.size() != student_preds.size())) {
    throw ContractViolation("track_distances: image counts differ");
  }
  double teacher_sum = 0.0;
  double teacher_n = 0.0;
  double cls_sum = 0.0;
  double cls_n = 0.0;
  double box_sum = 0.0;
  double box_n = 0.0;
  for (std::size_t img = 0; img < student_preds.size(); ++img) {
    const auto& sp = student_preds[img];
    const auto& a = assignments[img];
    if (sp.size() != a.levels.size()) throw ContractViolation("track_distances: level count mismatch");
    for (std::size_t l = 0; l < sp.size(); ++l) {
      const Tensor& s = sp[l].cls_logits;
      const LevelAssignment& la = a.levels[l];
      if (!teacher_preds.empty()) {
        const Tensor& t = teacher_preds[img][l].cls_logits;
        if (!t.same_shape(s)) throw ContractViolation("track_distances: teacher/student shape mismatch");
        for (std::size_t j = 0; j < s.data.size(); ++j) teacher_sum += std::abs(sigmoid(s.data[j]) - sigmoid(t.data[j]));
        teacher_n += static_cast<double>(s.data.size());
      }
      const PointGrid grid = grid_for(sp[l]);
      for (int i = 0; i < grid.locations(); ++i) {
        if (!la.pos_mask[i]) continue;
        for (int c = 0; c < s.channels; ++c) {
          cls_sum += std::abs(sigmoid(s.channel(c)[i]) - la.cls_target.channel(c)[i]);
          cls_n += 1.0;
        }
        const int row = i / grid.cols;
        const int col = i % grid.cols;
        const auto pb = decode_location(sp[l].reg_output, grid, row, col).as_array();
        const auto tb = target_box(la, row, col).as_array();
        for (int k = 0; k < 4; ++k) box_sum += std::abs(pb[k] - tb[k]);
        box_n += 4.0;
      }
    }
  }
  Distances d;
  d.l1_pred_teacher = teacher_preds.empty() ? std::numeric_limits<double>::quiet_NaN()
                                            : (teacher_n > 0 ? teacher_sum / teacher_n : 0.0);
  d.l1_cls_gt = cls_n > 0 ? cls_sum / cls_n : 0.0;
  d.l1_box_gt = box_n > 0 ? box_sum / box_n : 0.0;
  return d;
}

std::vector<AssignmentResult> assign_all(const ModelConfig& model, const AssignerConfig& assigner,
                                         const std::vector<Sample>& samples) {
  std::vector<AssignmentResult> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    out.push_back(assign(assigner, grids_for(model, s.image.height, s.image.width), s.gt, model.head.num_classes));
  }
  return out;
}

namespace {

double grad_norm_sq(DetectorModel& model, DetectorParams& grads) {
  double acc = 0.0;
  auto g = layer_list(grads);
  for (auto& [group, layer] : g) {
    if (model.frozen(group)) continue;
    for_each_value(*layer, [&](double& v) { acc += v * v; });
  }
  return acc;
}

void scale_grads(DetectorParams& grads, double s) {
  for (auto& [group, layer] : layer_list(grads)) for_each_value(*layer, [&](double& v) { v *= s; });
}

}  // namespace

TrainLog train(DetectorModel& model, const Dataset& data, const TrainOptions& opt, const DetectorModel* teacher) {
  opt.optimizer.validate();
  TrainLog log;
  log.config_hash = opt.config_hash;
  log.seed = opt.seed;
  const ModelConfig& mc = model.config();
  const bool distill = opt.distill_enabled && teacher != nullptr;
  if (distill) opt.distill.validate(mc.head);
  if (teacher != nullptr && !teacher->fully_frozen()) {
    throw ContractViolation("train: teacher must be frozen");
  }

  const std::vector<AssignmentResult> train_targets = assign_all(mc, opt.assigner, data.train);
  const std::size_t slice = std::min<std::size_t>(data.val.size(), static_cast<std::size_t>(opt.distance_slice));
  const std::vector<Sample> val_slice(data.val.begin(), data.val.begin() + static_cast<std::ptrdiff_t>(slice));
  const std::vector<AssignmentResult> val_targets = assign_all(mc, opt.assigner, val_slice);

  std::vector<ForwardResult> teacher_train;
  if (distill) {
    teacher_train.reserve(data.train.size());
    for (const Sample& s : data.train) teacher_train.push_back(forward(*teacher, s.image));
  }
  std::vector<std::vector<PredictionMap>> teacher_val;
  if (teacher != nullptr) {
    for (const Sample& s : val_slice) teacher_val.push_back(forward(*teacher, s.image).predictions);
  }

  const bool quality = mc.head.reg_mode == RegMode::distribution;
  SgdOptimizer sgd(opt.optimizer);
  const int n_train = static_cast<int>(data.train.size());
  std::vector<int> order(n_train);
  int iteration = 0;

  for (int epoch = 0; epoch < opt.optimizer.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    SampleRng rng(mix_seed(opt.seed, static_cast<std::uint64_t>(epoch) + 1));
    for (int k = n_train - 1; k > 0; --k) std::swap(order[k], order[rng.integer(0, k)]);

    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (int start = 0; start < n_train; start += opt.optimizer.batch_size) {
      const int end = std::min(n_train, start + opt.optimizer.batch_size);
      DetectorParams grads = model.params().zeros_like();
      for (int b = start; b < end; ++b) {
        const int idx = order[b];
        StepRequest req;
        req.student = &model;
        req.image = &data.train[idx].image;
        req.assignment = &train_targets[idx];
        req.detection = opt.detection;
        req.quality_targets = quality;
        if (distill) {
          req.teacher = teacher;
          req.teacher_fwd = &teacher_train[idx];
          req.distill = opt.distill;
        }
        const StepResult r = distill_step(req, &grads);
        rec.det_cls += r.parts.det_cls;
        rec.det_reg += r.parts.det_reg;
        rec.kd_cls += r.parts.kd_cls;
        rec.kd_reg += r.parts.kd_reg;
        rec.feat += r.parts.feat;
      }
      scale_grads(grads, 1.0 / (end - start));
      const double norm = std::sqrt(grad_norm_sq(model, grads));
      if (!std::isfinite(norm)) throw DivergenceError("gradient", "gradient norm is not finite");
      if (opt.optimizer.grad_clip > 0.0 && norm > opt.optimizer.grad_clip) {
        scale_grads(grads, opt.optimizer.grad_clip / norm);
      }
      sgd.step(model, grads, learning_rate(opt.optimizer, epoch, iteration));
      ++iteration;
    }
    if (n_train > 0) {
      for (double* v : {&rec.det_cls, &rec.det_reg, &rec.kd_cls, &rec.kd_reg, &rec.feat}) *v /= n_train;
    }

    rec.ap = evaluate_ap(model, data.val, opt.eval);
    std::vector<std::vector<PredictionMap>> student_val;
    for (const Sample& s : val_slice) student_val.push_back(forward(model, s.image).predictions);
    const Distances d = track_distances(student_val, teacher_val, val_targets);
    rec.l1_pred_teacher = d.l1_pred_teacher;
    rec.l1_cls_gt = d.l1_cls_gt;
    rec.l1_box_gt = d.l1_box_gt;
    log.records.push_back(rec);

    if (std::find(opt.checkpoint_epochs.begin(), opt.checkpoint_epochs.end(), epoch + 1) !=
        opt.checkpoint_epochs.end()) {
      std::filesystem::create_directories(opt.checkpoint_dir);
      save_checkpoint(model, opt.checkpoint_dir / (opt.checkpoint_prefix + "_epoch" + std::to_string(epoch + 1) + ".ckpt"));
    }
  }
  return log;
}

Tensor grad_heatmap(const DetectorModel& student, const DetectorModel& teacher, const DistillConfig& config,
                    const Tensor& image, const AssignmentResult& assignment, Branch branch, int level,
                    int feature_index) {
  const int n = student.head_spec().n_layers;
  if (feature_index < 0 || feature_index >= n) {
    throw ContractViolation("grad_heatmap: feature index must lie in [0, " + std::to_string(n - 1) + "]");
  }
  if (level < 0 || level >= student.config().num_levels()) throw ContractViolation("grad_heatmap: bad level");
  StepRequest req;
  req.student = &student;
  req.teacher = &teacher;
  req.image = &image;
  req.assignment = &assignment;
  req.distill = config;
  req.include_detection = false;
  FeatureGradProbe probe;
  const StepResult r = distill_step(req, nullptr, &probe);

  const auto& per_level = probe.grads[static_cast<int>(branch)][level];
  const Tensor& f = r.student_fwd.feature(branch, level, feature_index).values;
  Tensor heat(1, f.height, f.width);
  if (per_level.empty() || per_level[feature_index].empty()) return heat;
  const Tensor& g = per_level[feature_index];
  for (int c = 0; c < g.channels; ++c) {
    const auto gc = g.channel(c);
    for (int i = 0; i < g.plane(); ++i) heat.data[i] += gc[i] * gc[i];
  }
  for (double& v : heat.data) v = std::sqrt(v);
  return heat;
}

std::string heatmap_to_csv(const Tensor& heat) {
  std::ostringstream os;
  os << "row,col,value\n";
  for (int r = 0; r < heat.height; ++r) {
    for (int c = 0; c < heat.width; ++c) os << r << ',' << c << ',' << csv::num(heat.at(0, r, c)) << '\n';
  }
  return os.str();
}

}  // namespace crosskd
