// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/engine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <tuple>

namespace crosskd {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::crosskd_a: return "crosskd";
    case Strategy::reverse_b: return "reverse";
    case Strategy::self_student_c: return "self_student";
    case Strategy::self_teacher_d: return "self_teacher";
    case Strategy::pred_mimic: return "pred_mimic";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  for (Strategy v : {Strategy::crosskd_a, Strategy::reverse_b, Strategy::self_student_c,
                     Strategy::self_teacher_d, Strategy::pred_mimic}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown strategy '" + s +
                    "' (expected crosskd, reverse, self_student, self_teacher or pred_mimic)");
}

std::string to_string(ClsKdLoss l) { return l == ClsKdLoss::qfl ? "qfl" : "bce"; }
ClsKdLoss cls_kd_loss_from_string(const std::string& s) {
  if (s == "qfl") return ClsKdLoss::qfl;
  if (s == "bce") return ClsKdLoss::bce;
  throw ConfigError("unknown cls_loss '" + s + "' (expected qfl or bce)");
}

std::string to_string(RegKdLoss l) { return l == RegKdLoss::giou ? "giou" : "ld_kl"; }
RegKdLoss reg_kd_loss_from_string(const std::string& s) {
  if (s == "giou") return RegKdLoss::giou;
  if (s == "ld_kl") return RegKdLoss::ld_kl;
  throw ConfigError("unknown reg_loss '" + s + "' (expected giou or ld_kl)");
}

void DistillConfig::validate(const HeadSpec& head) const {
  if (strategy != Strategy::pred_mimic && (split_index < 0 || split_index > head.n_layers)) {
    throw ConfigError("distill.split_index must lie in [0, " + std::to_string(head.n_layers) + "]");
  }
  if (!(tau > 0.0)) throw ConfigError("distill.tau must be > 0");
  if (!(gamma >= 0.0)) throw ConfigError("distill.gamma must be >= 0");
  if (!(w_cls_kd >= 0.0) || !(w_reg_kd >= 0.0) || !(w_feat >= 0.0))
    throw ConfigError("distill weights must be >= 0");
  if (reg_loss == RegKdLoss::ld_kl && head.reg_mode != RegMode::distribution)
    throw ConfigError("distill.reg_loss ld_kl needs a distribution-mode head");
  if (feat_head && w_feat > 0.0 && effective_split(head.n_layers) >= head.n_layers)
    throw ConfigError("feature imitation on head layer needs split_index < n_layers");
}

void freeze_teacher(DetectorModel& model) {
  for (int g = 0; g < kParamGroups; ++g) model.set_frozen(static_cast<ParamGroup>(g), true);
}

namespace {

// One branch output plus how to route its gradient back.
struct SourcePass {
  enum class Route { none, student_output, teacher_head, student_head } route = Route::none;
  BranchTrace trace;  // for teacher_head / student_head routes
  Tensor output;
};

struct SourceSet {
  // passes[branch][level]
  std::array<std::vector<SourcePass>, 2> passes;
  std::vector<PredictionMap> predictions;
};

void check_split(const DetectorModel& model, int i) {
  const int n = model.head_spec().n_layers;
  if (i < 0 || i > n) {
    throw ContractViolation("split index " + std::to_string(i) + " outside [0, " + std::to_string(n) + "]");
  }
}

void check_junction(const DetectorModel& receiver, const DetectorModel& sender, int i) {
  const int n = receiver.head_spec().n_layers;
  if (sender.head_spec().n_layers != n) {
    throw WiringError("teacher and student heads differ in depth (" + std::to_string(n) + " vs " +
                      std::to_string(sender.head_spec().n_layers) + ")");
  }
  if (i >= n) return;
  if (sender.head_spec().hidden_channels != receiver.head_spec().hidden_channels) {
    throw WiringError("head width mismatch at junction into layer C_" + std::to_string(i + 1) + ": " +
                      std::to_string(sender.head_spec().hidden_channels) + " channels delivered, " +
                      std::to_string(receiver.head_spec().hidden_channels) + " expected");
  }
}

// Runs `head_owner`'s layers C_{i+1}..C_n on `features_fwd`'s f_i.
SourceSet run_cross(const DetectorModel& head_owner, const ForwardResult& features_fwd, int i,
                    SourcePass::Route route) {
  SourceSet s;
  const int levels = static_cast<int>(features_fwd.predictions.size());
  for (auto& per_branch : s.passes) per_branch.resize(levels);
  for (int lvl = 0; lvl < levels; ++lvl) {
    PredictionMap p;
    p.stride = features_fwd.predictions[lvl].stride;
    p.level_id = lvl;
    for (Branch b : kBranches) {
      SourcePass& pass = s.passes[static_cast<int>(b)][lvl];
      pass.route = route;
      const FeatureMap& f = features_fwd.feature(b, lvl, i);
      pass.output = forward_branch_from(head_owner.head(b, lvl), f.values, i + 1, &pass.trace);
      (b == Branch::cls ? p.cls_logits : p.reg_output) = pass.output;
    }
    s.predictions.push_back(std::move(p));
  }
  return s;
}

SourceSet own_predictions(const ForwardResult& fwd, SourcePass::Route route) {
  SourceSet s;
  const int levels = static_cast<int>(fwd.predictions.size());
  for (auto& per_branch : s.passes) per_branch.resize(levels);
  for (int lvl = 0; lvl < levels; ++lvl) {
    s.passes[0][lvl].route = route;
    s.passes[1][lvl].route = route;
  }
  s.predictions = fwd.predictions;
  return s;
}

struct StrategyPlan {
  SourceSet source;
  std::vector<PredictionMap> target;
};

StrategyPlan plan_strategy(const DetectorModel& teacher, const DetectorModel& student,
                           const ForwardResult& tf, const ForwardResult& sf, const DistillConfig& cfg) {
  const int n = student.head_spec().n_layers;
  const int i = cfg.effective_split(n);
  check_split(student, i);
  StrategyPlan plan;
  switch (cfg.strategy) {
    case Strategy::crosskd_a:
    case Strategy::pred_mimic:
    case Strategy::self_student_c: {
      if (!teacher.fully_frozen()) throw ContractViolation("cross-head prediction needs a frozen teacher");
      check_junction(teacher, student, i);
      plan.source = i == n ? own_predictions(sf, SourcePass::Route::student_output)
                           : run_cross(teacher, sf, i, SourcePass::Route::teacher_head);
      plan.target = cfg.strategy == Strategy::self_student_c ? sf.predictions : tf.predictions;
      break;
    }
    case Strategy::reverse_b:
    case Strategy::self_teacher_d: {
      check_junction(student, teacher, i);
      plan.source = i == n ? own_predictions(tf, SourcePass::Route::none)
                           : run_cross(student, tf, i, SourcePass::Route::student_head);
      plan.target = cfg.strategy == Strategy::reverse_b ? sf.predictions : tf.predictions;
      break;
    }
  }
  return plan;
}

std::vector<double> teacher_max_prob(const std::vector<PredictionMap>& teacher_preds) {
  std::vector<double> w;
  for (const auto& p : teacher_preds) {
    for (int i = 0; i < p.locations(); ++i) {
      double best = 0.0;
      for (int c = 0; c < p.cls_logits.channels; ++c) best = std::max(best, sigmoid(p.cls_logits.channel(c)[i]));
      w.push_back(best);
    }
  }
  return w;
}

// Concatenated per-location terms and per-level elementwise gradients.
struct BranchKd {
  double value = 0.0;
  std::vector<Tensor> grads;  // per level, d value / d source output
};

BranchKd cls_kd(const std::vector<PredictionMap>& src, const std::vector<PredictionMap>& tgt,
                const DistillConfig& cfg) {
  BranchKd out;
  std::vector<double> terms;
  std::size_t total = 0;
  for (const auto& p : src) total += p.locations();
  const RegionWeights region = region_constant(total);
  for (std::size_t lvl = 0; lvl < src.size(); ++lvl) {
    Tensor target = tgt[lvl].cls_logits;
    for (double& v : target.data) v = sigmoid(v);
    Tensor g;
    LossValue lv = cfg.cls_loss == ClsKdLoss::qfl ? qfl(src[lvl].cls_logits, target, cfg.gamma, &g)
                                                  : bce_soft(src[lvl].cls_logits, target, &g);
    terms.insert(terms.end(), lv.per_location.begin(), lv.per_location.end());
    if (region.normalizer > 0.0) g *= 1.0 / region.normalizer;
    out.grads.push_back(std::move(g));
  }
  out.value = weighted_reduce(terms, region);
  return out;
}

BranchKd reg_kd(const std::vector<PredictionMap>& src, const std::vector<PredictionMap>& tgt,
                const std::vector<PredictionMap>& teacher_preds, const DistillConfig& cfg) {
  BranchKd out;
  std::vector<double> terms;
  if (cfg.reg_loss == RegKdLoss::ld_kl) {
    std::size_t total = 0;
    for (const auto& p : src) total += p.locations();
    const RegionWeights region = region_constant(total);
    for (std::size_t lvl = 0; lvl < src.size(); ++lvl) {
      Tensor g;
      LossValue lv = ld_kl(src[lvl].reg_output, tgt[lvl].reg_output, cfg.tau, &g);
      terms.insert(terms.end(), lv.per_location.begin(), lv.per_location.end());
      if (region.normalizer > 0.0) g *= 1.0 / region.normalizer;
      out.grads.push_back(std::move(g));
    }
    out.value = weighted_reduce(terms, region);
    return out;
  }
  const RegionWeights region = RegionWeights::from(teacher_max_prob(teacher_preds));
  std::size_t offset = 0;
  for (std::size_t lvl = 0; lvl < src.size(); ++lvl) {
    const PointGrid grid = grid_for(src[lvl]);
    Tensor g = Tensor::zeros_like(src[lvl].reg_output);
    for (int r = 0; r < grid.rows; ++r) {
      for (int c = 0; c < grid.cols; ++c) {
        const Box sb = decode_location(src[lvl].reg_output, grid, r, c);
        const Box tb = decode_location(tgt[lvl].reg_output, grid, r, c);
        const BoxLoss bl = giou_loss(sb, tb);
        terms.push_back(bl.value);
        const double w = region.normalizer > 0.0 ? region.weights[offset] / region.normalizer : 0.0;
        std::array<double, 4> gb{};
        for (int k = 0; k < 4; ++k) gb[k] = w * bl.grad[k];
        decode_location_backward(src[lvl].reg_output, grid, r, c, gb, g);
        ++offset;
      }
    }
    out.grads.push_back(std::move(g));
  }
  out.value = weighted_reduce(terms, region);
  return out;
}

void add_into(Tensor& dst, const Tensor& src) {
  if (dst.empty()) dst = src;
  else dst += src;
}

}  // namespace

std::vector<PredictionMap> cross_head_predict(const DetectorModel& teacher, const ForwardResult& sf,
                                              int i) {
  if (!teacher.fully_frozen()) throw ContractViolation("cross_head_predict: teacher must be frozen");
  const int n = teacher.head_spec().n_layers;
  if (i < 0 || i > n) {
    throw ContractViolation("split index " + std::to_string(i) + " outside [0, " + std::to_string(n) + "]");
  }
  if (i == n) return sf.predictions;
  std::vector<PredictionMap> out;
  for (std::size_t lvl = 0; lvl < sf.predictions.size(); ++lvl) {
    const int l = static_cast<int>(lvl);
    out.push_back(forward_head_from(teacher, l, sf.feature(Branch::cls, l, i), sf.feature(Branch::reg, l, i), i + 1));
  }
  return out;
}

StrategyPredictions strategy_predictions(const DetectorModel& teacher, const DetectorModel& student,
                                         const ForwardResult& tf, const ForwardResult& sf,
                                         const DistillConfig& config) {
  StrategyPlan plan = plan_strategy(teacher, student, tf, sf, config);
  return {std::move(plan.source.predictions), std::move(plan.target)};
}

DistillBatchOutput total_loss(const LossComponents& p, const DistillConfig& cfg) {
  const std::pair<const char*, double> named[] = {
      {"det_cls", p.det_cls}, {"det_reg", p.det_reg}, {"kd_cls", p.kd_cls}, {"kd_reg", p.kd_reg}, {"feat", p.feat}};
  DistillBatchOutput out;
  for (const auto& [name, v] : named) {
    if (!std::isfinite(v)) throw DivergenceError(name, std::string("loss component ") + name + " is not finite");
    out.components[name] = v;
  }
  out.total_loss = p.det_cls + p.det_reg + cfg.w_cls_kd * p.kd_cls + cfg.w_reg_kd * p.kd_reg + cfg.w_feat * p.feat;
  return out;
}

FeatureLoss feat_imitation_loss(const FeatureMap& student, const FeatureMap& teacher) {
  const Tensor& xs = student.values;
  const Tensor& xt = teacher.values;
  if (!xs.same_shape(xt)) {
    throw ContractViolation("feat_imitation_loss: shape mismatch " + xs.shape_string() + " vs " + xt.shape_string());
  }
  constexpr double kEps = 1e-6;
  const int hw = xs.plane();
  const int ch = xs.channels;
  FeatureLoss out;
  out.value.per_location.assign(hw, 0.0);
  out.grad = Tensor::zeros_like(xs);
  if (hw == 0 || ch == 0) return out;
  const double count = static_cast<double>(hw) * ch;

  auto standardise = [&](std::span<const double> x, std::vector<double>& y, double& mean, double& sd) {
    mean = 0.0;
    for (double v : x) mean += v;
    mean /= hw;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    sd = std::sqrt(var / hw);
    y.resize(hw);
    for (int i = 0; i < hw; ++i) y[i] = (x[i] - mean) / (sd + kEps);
  };

  std::vector<double> ys, yt, g(hw);
  for (int c = 0; c < ch; ++c) {
    double ms, ss, mt, st;
    standardise(xs.channel(c), ys, ms, ss);
    standardise(xt.channel(c), yt, mt, st);
    double gmean = 0.0;
    double gdot = 0.0;
    const auto x = xs.channel(c);
    for (int i = 0; i < hw; ++i) {
      const double d = ys[i] - yt[i];
      out.value.per_location[i] += d * d / ch;
      g[i] = 2.0 * d / count;
      gmean += g[i];
      gdot += g[i] * (x[i] - ms);
    }
    gmean /= hw;
    const double s = ss + kEps;
    auto gx = out.grad.channel(c);
    for (int i = 0; i < hw; ++i) {
      gx[i] = (g[i] - gmean) / s;
      if (ss > 0.0) gx[i] -= gdot * (x[i] - ms) / (s * s * hw * ss);
    }
  }
  double total = 0.0;
  for (double v : out.value.per_location) total += v;
  out.value.scalar = total / hw;
  return out;
}

StepResult distill_step(const StepRequest& req, DetectorParams* grads, FeatureGradProbe* probe) {
  if (req.student == nullptr || req.image == nullptr || req.assignment == nullptr) {
    throw ContractViolation("distill_step: student, image and assignment are required");
  }
  const DetectorModel& student = *req.student;
  const ModelConfig& scfg = student.config();
  const int n = scfg.head.n_layers;
  const int levels = scfg.num_levels();
  const DistillConfig& cfg = req.distill;
  const bool want_grads = grads != nullptr || probe != nullptr;

  StepResult res;
  res.student_fwd = forward(student, *req.image);
  const ForwardResult& sf = res.student_fwd;
  res.targets = *req.assignment;
  if (req.quality_targets) {
    std::vector<std::vector<Box>> decoded;
    for (const auto& p : sf.predictions) decoded.push_back(decode_boxes(p, grid_for(p)));
    apply_quality(res.targets, quality_target(res.targets, decoded));
  }

  OutputGrads up = OutputGrads::for_model(scfg);
  if (req.include_detection) {
    DetectionLoss det = detection_loss(sf.predictions, res.targets, req.detection, want_grads);
    res.parts.det_cls = det.cls;
    res.parts.det_reg = det.reg;
    if (want_grads) {
      for (int l = 0; l < levels; ++l) {
        up.cls[l] = std::move(det.grad_cls[l]);
        up.reg[l] = std::move(det.grad_reg[l]);
      }
    }
  }

  const bool do_cls = req.teacher && cfg.distill_cls && cfg.w_cls_kd > 0.0;
  const bool do_reg = req.teacher && cfg.distill_reg && cfg.w_reg_kd > 0.0;
  const bool do_feat = req.teacher && cfg.w_feat > 0.0 && (cfg.feat_neck || cfg.feat_head);

  if (req.teacher != nullptr) {
    cfg.validate(scfg.head);
  }

  std::optional<ForwardResult> own_tf;
  const ForwardResult* tf = req.teacher_fwd;
  if ((do_cls || do_reg || do_feat) && tf == nullptr) {
    own_tf = forward(*req.teacher, *req.image);
    tf = &*own_tf;
  }

  if (do_cls || do_reg) {
    StrategyPlan plan = plan_strategy(*req.teacher, student, *tf, sf, cfg);
    const auto& src = plan.source.predictions;
    const int i = cfg.effective_split(n);

    std::array<std::vector<Tensor>, 2> source_grads;
    if (do_cls) {
      BranchKd k = cls_kd(src, plan.target, cfg);
      res.parts.kd_cls = k.value;
      for (auto& g : k.grads) g *= cfg.w_cls_kd;
      source_grads[0] = std::move(k.grads);
    }
    if (do_reg) {
      BranchKd k = reg_kd(src, plan.target, tf->predictions, cfg);
      res.parts.kd_reg = k.value;
      for (auto& g : k.grads) g *= cfg.w_reg_kd;
      source_grads[1] = std::move(k.grads);
    }

    if (want_grads) {
      for (Branch b : kBranches) {
        const int bi = static_cast<int>(b);
        if (source_grads[bi].empty()) continue;
        for (int l = 0; l < levels; ++l) {
          const SourcePass& pass = plan.source.passes[bi][l];
          const Tensor& g = source_grads[bi][l];
          switch (pass.route) {
            case SourcePass::Route::none:
              break;
            case SourcePass::Route::student_output:
              add_into(up.branch(b)[l], g);
              break;
            case SourcePass::Route::teacher_head: {
              // Through the frozen teacher layers: input gradient only.
              Tensor gf = backward_branch(req.teacher->head(b, l), pass.trace, g, nullptr);
              add_into(up.features[bi][l][i], gf);
              break;
            }
            case SourcePass::Route::student_head: {
              if (grads != nullptr) {
                auto& heads = grads->heads(b);
                backward_branch(student.head(b, l), pass.trace, g, &heads[heads.size() == 1 ? 0 : l]);
              }
              break;
            }
          }
        }
      }
    }
    res.output.cross_head_preds = std::move(plan.source.predictions);
  }

  if (do_feat) {
    const int i = cfg.effective_split(n);
    double total = 0.0;
    int maps = 0;
    std::vector<std::tuple<Branch, int, int>> sites;  // branch, level, feature index
    for (int l = 0; l < levels; ++l) {
      if (cfg.feat_neck) sites.emplace_back(Branch::cls, l, 0);
      if (cfg.feat_head && i > 0) {
        for (Branch b : kBranches) sites.emplace_back(b, l, i);
      }
    }
    std::vector<FeatureLoss> losses;
    for (const auto& [b, l, k] : sites) {
      losses.push_back(feat_imitation_loss(sf.feature(b, l, k), tf->feature(b, l, k)));
      total += losses.back().value.scalar;
      ++maps;
    }
    res.parts.feat = maps > 0 ? total / maps : 0.0;
    if (want_grads && maps > 0) {
      for (std::size_t s = 0; s < sites.size(); ++s) {
        const auto& [b, l, k] = sites[s];
        Tensor g = losses[s].grad;
        g *= cfg.w_feat / maps;
        add_into(up.features[static_cast<int>(b)][l][k], g);
      }
    }
  }

  const std::vector<PredictionMap> cross = std::move(res.output.cross_head_preds);
  res.output = total_loss(res.parts, cfg);
  res.output.cross_head_preds = cross;

  if (want_grads) {
    DetectorParams scratch;
    DetectorParams* target = grads;
    if (target == nullptr) {
      scratch = student.params().zeros_like();
      target = &scratch;
    }
    backward(student, sf, up, *target, probe);
  }
  return res;
}

}  // namespace crosskd
