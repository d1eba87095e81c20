// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "crosskd/assigners.hpp"
#include "crosskd/detector.hpp"
#include "crosskd/losses.hpp"

namespace crosskd {

/// Which predictions are compared by the distillation loss.
///   crosskd_a       student f_i -> teacher head  vs  teacher predictions
///   reverse_b       teacher f_i -> student head  vs  student predictions
///   self_student_c  student f_i -> teacher head  vs  student predictions
///   self_teacher_d  teacher f_i -> student head  vs  teacher predictions
///   pred_mimic      student predictions          vs  teacher predictions
/// The second member of each pair is always treated as a constant target.
enum class Strategy { crosskd_a, reverse_b, self_student_c, self_teacher_d, pred_mimic };
enum class ClsKdLoss { qfl, bce };
enum class RegKdLoss { giou, ld_kl };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);
std::string to_string(ClsKdLoss l);
ClsKdLoss cls_kd_loss_from_string(const std::string& s);
std::string to_string(RegKdLoss l);
RegKdLoss reg_kd_loss_from_string(const std::string& s);

struct DistillConfig {
  int split_index = 3;
  Strategy strategy = Strategy::crosskd_a;
  bool distill_cls = true;
  bool distill_reg = true;
  ClsKdLoss cls_loss = ClsKdLoss::qfl;
  RegKdLoss reg_loss = RegKdLoss::ld_kl;
  double tau = 1.0;
  double gamma = 1.0;
  double w_cls_kd = 1.0;
  double w_reg_kd = 1.0;
  double w_feat = 0.0;
  bool feat_neck = false;
  bool feat_head = false;

  /// Split actually used: pred_mimic always behaves as i = n.
  int effective_split(int n_layers) const {
    return strategy == Strategy::pred_mimic ? n_layers : split_index;
  }
  void validate(const HeadSpec& head) const;
  friend bool operator==(const DistillConfig&, const DistillConfig&) = default;
};

/// Unweighted loss components of one batch element.
struct LossComponents {
  double det_cls = 0.0;
  double det_reg = 0.0;
  double kd_cls = 0.0;
  double kd_reg = 0.0;
  double feat = 0.0;
};

struct DistillBatchOutput {
  double total_loss = 0.0;
  std::map<std::string, double> components;  // det_cls, det_reg, kd_cls, kd_reg, feat
  std::vector<PredictionMap> cross_head_preds;
};

/// Flags every parameter group of the model as frozen.
void freeze_teacher(DetectorModel& model);

/// Teacher layers C_{i+1}..C_n applied to the student's f_i, per branch and
/// level. i = 0 feeds the student's neck output into the whole teacher head;
/// i = n returns the student's own predictions.
std::vector<PredictionMap> cross_head_predict(const DetectorModel& teacher,
                                              const ForwardResult& student_fwd, int split_index);

struct StrategyPredictions {
  std::vector<PredictionMap> source;
  std::vector<PredictionMap> target;
};

/// Source/target prediction pair compared under `config.strategy`.
StrategyPredictions strategy_predictions(const DetectorModel& teacher, const DetectorModel& student,
                                         const ForwardResult& teacher_fwd,
                                         const ForwardResult& student_fwd,
                                         const DistillConfig& config);

/// L = det_cls + det_reg + w_cls_kd kd_cls + w_reg_kd kd_reg + w_feat feat.
/// Throws DivergenceError naming the first non-finite component.
DistillBatchOutput total_loss(const LossComponents& parts, const DistillConfig& config);

struct FeatureLoss {
  LossValue value;
  Tensor grad;  // d scalar / d student features
};

/// Per-channel standardisation of both maps followed by the mean squared
/// difference. Teacher side is constant.
FeatureLoss feat_imitation_loss(const FeatureMap& student, const FeatureMap& teacher);

/// Inputs to a single-image objective evaluation.
struct StepRequest {
  const DetectorModel* student = nullptr;
  const DetectorModel* teacher = nullptr;        // null: no distillation terms
  const ForwardResult* teacher_fwd = nullptr;    // optional cached teacher pass
  const Tensor* image = nullptr;
  const AssignmentResult* assignment = nullptr;  // one-hot targets from the assigner
  DistillConfig distill;
  DetectionLossConfig detection;
  bool quality_targets = false;                  // scale one-hot targets by IoU quality
  bool include_detection = true;
};

struct StepResult {
  LossComponents parts;
  DistillBatchOutput output;
  ForwardResult student_fwd;
  AssignmentResult targets;  // after quality scaling
};

/// Evaluates the full objective on one image. When `grads` is given the
/// student's parameter gradients are accumulated into it; the teacher never
/// receives gradients. `probe` captures the gradient reaching each student
/// head feature.
StepResult distill_step(const StepRequest& request, DetectorParams* grads,
                        FeatureGradProbe* probe = nullptr);

}  // namespace crosskd
