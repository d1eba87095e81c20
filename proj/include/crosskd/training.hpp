// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crosskd/assigners.hpp"
#include "crosskd/dataset.hpp"
#include "crosskd/detector.hpp"
#include "crosskd/engine.hpp"
#include "crosskd/losses.hpp"
#include "crosskd/metrics.hpp"

namespace crosskd {

struct OptimizerConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 12;
  int batch_size = 8;
  std::vector<int> lr_steps{8, 11};  // epochs (1-based) after which lr is multiplied by lr_decay
  double lr_decay = 0.1;
  int warmup_iters = 20;
  double warmup_ratio = 0.1;
  double grad_clip = 10.0;  // global L2 norm; 0 disables

  void validate() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Learning rate for a 0-based epoch and global iteration.
double learning_rate(const OptimizerConfig& config, int epoch, int iteration);

/// Momentum SGD with L2 weight decay. Parameter groups flagged frozen on the
/// model are never touched.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(OptimizerConfig config) : config_(std::move(config)) {}
  void step(DetectorModel& model, const DetectorParams& grads, double lr);

 private:
  OptimizerConfig config_;
  DetectorParams velocity_;
  bool initialised_ = false;
};

struct EpochRecord {
  int epoch = 0;
  double ap = 0.0;
  double det_cls = 0.0;
  double det_reg = 0.0;
  double kd_cls = 0.0;
  double kd_reg = 0.0;
  double feat = 0.0;
  double l1_pred_teacher = 0.0;
  double l1_cls_gt = 0.0;
  double l1_box_gt = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainLog {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> records;
};

std::string train_log_to_csv(const TrainLog& log);
TrainLog train_log_from_csv(const std::string& text);

struct Distances {
  double l1_pred_teacher = 0.0;  // NaN without teacher predictions
  double l1_cls_gt = 0.0;
  double l1_box_gt = 0.0;
};

/// l1_pred_teacher: mean |sigma(p^s) - sigma(p^t)| over all locations and
/// classes. l1_cls_gt: mean |sigma(p^s) - target| over positive locations and
/// classes. l1_box_gt: mean absolute gap between decoded and target box
/// edges over positives, in pixels. Inputs are per image; `teacher_preds` may
/// be empty.
Distances track_distances(const std::vector<std::vector<PredictionMap>>& student_preds,
                          const std::vector<std::vector<PredictionMap>>& teacher_preds,
                          const std::vector<AssignmentResult>& assignments);

struct TrainOptions {
  OptimizerConfig optimizer;
  AssignerConfig assigner;
  DetectionLossConfig detection;
  EvalConfig eval;
  DistillConfig distill;
  bool distill_enabled = false;
  std::uint64_t seed = 0;
  int distance_slice = 64;
  std::vector<int> checkpoint_epochs;
  std::filesystem::path checkpoint_dir;
  std::string checkpoint_prefix = "model";
  std::string config_hash;
};

/// Per-image one-hot targets for a sample list.
std::vector<AssignmentResult> assign_all(const ModelConfig& model, const AssignerConfig& assigner,
                                         const std::vector<Sample>& samples);

/// Trains `model` in place. With a teacher and distill_enabled the distillation
/// terms are added; a teacher alone is only used for distance tracking.
/// Throws DivergenceError naming the offending component.
TrainLog train(DetectorModel& model, const Dataset& data, const TrainOptions& options,
               const DetectorModel* teacher = nullptr);

/// L2 norm over channels of d(distillation loss)/d f_k of the student, for
/// one branch and level (1 x H x W).
Tensor grad_heatmap(const DetectorModel& student, const DetectorModel& teacher, const DistillConfig& config,
                    const Tensor& image, const AssignmentResult& assignment, Branch branch, int level,
                    int feature_index);

/// "row,col,value".
std::string heatmap_to_csv(const Tensor& heatmap);

}  // namespace crosskd
