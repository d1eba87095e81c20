// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "crosskd/assigners.hpp"
#include "crosskd/dataset.hpp"
#include "crosskd/detector.hpp"

namespace crosskd {

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
};

struct EvalConfig {
  double iou_thr = 0.5;
  double score_thr = 0.05;
  double nms_iou = 0.6;
  int max_dets = 100;
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

/// Scores sigma(cls logit) per class and location, drops those below
/// score_thr, runs per-class NMS and keeps the max_dets best.
std::vector<Detection> postprocess(const std::vector<PredictionMap>& preds, const EvalConfig& config);

/// Area under the all-points interpolated precision/recall curve for one
/// ranked list of true/false positives.
double average_precision(const std::vector<bool>& ranked_tp, int num_gt);

/// Greedy per-class matching: detections in descending score (ties keep
/// image order, then list order) take the unmatched gt of their image with
/// the highest IoU (lowest index on ties) when it reaches iou_thr.
/// Returns the mean AP over classes that have at least one gt; 0 if none.
double evaluate_detections(const std::vector<std::vector<Detection>>& detections,
                           const std::vector<GroundTruth>& gts, int num_classes, double iou_thr);

double evaluate_ap(const DetectorModel& model, const std::vector<Sample>& samples, const EvalConfig& config);

}  // namespace crosskd
