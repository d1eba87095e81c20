// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "crosskd/assigners.hpp"
#include "crosskd/dataset.hpp"
#include "crosskd/detector.hpp"

namespace crosskd {

struct ConflictCurve {
  std::vector<double> thresholds;
  std::vector<double> ratios;  // NaN when there are no positives
  std::vector<long> conflict_counts;
  long positive_count = 0;

  bool defined() const { return positive_count > 0; }
};

/// Per-location max over classes of |p - target|, where p are teacher
/// class probabilities (C x H x W). Values lie in [0, 1].
std::vector<double> discrepancy_from_probs(const Tensor& teacher_probs, const LevelAssignment& level);

/// discrepancy_from_probs applied to sigma(teacher logits), level by level,
/// concatenated in level order.
std::vector<double> discrepancy_map(const std::vector<PredictionMap>& teacher_preds,
                                    const AssignmentResult& assignment);

/// For every threshold t: conflict_count = |{r : discrepancy(r) > t}| over all
/// locations and ratio = conflict_count / #positives.
ConflictCurve conflict_curve(const std::vector<double>& discrepancy, const AssignmentResult& assignment,
                             const std::vector<double>& thresholds);

/// Sums counts over several images.
ConflictCurve merge_curves(const std::vector<ConflictCurve>& curves);

std::vector<double> default_thresholds();  // 0.0, 0.05, ..., 1.0

struct TeacherUnderTest {
  std::string name;
  const DetectorModel* model = nullptr;
  AssignerKind assigner = AssignerKind::atss;  // assigner the teacher was trained with
};

struct CrossAssignerEntry {
  std::string name;
  AssignerKind teacher_assigner = AssignerKind::atss;
  bool same_assigner = false;
  ConflictCurve curve;
};

struct CrossAssignerReport {
  std::vector<CrossAssignerEntry> entries;
  /// Every different-assigner curve is >= every same-assigner curve at every
  /// threshold. Vacuously true when either group is empty.
  bool ordering_holds = true;
};

/// Conflict curves of each teacher against the targets produced by the
/// student's assigner, pooled over `samples`.
CrossAssignerReport cross_assigner_report(const std::vector<TeacherUnderTest>& teachers,
                                          const AssignerConfig& student_assigner,
                                          const std::vector<Sample>& samples,
                                          const std::vector<double>& thresholds);

/// Ordering at one threshold only: every different-assigner ratio is >= every
/// same-assigner ratio there. Throws ContractViolation when the threshold is
/// not on the report's curves.
bool ordering_holds_at(const CrossAssignerReport& report, double threshold);

/// "level,row,col,class_0,...,class_{C-1}" with teacher probabilities.
std::string prediction_dump_to_csv(const std::vector<PredictionMap>& teacher_preds);
/// Parses a dump into per-level probability tensors shaped like `grids`.
std::vector<Tensor> prediction_dump_from_csv(const std::string& csv, const std::vector<PointGrid>& grids,
                                             int num_classes);

/// "threshold,ratio,conflict_count,positive_count"; undefined ratios are
/// written as "undefined".
std::string conflict_curve_to_csv(const ConflictCurve& curve);
ConflictCurve conflict_curve_from_csv(const std::string& csv);

}  // namespace crosskd
