// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "crosskd/box.hpp"
#include "crosskd/detector.hpp"

namespace crosskd {

struct Instance {
  Box box;
  int class_id = 0;
  friend bool operator==(const Instance&, const Instance&) = default;
};

struct GroundTruth {
  std::vector<Instance> instances;

  bool empty() const { return instances.empty(); }
  /// Throws ContractViolation on degenerate or out-of-image boxes or bad ids.
  void validate(int image_w, int image_h, int num_classes) const;
  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

/// Per-level targets. Arrays are row-major over the level's grid.
struct LevelAssignment {
  PointGrid grid;
  Tensor cls_target;                              // C x rows x cols, values in [0, 1]
  std::vector<std::array<double, 4>> reg_target;  // (l, t, r, b) pixels, valid where positive
  std::vector<std::uint8_t> pos_mask;
  std::vector<std::uint8_t> ignore_mask;          // detection-loss weight 0
  std::vector<int> assigned_instance;             // -1 when none
  std::vector<double> quality;                    // scale applied to the one-hot target

  int index(int row, int col) const { return row * grid.cols + col; }
};

struct AssignmentResult {
  int num_classes = 0;
  std::vector<Instance> instances;
  std::vector<LevelAssignment> levels;

  int positive_count() const;
  int location_count() const;
};

enum class AssignerKind { iou, atss, center };
std::string to_string(AssignerKind k);
AssignerKind assigner_from_string(const std::string& s);

struct AssignerConfig {
  AssignerKind kind = AssignerKind::atss;
  double pos_thr = 0.5;
  double neg_thr = 0.4;
  int top_k = 9;
  double radius_factor = 1.5;
  friend bool operator==(const AssignerConfig&, const AssignerConfig&) = default;
};

/// Side of the single square anchor implied at a location of this stride.
inline double anchor_side(int stride) { return 4.0 * stride; }

/// Fixed-threshold IoU assignment against one square anchor per location.
/// Positive iff max IoU >= pos_thr, negative iff max IoU < neg_thr, ignored otherwise.
AssignmentResult assign_iou(const std::vector<PointGrid>& grids, const GroundTruth& gts,
                            int num_classes, double pos_thr, double neg_thr);

/// Adaptive assignment: per gt, top_k closest locations per level form the
/// candidate set; the IoU threshold is mean + sample std of candidate IoUs;
/// positives also need their centre strictly inside the gt box.
AssignmentResult assign_atss(const std::vector<PointGrid>& grids, const GroundTruth& gts,
                             int num_classes, int top_k);

/// Centre sampling: positive iff the location centre lies within
/// radius_factor * stride of a gt centre (per axis) and inside the gt box;
/// ambiguity goes to the smallest gt.
AssignmentResult assign_center(const std::vector<PointGrid>& grids, const GroundTruth& gts,
                               int num_classes, double radius_factor);

AssignmentResult assign(const AssignerConfig& config, const std::vector<PointGrid>& grids,
                        const GroundTruth& gts, int num_classes);

/// IoU of each positive's decoded box with its assigned gt box; 0 elsewhere.
/// `decoded[level]` holds one box per location.
std::vector<std::vector<double>> quality_target(const AssignmentResult& assignment,
                                                const std::vector<std::vector<Box>>& decoded);

/// Rescales each positive's one-hot class target by the given quality.
void apply_quality(AssignmentResult& assignment, const std::vector<std::vector<double>>& quality);

/// Box implied by a location's regression target.
Box target_box(const LevelAssignment& level, int row, int col);

/// CSV with header "level,row,col,pos,class,l,t,r,b,quality".
std::string assignment_to_csv(const AssignmentResult& a);
/// Parses the CSV back; grids must describe the same levels.
AssignmentResult assignment_from_csv(const std::string& csv, const std::vector<PointGrid>& grids,
                                     int num_classes);

}  // namespace crosskd
