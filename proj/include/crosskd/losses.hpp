// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <span>
#include <vector>

#include "crosskd/assigners.hpp"
#include "crosskd/box.hpp"
#include "crosskd/detector.hpp"
#include "crosskd/tensor.hpp"

namespace crosskd {

/// Probabilities are clamped to [kProbEps, 1 - kProbEps] before any log.
inline constexpr double kProbEps = 1e-7;

/// Per-location weights S(r) and their sum |S|.
struct RegionWeights {
  std::vector<double> weights;
  double normalizer = 0.0;

  static RegionWeights from(std::vector<double> w);
};

struct LossValue {
  double scalar = 0.0;
  std::vector<double> per_location;
};

RegionWeights region_constant(std::size_t locations);

/// sum_r S(r) term(r) / |S|, or 0 when |S| = 0.
double weighted_reduce(std::span<const double> per_location, const RegionWeights& region);

// ---- classification distances ----

struct ElementLoss {
  double value = 0.0;
  double grad = 0.0;  // d value / d logit
};

/// |sigma(p) - t|^gamma * BCE(sigma(p), t) for one logit and one target.
ElementLoss qfl_element(double logit, double target, double gamma);
ElementLoss bce_soft_element(double logit, double target);

/// Quality focal loss between logits and probability targets of shape
/// C x H x W; per-location terms sum over classes and `scalar` is their mean.
/// When `grad` is given it receives d per_location[r] / d logit elementwise.
LossValue qfl(const Tensor& pred_logits, const Tensor& target_probs, double gamma,
              Tensor* grad = nullptr);
LossValue bce_soft(const Tensor& pred_logits, const Tensor& target_probs, Tensor* grad = nullptr);

// ---- box distances ----

/// Generalised IoU; throws ContractViolation for zero-area boxes.
double giou(const Box& a, const Box& b);
/// d giou(a, b) / d(a.x1, a.y1, a.x2, a.y2).
std::array<double, 4> giou_grad(const Box& a, const Box& b);

struct BoxLoss {
  double value = 0.0;
  std::array<double, 4> grad{};  // d value / d pred box
};

/// 1 - giou(pred, target), in [0, 2).
BoxLoss giou_loss(const Box& pred, const Box& target);

// ---- distribution distances ----

/// KL(softmax(teacher / tau) || softmax(student / tau)) for one edge.
/// `grad` (if non-empty) receives d KL / d student logits.
double ld_kl(std::span<const double> student_logits, std::span<const double> teacher_logits,
             double tau, std::span<double> grad = {});

/// Per-location average of ld_kl over the four edges of distribution-mode
/// regression maps of shape 4(m+1) x H x W. Teacher side is constant.
LossValue ld_kl(const Tensor& student_reg, const Tensor& teacher_reg, double tau,
                Tensor* grad = nullptr);

// ---- detection losses ----

struct DetectionLossConfig {
  double cls_gamma = 2.0;
  double reg_weight = 2.0;
  friend bool operator==(const DetectionLossConfig&, const DetectionLossConfig&) = default;
};

struct DetectionLoss {
  double cls = 0.0;
  double reg = 0.0;
  std::vector<Tensor> grad_cls;  // per level
  std::vector<Tensor> grad_reg;
};

/// Quality focal loss on non-ignored locations plus GIoU loss on positives,
/// both normalised by max(1, #positives). `targets` must already carry
/// the classification targets to use (quality-scaled or one-hot).
DetectionLoss detection_loss(const std::vector<PredictionMap>& preds, const AssignmentResult& targets,
                             const DetectionLossConfig& config, bool want_grads);

}  // namespace crosskd
