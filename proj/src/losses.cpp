// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace crosskd {

RegionWeights RegionWeights::from(std::vector<double> w) {
  RegionWeights r;
  for (double v : w) {
    if (!(v >= 0.0)) throw ContractViolation("region weights must be non-negative");
    r.normalizer += v;
  }
  r.weights = std::move(w);
  return r;
}

RegionWeights region_constant(std::size_t locations) {
  return RegionWeights::from(std::vector<double>(locations, 1.0));
}

double weighted_reduce(std::span<const double> terms, const RegionWeights& region) {
  if (terms.size() != region.weights.size()) {
    throw ContractViolation("weighted_reduce: " + std::to_string(terms.size()) + " terms vs " +
                            std::to_string(region.weights.size()) + " weights");
  }
  if (region.normalizer == 0.0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) acc += region.weights[i] * terms[i];
  return acc / region.normalizer;
}

namespace {

double clamp_prob(double s) { return std::clamp(s, kProbEps, 1.0 - kProbEps); }

// BCE on a clamped probability and its derivative w.r.t. the logit.
ElementLoss bce_parts(double logit, double target) {
  const double s = sigmoid(logit);
  const double sc = clamp_prob(s);
  ElementLoss e;
  e.value = -(target * std::log(sc) + (1.0 - target) * std::log(1.0 - sc));
  e.grad = sc == s ? s - target : 0.0;
  return e;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ContractViolation(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                            b.shape_string());
  }
}

LossValue per_location_sum(const Tensor& logits, const Tensor& targets, Tensor* grad,
                           ElementLoss (*elem)(double, double, double), double gamma) {
  const int hw = logits.plane();
  LossValue out;
  out.per_location.assign(hw, 0.0);
  if (grad != nullptr) *grad = Tensor::zeros_like(logits);
  for (int c = 0; c < logits.channels; ++c) {
    const auto lg = logits.channel(c);
    const auto tg = targets.channel(c);
    for (int i = 0; i < hw; ++i) {
      const ElementLoss e = elem(lg[i], tg[i], gamma);
      out.per_location[i] += e.value;
      if (grad != nullptr) grad->channel(c)[i] = e.grad;
    }
  }
  out.scalar = hw > 0 ? std::accumulate(out.per_location.begin(), out.per_location.end(), 0.0) / hw : 0.0;
  return out;
}

}  // namespace

ElementLoss bce_soft_element(double logit, double target) { return bce_parts(logit, target); }

ElementLoss qfl_element(double logit, double target, double gamma) {
  const ElementLoss b = bce_parts(logit, target);
  const double s = sigmoid(logit);
  const double gap = s - target;
  const double factor = std::pow(std::abs(gap), gamma);
  double dfactor = 0.0;
  if (gamma > 0.0 && gap != 0.0) {
    dfactor = gamma * std::pow(std::abs(gap), gamma - 1.0) * (gap > 0.0 ? 1.0 : -1.0) * s * (1.0 - s);
  }
  return {factor * b.value, dfactor * b.value + factor * b.grad};
}

LossValue qfl(const Tensor& logits, const Tensor& targets, double gamma, Tensor* grad) {
  check_same_shape(logits, targets, "qfl");
  if (gamma < 0.0) throw ContractViolation("qfl: gamma must be >= 0");
  return per_location_sum(logits, targets, grad, &qfl_element, gamma);
}

LossValue bce_soft(const Tensor& logits, const Tensor& targets, Tensor* grad) {
  check_same_shape(logits, targets, "bce_soft");
  return per_location_sum(
      logits, targets, grad, [](double p, double t, double) { return bce_soft_element(p, t); }, 0.0);
}

double giou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw ContractViolation("giou: degenerate box");
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double enclose = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) *
                         (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  return inter / uni - (enclose - uni) / enclose;
}

std::array<double, 4> giou_grad(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw ContractViolation("giou: degenerate box");
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;
  std::array<double, 4> d_inter{};
  if (overlap) {
    d_inter[0] = a.x1 >= b.x1 ? -ih : 0.0;
    d_inter[2] = a.x2 <= b.x2 ? ih : 0.0;
    d_inter[1] = a.y1 >= b.y1 ? -iw : 0.0;
    d_inter[3] = a.y2 <= b.y2 ? iw : 0.0;
  }
  const double aw = a.width();
  const double ah = a.height();
  const std::array<double, 4> d_area{-ah, -aw, ah, aw};
  const double uni = a.area() + b.area() - inter;

  const double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double enclose = cw * ch;
  const std::array<double, 4> d_enclose{a.x1 <= b.x1 ? -ch : 0.0, a.y1 <= b.y1 ? -cw : 0.0,
                                        a.x2 >= b.x2 ? ch : 0.0, a.y2 >= b.y2 ? cw : 0.0};
  // giou = I/U - 1 + U/C
  std::array<double, 4> g{};
  for (int k = 0; k < 4; ++k) {
    const double d_uni = d_area[k] - d_inter[k];
    g[k] = (d_inter[k] * uni - inter * d_uni) / (uni * uni) +
           (d_uni * enclose - uni * d_enclose[k]) / (enclose * enclose);
  }
  return g;
}

BoxLoss giou_loss(const Box& pred, const Box& target) {
  BoxLoss l;
  l.value = 1.0 - giou(pred, target);
  const auto g = giou_grad(pred, target);
  for (int k = 0; k < 4; ++k) l.grad[k] = -g[k];
  return l;
}

double ld_kl(std::span<const double> s, std::span<const double> t, double tau, std::span<double> grad) {
  if (!(tau > 0.0)) throw ContractViolation("ld_kl: tau must be > 0");
  if (s.size() != t.size() || s.empty()) throw ContractViolation("ld_kl: logit vectors differ in length");
  const std::size_t n = s.size();
  auto log_softmax = [&](std::span<const double> x, std::vector<double>& out) {
    double mx = -INFINITY;
    for (double v : x) mx = std::max(mx, v / tau);
    double z = 0.0;
    for (double v : x) z += std::exp(v / tau - mx);
    const double lz = mx + std::log(z);
    out.resize(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = x[k] / tau - lz;
  };
  std::vector<double> log_q, log_p;
  log_softmax(s, log_q);
  log_softmax(t, log_p);
  double kl = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double p = std::exp(log_p[k]);
    kl += p * (log_p[k] - log_q[k]);
    if (!grad.empty()) grad[k] = (std::exp(log_q[k]) - p) / tau;
  }
  return kl;
}

LossValue ld_kl(const Tensor& student, const Tensor& teacher, double tau, Tensor* grad) {
  check_same_shape(student, teacher, "ld_kl");
  if (student.channels % 4 != 0 || student.channels < 8) {
    throw ContractViolation("ld_kl: expects distribution-mode maps with 4(m+1) channels");
  }
  const int bins = student.channels / 4;
  const int hw = student.plane();
  LossValue out;
  out.per_location.assign(hw, 0.0);
  if (grad != nullptr) *grad = Tensor::zeros_like(student);
  std::vector<double> sv(bins), tv(bins), gv(bins);
  for (int i = 0; i < hw; ++i) {
    const int row = i / student.width;
    const int col = i % student.width;
    for (int e = 0; e < 4; ++e) {
      for (int k = 0; k < bins; ++k) {
        sv[k] = student.at(e * bins + k, row, col);
        tv[k] = teacher.at(e * bins + k, row, col);
      }
      out.per_location[i] += 0.25 * ld_kl(sv, tv, tau, gv);
      if (grad != nullptr)
        for (int k = 0; k < bins; ++k) grad->at(e * bins + k, row, col) = 0.25 * gv[k];
    }
  }
  out.scalar = hw > 0 ? std::accumulate(out.per_location.begin(), out.per_location.end(), 0.0) / hw : 0.0;
  return out;
}

DetectionLoss detection_loss(const std::vector<PredictionMap>& preds, const AssignmentResult& targets,
                             const DetectionLossConfig& config, bool want_grads) {
  if (preds.size() != targets.levels.size()) throw ContractViolation("detection_loss: level count mismatch");
  DetectionLoss out;
  const double norm = std::max(1, targets.positive_count());
  for (std::size_t lvl = 0; lvl < preds.size(); ++lvl) {
    const PredictionMap& p = preds[lvl];
    const LevelAssignment& a = targets.levels[lvl];
    check_same_shape(p.cls_logits, a.cls_target, "detection_loss");
    Tensor gcls, greg;
    if (want_grads) {
      gcls = Tensor::zeros_like(p.cls_logits);
      greg = Tensor::zeros_like(p.reg_output);
    }
    const int hw = p.locations();
    for (int c = 0; c < p.cls_logits.channels; ++c) {
      const auto lg = p.cls_logits.channel(c);
      const auto tg = a.cls_target.channel(c);
      for (int i = 0; i < hw; ++i) {
        if (a.ignore_mask[i]) continue;
        const ElementLoss e = qfl_element(lg[i], tg[i], config.cls_gamma);
        out.cls += e.value / norm;
        if (want_grads) gcls.channel(c)[i] = e.grad / norm;
      }
    }
    const PointGrid grid = grid_for(p);
    for (int i = 0; i < hw; ++i) {
      if (!a.pos_mask[i]) continue;
      const int row = i / grid.cols;
      const int col = i % grid.cols;
      const Box box = decode_location(p.reg_output, grid, row, col);
      const BoxLoss bl = giou_loss(box, target_box(a, row, col));
      out.reg += config.reg_weight * bl.value / norm;
      if (want_grads) {
        std::array<double, 4> g{};
        for (int k = 0; k < 4; ++k) g[k] = config.reg_weight * bl.grad[k] / norm;
        decode_location_backward(p.reg_output, grid, row, col, g, greg);
      }
    }
    if (want_grads) {
      out.grad_cls.push_back(std::move(gcls));
      out.grad_reg.push_back(std::move(greg));
    }
  }
  return out;
}

}  // namespace crosskd
