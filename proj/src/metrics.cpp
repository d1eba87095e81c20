// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace crosskd {

std::vector<Detection> postprocess(const std::vector<PredictionMap>& preds, const EvalConfig& config) {
  std::vector<Detection> candidates;
  for (const auto& p : preds) {
    const PointGrid grid = grid_for(p);
    const std::vector<Box> boxes = decode_boxes(p, grid);
    for (int c = 0; c < p.cls_logits.channels; ++c) {
      const auto logits = p.cls_logits.channel(c);
      for (int i = 0; i < p.locations(); ++i) {
        const double s = sigmoid(logits[i]);
        if (s < config.score_thr || !boxes[i].valid()) continue;
        candidates.push_back({boxes[i], c, s});
      }
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const Detection& d : candidates) {
    if (static_cast<int>(kept.size()) >= config.max_dets) break;
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.box, d.box) > config.nms_iou;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

double average_precision(const std::vector<bool>& ranked_tp, int num_gt) {
  if (num_gt <= 0) return 0.0;
  const std::size_t n = ranked_tp.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    tp += ranked_tp[k] ? 1 : 0;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / num_gt;
  }
  for (std::size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (recall[k] > prev_recall) {
      ap += (recall[k] - prev_recall) * precision[k];
      prev_recall = recall[k];
    }
  }
  return ap;
}

double evaluate_detections(const std::vector<std::vector<Detection>>& detections,
                           const std::vector<GroundTruth>& gts, int num_classes, double iou_thr) {
  if (detections.size() != gts.size()) throw ContractViolation("evaluate_detections: image count mismatch");
  double sum = 0.0;
  int classes = 0;
  for (int c = 0; c < num_classes; ++c) {
    int num_gt = 0;
    std::vector<std::vector<char>> matched(gts.size());
    for (std::size_t img = 0; img < gts.size(); ++img) {
      matched[img].assign(gts[img].instances.size(), 0);
      for (const auto& inst : gts[img].instances) num_gt += inst.class_id == c ? 1 : 0;
    }
    if (num_gt == 0) continue;
    struct Ref {
      std::size_t img;
      const Detection* det;
    };
    std::vector<Ref> ranked;
    for (std::size_t img = 0; img < detections.size(); ++img) {
      for (const auto& d : detections[img]) {
        if (d.class_id == c) ranked.push_back({img, &d});
      }
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Ref& a, const Ref& b) { return a.det->score > b.det->score; });
    std::vector<bool> tp;
    tp.reserve(ranked.size());
    for (const Ref& r : ranked) {
      const auto& inst = gts[r.img].instances;
      int best = -1;
      double best_iou = iou_thr;
      for (std::size_t g = 0; g < inst.size(); ++g) {
        if (inst[g].class_id != c || matched[r.img][g]) continue;
        const double v = iou(inst[g].box, r.det->box);
        if (v > best_iou || (best < 0 && v >= best_iou)) {
          best = static_cast<int>(g);
          best_iou = v;
        }
      }
      if (best >= 0) matched[r.img][best] = 1;
      tp.push_back(best >= 0);
    }
    sum += average_precision(tp, num_gt);
    ++classes;
  }
  return classes > 0 ? sum / classes : 0.0;
}

double evaluate_ap(const DetectorModel& model, const std::vector<Sample>& samples, const EvalConfig& config) {
  std::vector<std::vector<Detection>> dets;
  std::vector<GroundTruth> gts;
  dets.reserve(samples.size());
  for (const Sample& s : samples) {
    dets.push_back(postprocess(forward(model, s.image).predictions, config));
    gts.push_back(s.gt);
  }
  return evaluate_detections(dets, gts, model.head_spec().num_classes, config.iou_thr);
}

}  // namespace crosskd
