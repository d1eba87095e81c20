// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "crosskd/metrics.hpp"

namespace crosskd::testing {

// Single-class, single-image AP by exhaustive search. Every injective partial
// map from detections to gts (IoU >= thr) is enumerated and the one chosen is
// the lexicographic maximum, in descending score order, of
// (matched, IoU, -gt index). That is the matching rule of greedy evaluation
// stated as an optimisation problem. AP is then the area under the
// precision envelope, one recall step per true positive.
inline double brute_force_ap(const std::vector<Detection>& dets, const std::vector<Box>& gts, double thr) {
  if (gts.empty()) return 0.0;
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dets[a].score > dets[b].score; });

  using Key = std::vector<double>;
  Key best_key;
  std::vector<int> best_map;
  std::vector<int> map(dets.size(), -1);
  std::vector<bool> used(gts.size(), false);
  auto key_of = [&] {
    Key k;
    for (int d : order) {
      const int g = map[d];
      k.push_back(g >= 0 ? 1.0 : 0.0);
      k.push_back(g >= 0 ? iou(dets[d].box, gts[g]) : 0.0);
      k.push_back(g >= 0 ? -static_cast<double>(g) : 0.0);
    }
    return k;
  };
  auto rec = [&](auto&& self, std::size_t pos) -> void {
    if (pos == order.size()) {
      Key k = key_of();
      if (best_map.empty() || k > best_key) {
        best_key = k;
        best_map = map;
      }
      return;
    }
    const int d = order[pos];
    map[d] = -1;
    self(self, pos + 1);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || iou(dets[d].box, gts[g]) < thr) continue;
      used[g] = true;
      map[d] = static_cast<int>(g);
      self(self, pos + 1);
      map[d] = -1;
      used[g] = false;
    }
  };
  rec(rec, 0);
  if (order.empty()) return 0.0;

  std::vector<double> precision, recall;
  int tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (best_map[order[k]] >= 0) ++tp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
  }
  double ap = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (best_map[order[k]] < 0) continue;
    ap += (recall[k] - prev) * *std::max_element(precision.begin() + static_cast<long>(k), precision.end());
    prev = recall[k];
  }
  return ap;
}

struct ApFixture {
  std::vector<Detection> dets;
  std::vector<Box> gts;
};

/// Boxes on a coarse integer lattice so that IoU >= 0.5 is common.
inline ApFixture random_ap_fixture(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coord(0, 5), side(1, 4), count_d(0, 4), count_g(0, 3);
  std::uniform_real_distribution<double> score(0.05, 1.0);
  auto box = [&] {
    const double x = coord(rng), y = coord(rng);
    return Box{x, y, x + side(rng), y + side(rng)};
  };
  ApFixture f;
  const int nd = count_d(rng), ng = count_g(rng);
  for (int k = 0; k < ng; ++k) f.gts.push_back(box());
  for (int k = 0; k < nd; ++k) f.dets.push_back({box(), 0, score(rng)});
  return f;
}

inline double greedy_ap(const ApFixture& f, double thr) {
  GroundTruth g;
  for (const Box& b : f.gts) g.instances.push_back({b, 0});
  return evaluate_detections({f.dets}, {g}, 1, thr);
}

}  // namespace crosskd::testing
