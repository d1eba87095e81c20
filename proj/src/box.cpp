// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/box.hpp"

#include <algorithm>

namespace crosskd {

double intersection_area(const Box& a, const Box& b) noexcept {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return w > 0.0 && h > 0.0 ? w * h : 0.0;
}

double iou(const Box& a, const Box& b) noexcept {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

Box square_at(double cx, double cy, double side) noexcept {
  const double h = 0.5 * side;
  return {cx - h, cy - h, cx + h, cy + h};
}

}  // namespace crosskd
