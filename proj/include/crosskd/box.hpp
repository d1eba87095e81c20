// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>

namespace crosskd {

/// Axis-aligned box in image coordinates, (x1, y1) top-left.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept {
    return width() > 0.0 && height() > 0.0 ? width() * height() : 0.0;
  }
  bool valid() const noexcept { return x1 < x2 && y1 < y2; }
  double center_x() const noexcept { return 0.5 * (x1 + x2); }
  double center_y() const noexcept { return 0.5 * (y1 + y2); }
  bool contains(double x, double y) const noexcept {
    return x > x1 && x < x2 && y > y1 && y < y2;
  }

  std::array<double, 4> as_array() const { return {x1, y1, x2, y2}; }
  static Box from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }

  friend bool operator==(const Box&, const Box&) = default;
};

double intersection_area(const Box& a, const Box& b) noexcept;

/// Intersection over union; 0 when the union is empty.
double iou(const Box& a, const Box& b) noexcept;

/// Square box of the given side centred at (cx, cy).
Box square_at(double cx, double cy, double side) noexcept;

}  // namespace crosskd
