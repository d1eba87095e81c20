// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace crosskd {

Tensor::Tensor(int c, int h, int w, double fill)
    : channels(c), height(h), width(w) {
  if (c < 0 || h < 0 || w < 0) {
    throw ContractViolation("Tensor: negative dimension");
  }
  data.assign(static_cast<std::size_t>(c) * h * w, fill);
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

Tensor& Tensor::operator+=(const Tensor& o) {
  if (!same_shape(o)) {
    throw ContractViolation("Tensor +=: shape mismatch " + shape_string() +
                            " vs " + o.shape_string());
  }
  for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data) v *= s;
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(),
                     [](double v) { return std::isfinite(v); });
}

double Tensor::squared_norm() const {
  double s = 0.0;
  for (double v : data) s += v * v;
  return s;
}

std::string Tensor::shape_string() const {
  return "(" + std::to_string(channels) + "x" + std::to_string(height) + "x" +
         std::to_string(width) + ")";
}

}  // namespace crosskd
