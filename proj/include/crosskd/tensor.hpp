// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace crosskd {

/// Raised when a documented precondition of an operation is violated.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a model or run configuration is internally inconsistent.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when features delivered into a head do not fit the receiving layer.
class WiringError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a loss component becomes non-finite during training.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::string component, const std::string& what)
      : std::runtime_error(what), component_(std::move(component)) {}
  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

/// Dense channels x height x width grid of doubles, row-major.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w, double fill = 0.0);

  static Tensor zeros_like(const Tensor& other) {
    return Tensor(other.channels, other.height, other.width);
  }

  std::size_t size() const noexcept { return data.size(); }
  bool empty() const noexcept { return data.empty(); }
  int plane() const noexcept { return height * width; }

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  std::span<double> channel(int c) {
    return {data.data() + static_cast<std::size_t>(c) * plane(),
            static_cast<std::size_t>(plane())};
  }
  std::span<const double> channel(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * plane(),
            static_cast<std::size_t>(plane())};
  }

  bool same_shape(const Tensor& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }

  void fill(double v);
  Tensor& operator+=(const Tensor& o);
  Tensor& operator*=(double s);
  bool all_finite() const;
  double squared_norm() const;

  std::string shape_string() const;
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace crosskd
