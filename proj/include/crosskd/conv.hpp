// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "crosskd/tensor.hpp"

namespace crosskd {

/// Square-kernel 2-D convolution with bias. Weights are laid out
/// [out_channels][in_channels][kernel][kernel].
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  std::vector<double> weight;
  std::vector<double> bias;

  ConvLayer() = default;
  ConvLayer(int in_ch, int out_ch, int k, int s, int p);

  /// Same geometry, all parameters zero. Used as a gradient accumulator.
  ConvLayer zeros_like() const;

  int out_size(int in_size) const { return (in_size + 2 * pad - kernel) / stride + 1; }
  std::size_t param_count() const { return weight.size() + bias.size(); }

  void init_normal(std::mt19937_64& rng, double stddev, double bias_value);

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

Tensor conv_forward(const ConvLayer& layer, const Tensor& input);

/// Backward pass of conv_forward. Parameter gradients are accumulated into
/// `grad_params` and the input gradient is written to `grad_input`; either
/// may be null when not needed.
void conv_backward(const ConvLayer& layer, const Tensor& input,
                   const Tensor& grad_output, ConvLayer* grad_params,
                   Tensor* grad_input);

Tensor relu(const Tensor& x);

/// Masks `grad` in place by the positivity of a ReLU output.
void relu_backward_inplace(const Tensor& relu_output, Tensor& grad);

}  // namespace crosskd
