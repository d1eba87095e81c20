// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/conv.hpp"

#include <Eigen/Core>

namespace crosskd {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

// Unfolds input patches into a (in*k*k) x (out_h*out_w) matrix.
RowMat im2col(const ConvLayer& l, const Tensor& x, int out_h, int out_w) {
  const int k = l.kernel;
  RowMat cols(static_cast<Eigen::Index>(l.in_channels) * k * k,
              static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < l.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.data() + ((static_cast<Eigen::Index>(c) * k + ky) * k + kx) * cols.cols();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * l.stride - l.pad + ky;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * l.stride - l.pad + kx;
            const bool inside = iy >= 0 && iy < x.height && ix >= 0 && ix < x.width;
            row[oy * out_w + ox] = inside ? x.at(c, iy, ix) : 0.0;
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const ConvLayer& l, const RowMat& cols, int out_h, int out_w, Tensor& dx) {
  const int k = l.kernel;
  for (int c = 0; c < l.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols.data() + ((static_cast<Eigen::Index>(c) * k + ky) * k + kx) * cols.cols();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * l.stride - l.pad + ky;
          if (iy < 0 || iy >= dx.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * l.stride - l.pad + kx;
            if (ix < 0 || ix >= dx.width) continue;
            dx.at(c, iy, ix) += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

ConvLayer::ConvLayer(int in_ch, int out_ch, int k, int s, int p)
    : in_channels(in_ch), out_channels(out_ch), kernel(k), stride(s), pad(p) {
  if (in_ch < 1 || out_ch < 1 || k < 1 || s < 1 || p < 0) {
    throw ConfigError("ConvLayer: invalid geometry");
  }
  weight.assign(static_cast<std::size_t>(out_ch) * in_ch * k * k, 0.0);
  bias.assign(static_cast<std::size_t>(out_ch), 0.0);
}

ConvLayer ConvLayer::zeros_like() const {
  return ConvLayer(in_channels, out_channels, kernel, stride, pad);
}

void ConvLayer::init_normal(std::mt19937_64& rng, double stddev, double bias_value) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& w : weight) w = dist(rng);
  for (double& b : bias) b = bias_value;
}

Tensor conv_forward(const ConvLayer& l, const Tensor& x) {
  if (x.channels != l.in_channels) {
    throw WiringError("conv: input has " + std::to_string(x.channels) +
                      " channels, layer expects " + std::to_string(l.in_channels));
  }
  const int oh = l.out_size(x.height);
  const int ow = l.out_size(x.width);
  if (oh < 1 || ow < 1) throw ConfigError("conv: input too small for kernel");

  const RowMat cols = im2col(l, x, oh, ow);
  Tensor out(l.out_channels, oh, ow);
  ConstMatMap w(l.weight.data(), l.out_channels, cols.rows());
  MatMap y(out.data.data(), l.out_channels, static_cast<Eigen::Index>(oh) * ow);
  y.noalias() = w * cols;
  for (int o = 0; o < l.out_channels; ++o) y.row(o).array() += l.bias[o];
  return out;
}

void conv_backward(const ConvLayer& l, const Tensor& x, const Tensor& dy,
                   ConvLayer* grad_params, Tensor* grad_input) {
  const int oh = dy.height;
  const int ow = dy.width;
  ConstMatMap g(dy.data.data(), l.out_channels, static_cast<Eigen::Index>(oh) * ow);
  ConstMatMap w(l.weight.data(), l.out_channels,
                static_cast<Eigen::Index>(l.in_channels) * l.kernel * l.kernel);

  if (grad_params != nullptr) {
    const RowMat cols = im2col(l, x, oh, ow);
    MatMap gw(grad_params->weight.data(), w.rows(), w.cols());
    gw.noalias() += g * cols.transpose();
    for (int o = 0; o < l.out_channels; ++o) grad_params->bias[o] += g.row(o).sum();
  }
  if (grad_input != nullptr) {
    const RowMat dcols = w.transpose() * g;
    *grad_input = Tensor::zeros_like(x);
    col2im_add(l, dcols, oh, ow, *grad_input);
  }
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

void relu_backward_inplace(const Tensor& relu_output, Tensor& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (!(relu_output.data[i] > 0.0)) grad.data[i] = 0.0;
  }
}

}  // namespace crosskd
