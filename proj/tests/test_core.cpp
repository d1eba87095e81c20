// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "crosskd/box.hpp"
#include "crosskd/conv.hpp"
#include "crosskd/csv.hpp"
#include "test_util.hpp"

using namespace crosskd;
using crosskd::testing::central_diff;
using crosskd::testing::random_tensor;
using crosskd::testing::rel_error;

namespace {

// Direct nested-loop convolution, independent of the GEMM path.
Tensor naive_conv(const ConvLayer& l, const Tensor& x) {
  Tensor y(l.out_channels, l.out_size(x.height), l.out_size(x.width));
  for (int o = 0; o < l.out_channels; ++o) {
    for (int r = 0; r < y.height; ++r) {
      for (int c = 0; c < y.width; ++c) {
        double acc = l.bias[o];
        for (int i = 0; i < l.in_channels; ++i) {
          for (int ky = 0; ky < l.kernel; ++ky) {
            for (int kx = 0; kx < l.kernel; ++kx) {
              const int yy = r * l.stride - l.pad + ky;
              const int xx = c * l.stride - l.pad + kx;
              if (yy < 0 || xx < 0 || yy >= x.height || xx >= x.width) continue;
              acc += l.weight[((o * l.in_channels + i) * l.kernel + ky) * l.kernel + kx] * x.at(i, yy, xx);
            }
          }
        }
        y.at(o, r, c) = acc;
      }
    }
  }
  return y;
}

}  // namespace

TEST_CASE("tensor arithmetic and shape helpers") {
  Tensor a(2, 2, 3, 1.5);
  CHECK(a.size() == 12);
  CHECK(a.plane() == 6);
  a.at(1, 1, 2) = 4.0;
  CHECK(a.channel(1)[5] == 4.0);
  Tensor b = Tensor::zeros_like(a);
  b += a;
  b *= 2.0;
  CHECK(b.at(1, 1, 2) == 8.0);
  CHECK(b.shape_string() == "(2x2x3)");
  CHECK(b.all_finite());
  b.at(0, 0, 0) = std::nan("");
  CHECK_FALSE(b.all_finite());
  CHECK_THROWS_AS(a += Tensor(1, 2, 3), ContractViolation);
}

TEST_CASE("1x1 convolution on a hand fixture") {
  ConvLayer l(1, 1, 1, 1, 0);
  l.weight = {2.0};
  l.bias = {1.0};
  Tensor x(1, 2, 2);
  x.data = {1, 2, 3, 4};
  const Tensor y = conv_forward(l, x);
  CHECK(y.data == std::vector<double>{3, 5, 7, 9});
}

TEST_CASE("conv_forward matches a direct loop implementation") {
  std::mt19937_64 rng(11);
  for (int stride : {1, 2}) {
    ConvLayer l(3, 4, 3, stride, 1);
    l.init_normal(rng, 0.5, 0.1);
    const Tensor x = random_tensor(3, 7, 6, rng);
    const Tensor got = conv_forward(l, x);
    const Tensor want = naive_conv(l, x);
    REQUIRE(got.same_shape(want));
    for (std::size_t k = 0; k < got.data.size(); ++k) CHECK(got.data[k] == doctest::Approx(want.data[k]).epsilon(1e-12));
  }
}

TEST_CASE("conv_forward rejects a channel mismatch") {
  ConvLayer l(3, 2, 3, 1, 1);
  CHECK_THROWS_AS(conv_forward(l, Tensor(2, 4, 4)), WiringError);
}

TEST_CASE("conv_backward agrees with central differences") {
  std::mt19937_64 rng(5);
  ConvLayer l(2, 3, 3, 2, 1);
  l.init_normal(rng, 0.4, 0.0);
  Tensor x = random_tensor(2, 5, 5, rng);
  const Tensor g_out = random_tensor(3, 3, 3, rng);
  auto loss = [&] {
    const Tensor y = conv_forward(l, x);
    double s = 0.0;
    for (std::size_t k = 0; k < y.data.size(); ++k) s += y.data[k] * g_out.data[k];
    return s;
  };
  ConvLayer gp = l.zeros_like();
  Tensor gx;
  conv_backward(l, x, g_out, &gp, &gx);

  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t k = 0; k < l.weight.size(); k += 3) {
    coords.push_back(&l.weight[k]);
    analytic.push_back(gp.weight[k]);
  }
  for (std::size_t k = 0; k < l.bias.size(); ++k) {
    coords.push_back(&l.bias[k]);
    analytic.push_back(gp.bias[k]);
  }
  for (std::size_t k = 0; k < x.data.size(); k += 2) {
    coords.push_back(&x.data[k]);
    analytic.push_back(gx.data[k]);
  }
  const auto numeric = central_diff(loss, coords.data(), coords.size());
  CHECK(rel_error(analytic, numeric) < 1e-8);
}

TEST_CASE("relu and its mask") {
  Tensor x(1, 1, 4);
  x.data = {-1.0, 0.0, 0.5, 2.0};
  const Tensor y = relu(x);
  CHECK(y.data == std::vector<double>{0.0, 0.0, 0.5, 2.0});
  Tensor g(1, 1, 4, 1.0);
  relu_backward_inplace(y, g);
  CHECK(g.data == std::vector<double>{0.0, 0.0, 1.0, 1.0});
}

TEST_CASE("box geometry") {
  const Box a{0, 0, 4, 4};
  const Box b{2, 0, 6, 4};
  CHECK(intersection_area(a, b) == 8.0);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{5, 5, 6, 6}) == 0.0);
  CHECK(a.contains(2, 2));
  CHECK_FALSE(a.contains(0, 2));  // boundary is outside
  CHECK(square_at(2, 2, 4) == a);
}

TEST_CASE("csv helpers") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345678.9}) CHECK(csv::to_double(csv::num(v)) == v);
  const auto lines = csv::data_lines("# meta\na,b\r\n\n1,2\n");
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "a,b");
  CHECK(csv::split("1,,3") == std::vector<std::string>{"1", "", "3"});
  CHECK_THROWS_AS(csv::to_int("x"), ConfigError);
  CHECK_THROWS_AS(csv::to_double("1.5abc"), ConfigError);
}
