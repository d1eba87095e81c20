// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>

#include "crosskd/checkpoint.hpp"
#include "crosskd/detector.hpp"
#include "test_util.hpp"

using namespace crosskd;
using namespace crosskd::testing;

TEST_CASE("zero parameters and zero image give zero logits") {
  DetectorModel m = DetectorModel::create(tiny_config(), 3);
  m.params().for_each_layer([](const std::string&, ParamGroup, ConvLayer& l) {
    std::fill(l.weight.begin(), l.weight.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  });
  const ForwardResult f = forward(m, Tensor(1, 16, 16));
  for (const auto& p : f.predictions) {
    for (double v : p.cls_logits.data) CHECK(v == 0.0);
    for (double v : p.reg_output.data) CHECK(v == 0.0);
  }
}

TEST_CASE("forward is deterministic and exposes n intermediates per branch") {
  std::mt19937_64 rng(1);
  const Tensor img = random_tensor(1, 16, 16, rng);
  const DetectorModel a = DetectorModel::create(tiny_config(3), 9);
  const DetectorModel b = DetectorModel::create(tiny_config(3), 9);
  CHECK(a == b);
  const ForwardResult fa = forward(a, img);
  const ForwardResult fb = forward(b, img);
  REQUIRE(fa.predictions.size() == 2);
  for (int l = 0; l < 2; ++l) {
    CHECK(fa.predictions[l].cls_logits == fb.predictions[l].cls_logits);
    CHECK(fa.predictions[l].reg_output == fb.predictions[l].reg_output);
    CHECK(fa.predictions[l].stride == (l == 0 ? 8 : 16));
    CHECK(fa.predictions[l].reg_output.channels == 4 * 4);
    for (Branch br : kBranches) CHECK(fa.intermediates[static_cast<int>(br)][l].size() == 3);
  }
}

TEST_CASE("default toy architecture") {
  const ModelConfig c;
  CHECK(c.strides() == std::vector<int>{8, 16});
  CHECK(c.head.n_layers == 4);
  CHECK(c.head.hidden_channels == 32);
  CHECK(c.head.bin_count == 8);
  CHECK(c.head.reg_channels() == 36);
  const DetectorModel m = DetectorModel::create(c, 1);
  const ForwardResult f = forward(m, Tensor(1, 64, 64));
  CHECK(f.predictions[0].height() == 8);
  CHECK(f.predictions[1].height() == 4);
}

TEST_CASE("forward input validation") {
  const DetectorModel m = DetectorModel::create(tiny_config(), 1);
  CHECK_THROWS_AS(forward(m, Tensor(1, 12, 16)), ConfigError);
  CHECK_THROWS_AS(forward(m, Tensor(2, 16, 16)), ConfigError);
}

TEST_CASE("replaying the head from every split reproduces the prediction") {
  std::mt19937_64 rng(2);
  const DetectorModel m = DetectorModel::create(tiny_config(4), 4);
  const ForwardResult f = forward(m, random_tensor(1, 16, 16, rng));
  for (int lvl = 0; lvl < 2; ++lvl) {
    for (int j = 1; j <= 4; ++j) {
      const PredictionMap p = forward_head_from(m, lvl, f.feature(Branch::cls, lvl, j - 1),
                                                f.feature(Branch::reg, lvl, j - 1), j);
      for (std::size_t k = 0; k < p.cls_logits.data.size(); ++k)
        CHECK(p.cls_logits.data[k] == doctest::Approx(f.predictions[lvl].cls_logits.data[k]).epsilon(1e-12));
      for (std::size_t k = 0; k < p.reg_output.data.size(); ++k)
        CHECK(p.reg_output.data[k] == doctest::Approx(f.predictions[lvl].reg_output.data[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("start layer n applies only the predictor") {
  std::mt19937_64 rng(3);
  const DetectorModel m = DetectorModel::create(tiny_config(3), 5);
  const ForwardResult f = forward(m, random_tensor(1, 16, 16, rng));
  const auto layers = m.head(Branch::cls, 0);
  const Tensor direct = conv_forward(layers[2], f.feature(Branch::cls, 0, 2).values);
  const Tensor via = forward_branch_from(layers, f.feature(Branch::cls, 0, 2).values, 3);
  CHECK(direct == via);
}

TEST_CASE("identical teacher and student parameters give identical cross predictions") {
  std::mt19937_64 rng(4);
  const DetectorModel t = DetectorModel::create(tiny_config(3), 6);
  const DetectorModel s = t;
  const Tensor img = random_tensor(1, 16, 16, rng);
  const ForwardResult fs = forward(s, img);
  const ForwardResult ft = forward(t, img);
  for (int i = 0; i < 3; ++i) {
    const PredictionMap p = forward_head_from(t, 1, fs.feature(Branch::cls, 1, i), fs.feature(Branch::reg, 1, i), i + 1);
    for (std::size_t k = 0; k < p.cls_logits.data.size(); ++k)
      CHECK(std::abs(p.cls_logits.data[k] - ft.predictions[1].cls_logits.data[k]) < 1e-6);
  }
}

TEST_CASE("branch entry errors") {
  const DetectorModel m = DetectorModel::create(tiny_config(3), 1);
  const auto layers = m.head(Branch::cls, 0);
  CHECK_THROWS_AS(forward_branch_from(layers, Tensor(4, 2, 2), 0), ContractViolation);
  CHECK_THROWS_AS(forward_branch_from(layers, Tensor(4, 2, 2), 4), ContractViolation);
  CHECK_THROWS_AS(forward_branch_from(layers, Tensor(5, 2, 2), 2), WiringError);
}

TEST_CASE("shared heads alias one parameter set across levels") {
  DetectorModel m = DetectorModel::create(tiny_config(), 1);
  CHECK(m.head(Branch::reg, 0).data() == m.head(Branch::reg, 1).data());
  m.head_mut(Branch::reg, 0)[0].bias[0] = 42.0;
  CHECK(m.head(Branch::reg, 1)[0].bias[0] == 42.0);

  ModelConfig c = tiny_config();
  c.head.shared_across_levels = false;
  const DetectorModel u = DetectorModel::create(c, 1);
  CHECK(u.head(Branch::reg, 0).data() != u.head(Branch::reg, 1).data());
}

TEST_CASE("distribution decoding") {
  const PointGrid grid{8, 1, 1};
  SUBCASE("uniform bins give the middle distance") {
    Tensor reg(4 * 9, 1, 1, 0.3);
    const Box b = decode_location(reg, grid, 0, 0);
    CHECK(b.x1 == doctest::Approx(4.0 - 8.0 * 4.0));
    CHECK(b.y2 == doctest::Approx(4.0 + 8.0 * 4.0));
  }
  SUBCASE("two bins with logits (0, ln 2)") {
    Tensor reg(8, 1, 1);
    for (int e = 0; e < 4; ++e) reg.at(e * 2 + 1, 0, 0) = std::log(2.0);
    const Box b = decode_location(reg, grid, 0, 0);
    CHECK(b.x2 - 4.0 == doctest::Approx(8.0 * 2.0 / 3.0));
  }
  SUBCASE("a dominant bin pins the distance") {
    Tensor reg(4 * 9, 1, 1);
    for (int e = 0; e < 4; ++e) reg.at(e * 9 + 5, 0, 0) = 60.0;
    const Box b = decode_location(reg, grid, 0, 0);
    CHECK(b.x2 - 4.0 == doctest::Approx(40.0).epsilon(1e-12));
  }
  SUBCASE("expectation equals a brute-force bin sum") {
    std::mt19937_64 rng(8);
    const Tensor logits = random_tensor(1, 1, 9, rng, 2.0);
    double z = 0.0, acc = 0.0;
    for (int k = 0; k < 9; ++k) z += std::exp(logits.data[k]);
    for (int k = 0; k < 9; ++k) acc += k * std::exp(logits.data[k]) / z;
    CHECK(distribution_expectation(logits.data) == doctest::Approx(acc).epsilon(1e-13));
  }
}

TEST_CASE("box-offset decoding uses softplus distances") {
  const PointGrid grid{16, 2, 2};
  Tensor reg(4, 2, 2);
  reg.at(0, 1, 0) = 0.0;
  reg.at(2, 1, 0) = 1.0;
  const Box b = decode_location(reg, grid, 1, 0);
  CHECK(b.x1 == doctest::Approx(8.0 - 16.0 * std::log(2.0)));
  CHECK(b.x2 == doctest::Approx(8.0 + 16.0 * std::log1p(std::exp(1.0))));
  CHECK(b.center_y() == doctest::Approx(24.0));
}

TEST_CASE("decode_location_backward matches finite differences") {
  std::mt19937_64 rng(12);
  for (int channels : {4, 16}) {
    const PointGrid grid{8, 2, 3};
    Tensor reg = random_tensor(channels, 2, 3, rng);
    const std::array<double, 4> w{0.3, -1.1, 0.7, 2.0};
    auto f = [&] {
      const auto b = decode_location(reg, grid, 1, 2).as_array();
      return w[0] * b[0] + w[1] * b[1] + w[2] * b[2] + w[3] * b[3];
    };
    Tensor g = Tensor::zeros_like(reg);
    decode_location_backward(reg, grid, 1, 2, w, g);
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (int c = 0; c < channels; ++c) {
      coords.push_back(&reg.at(c, 1, 2));
      analytic.push_back(g.at(c, 1, 2));
    }
    CHECK(rel_error(analytic, central_diff(f, coords.data(), coords.size())) < 1e-7);
  }
}

TEST_CASE("full backward pass matches finite differences") {
  for (RegMode mode : {RegMode::distribution, RegMode::box_offsets}) {
    std::mt19937_64 rng(21);
    DetectorModel m = DetectorModel::create(tiny_config(3, mode), 17);
    const Tensor img = random_tensor(1, 16, 16, rng);
    const ForwardResult f0 = forward(m, img);
    OutputGrads up = OutputGrads::for_model(m.config());
    for (int l = 0; l < 2; ++l) {
      up.cls[l] = random_tensor(2, f0.predictions[l].height(), f0.predictions[l].width(), rng);
      up.reg[l] = random_tensor(f0.predictions[l].reg_output.channels, f0.predictions[l].height(),
                                f0.predictions[l].width(), rng);
    }
    auto loss = [&] {
      const ForwardResult f = forward(m, img);
      double s = 0.0;
      for (int l = 0; l < 2; ++l) {
        for (std::size_t k = 0; k < up.cls[l].data.size(); ++k) s += up.cls[l].data[k] * f.predictions[l].cls_logits.data[k];
        for (std::size_t k = 0; k < up.reg[l].data.size(); ++k) s += up.reg[l].data[k] * f.predictions[l].reg_output.data[k];
      }
      return s;
    };
    DetectorParams grads = m.params().zeros_like();
    backward(m, f0, up, grads);

    std::vector<double*> coords;
    std::vector<double> analytic;
    std::vector<ConvLayer*> p_layers, g_layers;
    m.params().for_each_layer([&](const std::string&, ParamGroup, ConvLayer& l) { p_layers.push_back(&l); });
    grads.for_each_layer([&](const std::string&, ParamGroup, ConvLayer& l) { g_layers.push_back(&l); });
    std::uniform_int_distribution<std::size_t> pick(0, 1'000'000);
    for (std::size_t k = 0; k < p_layers.size(); ++k) {
      const std::size_t w = pick(rng) % p_layers[k]->weight.size();
      coords.push_back(&p_layers[k]->weight[w]);
      analytic.push_back(g_layers[k]->weight[w]);
      coords.push_back(&p_layers[k]->bias[0]);
      analytic.push_back(g_layers[k]->bias[0]);
    }
    CHECK(rel_error(analytic, central_diff(loss, coords.data(), coords.size())) < 1e-6);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  ModelConfig c = tiny_config(3, RegMode::box_offsets);
  c.head.shared_across_levels = false;
  DetectorModel m = DetectorModel::create(c, 77);
  m.head_mut(Branch::cls, 1)[0].weight[0] = 1.0 / 3.0;
  const std::string bytes = serialize_checkpoint(m);
  const DetectorModel back = deserialize_checkpoint(bytes);
  CHECK(back.config() == m.config());
  CHECK(back.params() == m.params());
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(bytes.find("cls.1/1/weight") != std::string::npos);
  CHECK(bytes.find("\"strides\"") != std::string::npos);

  const auto path = std::filesystem::temp_directory_path() / "crosskd_ckpt_roundtrip.ckpt";
  save_checkpoint(m, path);
  CHECK(load_checkpoint(path).params() == m.params());
  std::filesystem::remove(path);

  CHECK_THROWS_AS(deserialize_checkpoint("garbage"), ConfigError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 5)), ConfigError);
}

TEST_CASE("frozen flags") {
  DetectorModel m = DetectorModel::create(tiny_config(), 1);
  CHECK_FALSE(m.fully_frozen());
  for (int g = 0; g < kParamGroups; ++g) m.set_frozen(static_cast<ParamGroup>(g), true);
  CHECK(m.fully_frozen());
}
