// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <functional>
#include <limits>

#include "crosskd/engine.hpp"
#include "test_util.hpp"

using namespace crosskd;
using namespace crosskd::testing;

namespace {

constexpr Strategy kAll[] = {Strategy::crosskd_a, Strategy::reverse_b, Strategy::self_student_c,
                             Strategy::self_teacher_d, Strategy::pred_mimic};

struct Pair {
  DetectorModel teacher;
  DetectorModel student;
  Tensor image;
  AssignmentResult assignment;
};

Pair make_pair(int n_layers, std::uint64_t teacher_seed, std::uint64_t student_seed, int teacher_hidden = 4) {
  Pair p;
  p.teacher = DetectorModel::create(tiny_config(n_layers, RegMode::distribution, teacher_hidden), teacher_seed);
  p.student = DetectorModel::create(tiny_config(n_layers), student_seed);
  freeze_teacher(p.teacher);
  std::mt19937_64 rng(teacher_seed * 31 + student_seed);
  p.image = random_tensor(1, 16, 16, rng);
  GroundTruth gt;
  gt.instances.push_back({Box{2, 3, 13, 12}, 1});
  p.assignment = assign_atss(grids_for(p.student.config(), 16, 16), gt, 2, 9);
  return p;
}

StepRequest request(const Pair& p, const DistillConfig& d, bool detection = false) {
  StepRequest r;
  r.student = &p.student;
  r.teacher = &p.teacher;
  r.image = &p.image;
  r.assignment = &p.assignment;
  r.distill = d;
  r.include_detection = detection;
  return r;
}

double layer_norm(const ConvLayer& l) {
  double s = 0.0;
  for (double v : l.weight) s += v * v;
  for (double v : l.bias) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("strategy names") {
  for (Strategy s : kAll) CHECK(strategy_from_string(to_string(s)) == s);
  CHECK(to_string(Strategy::crosskd_a) == "crosskd");
  CHECK(cls_kd_loss_from_string("bce") == ClsKdLoss::bce);
  CHECK(reg_kd_loss_from_string("giou") == RegKdLoss::giou);
  CHECK_THROWS_AS(strategy_from_string("cross"), ConfigError);
}

TEST_CASE("distill config validation") {
  const HeadSpec head = tiny_config(2).head;
  DistillConfig d;
  d.split_index = 2;
  CHECK_NOTHROW(d.validate(head));
  d.split_index = 3;
  CHECK_THROWS_AS(d.validate(head), ConfigError);
  d.split_index = 1;
  d.tau = 0.0;
  CHECK_THROWS_AS(d.validate(head), ConfigError);
  d.tau = 1.0;
  d.w_feat = 1.0;
  d.feat_head = true;
  CHECK_NOTHROW(d.validate(head));
  d.split_index = 2;
  CHECK_THROWS_AS(d.validate(head), ConfigError);
  DistillConfig box;
  box.split_index = 1;
  CHECK_THROWS_AS(box.validate(tiny_config(2, RegMode::box_offsets).head), ConfigError);
  box.reg_loss = RegKdLoss::giou;
  CHECK_NOTHROW(box.validate(tiny_config(2, RegMode::box_offsets).head));
}

TEST_CASE("cross-head prediction with identical parameters reproduces the student") {
  Pair p = make_pair(3, 5, 5);
  const ForwardResult sf = forward(p.student, p.image);
  for (int i = 0; i <= 3; ++i) {
    const auto cross = cross_head_predict(p.teacher, sf, i);
    for (int l = 0; l < 2; ++l) {
      for (std::size_t k = 0; k < cross[l].cls_logits.data.size(); ++k)
        CHECK(std::abs(cross[l].cls_logits.data[k] - sf.predictions[l].cls_logits.data[k]) <= 1e-6);
      for (std::size_t k = 0; k < cross[l].reg_output.data.size(); ++k)
        CHECK(std::abs(cross[l].reg_output.data[k] - sf.predictions[l].reg_output.data[k]) <= 1e-6);
    }
  }
}

TEST_CASE("split n returns the student predictions for any teacher") {
  Pair p = make_pair(3, 1, 2);
  const ForwardResult sf = forward(p.student, p.image);
  const auto cross = cross_head_predict(p.teacher, sf, 3);
  for (int l = 0; l < 2; ++l) {
    CHECK(cross[l].cls_logits == sf.predictions[l].cls_logits);
    CHECK(cross[l].reg_output == sf.predictions[l].reg_output);
  }
  CHECK_THROWS_AS(cross_head_predict(p.teacher, sf, 4), ContractViolation);
  CHECK_THROWS_AS(cross_head_predict(p.teacher, sf, -1), ContractViolation);
  DetectorModel unfrozen = DetectorModel::create(tiny_config(3), 1);
  CHECK_THROWS_AS(cross_head_predict(unfrozen, sf, 1), ContractViolation);
}

TEST_CASE("split 0 through a hand-set two-layer teacher head") {
  // C_1 is the identity on the centre tap, C_2 a fixed 1x1-like map, so the
  // cross prediction at each location is b2 + W2 relu(f_0).
  Pair p = make_pair(2, 3, 4);
  DetectorModel& t = p.teacher;
  const int hidden = 4;
  auto& cls = t.head_mut(Branch::cls, 0);
  std::fill(cls[0].weight.begin(), cls[0].weight.end(), 0.0);
  std::fill(cls[0].bias.begin(), cls[0].bias.end(), 0.0);
  std::fill(cls[1].weight.begin(), cls[1].weight.end(), 0.0);
  const int k = cls[0].kernel;
  const int centre = (k / 2) * k + k / 2;
  for (int c = 0; c < hidden; ++c) cls[0].weight[(c * hidden + c) * k * k + centre] = 1.0;
  const double w2[2][4] = {{1.0, -2.0, 0.5, 0.0}, {0.0, 1.0, 1.0, 3.0}};
  const double b2[2] = {0.25, -1.0};
  for (int o = 0; o < 2; ++o) {
    cls[1].bias[o] = b2[o];
    for (int c = 0; c < hidden; ++c) cls[1].weight[(o * hidden + c) * k * k + centre] = w2[o][c];
  }
  const ForwardResult sf = forward(p.student, p.image);
  const auto cross = cross_head_predict(t, sf, 0);
  for (int l = 0; l < 2; ++l) {
    const Tensor& f0 = sf.feature(Branch::cls, l, 0).values;
    for (int r = 0; r < f0.height; ++r) {
      for (int c = 0; c < f0.width; ++c) {
        for (int o = 0; o < 2; ++o) {
          double want = b2[o];
          for (int h = 0; h < hidden; ++h) want += w2[o][h] * std::max(0.0, f0.at(h, r, c));
          CHECK(cross[l].cls_logits.at(o, r, c) == doctest::Approx(want).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("strategy predictions compose the expected heads") {
  Pair p = make_pair(3, 7, 8);
  const ForwardResult sf = forward(p.student, p.image);
  const ForwardResult tf = forward(p.teacher, p.image);
  for (int i = 0; i <= 3; ++i) {
    for (Strategy s : kAll) {
      DistillConfig d;
      d.strategy = s;
      d.split_index = i;
      const StrategyPredictions sp = strategy_predictions(p.teacher, p.student, tf, sf, d);
      const int j = d.effective_split(3);
      for (int l = 0; l < 2; ++l) {
        PredictionMap src, tgt;
        const bool student_features = s == Strategy::crosskd_a || s == Strategy::self_student_c || s == Strategy::pred_mimic;
        const ForwardResult& feats = student_features ? sf : tf;
        const DetectorModel& owner = student_features ? p.teacher : p.student;
        src = j == 3 ? feats.predictions[l]
                     : forward_head_from(owner, l, feats.feature(Branch::cls, l, j), feats.feature(Branch::reg, l, j), j + 1);
        const bool target_is_student = s == Strategy::reverse_b || s == Strategy::self_student_c;
        tgt = (target_is_student ? sf : tf).predictions[l];
        CHECK(sp.source[l].cls_logits == src.cls_logits);
        CHECK(sp.source[l].reg_output == src.reg_output);
        CHECK(sp.target[l].cls_logits == tgt.cls_logits);
      }
    }
  }
}

TEST_CASE("total_loss arithmetic and divergence") {
  DistillConfig d;
  d.w_cls_kd = 0.0;
  d.w_reg_kd = 0.0;
  LossComponents parts{0.7, 0.3, 5.0, 6.0, 7.0};
  CHECK(total_loss(parts, d).total_loss == doctest::Approx(1.0));
  d.w_cls_kd = 1.0;
  parts = {1.0, 0.0, 0.5, 0.0, 0.0};
  const DistillBatchOutput out = total_loss(parts, d);
  CHECK(out.total_loss == 1.5);
  CHECK(out.components.at("kd_cls") == 0.5);
  CHECK(out.components.size() == 5);
  parts.kd_reg = std::numeric_limits<double>::quiet_NaN();
  try {
    total_loss(parts, d);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.component() == "kd_reg");
  }
}

TEST_CASE("feature imitation values") {
  std::mt19937_64 rng(19);
  FeatureMap s{random_tensor(3, 4, 5, rng), 8, 0};
  CHECK(feat_imitation_loss(s, s).value.scalar == 0.0);

  FeatureMap t = s;
  const double a[3] = {2.0, 0.5, 7.0}, b[3] = {-1.0, 3.0, 0.25};
  for (int c = 0; c < 3; ++c)
    for (double& v : t.values.channel(c)) v = a[c] * v + b[c];
  CHECK(feat_imitation_loss(s, t).value.scalar < 1e-5);

  CHECK_THROWS_AS(feat_imitation_loss(s, FeatureMap{Tensor(3, 4, 4), 8, 0}), ContractViolation);
}

TEST_CASE("feature imitation on a 2x2x2 pair against a two-pass computation") {
  FeatureMap s{Tensor(2, 2, 2), 8, 0}, t{Tensor(2, 2, 2), 8, 0};
  s.values.data = {1.0, 2.0, 4.0, 7.0, -1.0, 0.0, 0.5, 3.0};
  t.values.data = {0.0, 1.0, 1.0, 5.0, 2.0, 2.5, -3.0, 1.0};
  double want = 0.0;
  for (int c = 0; c < 2; ++c) {
    double ys[4], yt[4];
    for (auto [src, dst] : {std::pair{&s, ys}, std::pair{&t, yt}}) {
      const auto x = src->values.channel(c);
      const double mean = (x[0] + x[1] + x[2] + x[3]) / 4.0;
      double var = 0.0;
      for (int k = 0; k < 4; ++k) var += (x[k] - mean) * (x[k] - mean) / 4.0;
      for (int k = 0; k < 4; ++k) dst[k] = (x[k] - mean) / (std::sqrt(var) + 1e-6);
    }
    for (int k = 0; k < 4; ++k) want += (ys[k] - yt[k]) * (ys[k] - yt[k]);
  }
  want /= 8.0;
  CHECK(feat_imitation_loss(s, t).value.scalar == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("feature imitation gradient matches finite differences") {
  std::mt19937_64 rng(20);
  FeatureMap s{random_tensor(3, 3, 4, rng), 8, 0};
  const FeatureMap t{random_tensor(3, 3, 4, rng), 8, 0};
  const FeatureLoss fl = feat_imitation_loss(s, t);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (int k = 0; k < 20; ++k) {
    coords.push_back(&s.values.data[k + 8]);
    analytic.push_back(fl.grad.data[k + 8]);
  }
  auto f = [&] { return feat_imitation_loss(s, t).value.scalar; };
  CHECK(rel_error(analytic, central_diff(f, coords.data(), coords.size())) < 1e-4);
}

TEST_CASE("identical teacher and student give zero KD loss for every strategy") {
  for (int i = 0; i <= 2; ++i) {
    Pair p = make_pair(2, 9, 9);
    for (Strategy s : kAll) {
      for (ClsKdLoss cl : {ClsKdLoss::qfl}) {
        DistillConfig d;
        d.strategy = s;
        d.split_index = i;
        d.cls_loss = cl;
        const StepResult r = distill_step(request(p, d), nullptr);
        CHECK(r.parts.kd_cls == 0.0);
        CHECK(r.parts.kd_reg == 0.0);
      }
    }
  }
}

TEST_CASE("zero KD weights skip the distillation terms") {
  Pair p = make_pair(2, 1, 2);
  DistillConfig d;
  d.split_index = 1;
  d.w_cls_kd = 0.0;
  d.w_reg_kd = 0.0;
  StepRequest with = request(p, d, true);
  StepRequest without = with;
  without.teacher = nullptr;
  DetectorParams ga = p.student.params().zeros_like();
  DetectorParams gb = p.student.params().zeros_like();
  const StepResult a = distill_step(with, &ga);
  const StepResult b = distill_step(without, &gb);
  CHECK(a.output.total_loss == b.output.total_loss);
  CHECK(a.parts.kd_cls == 0.0);
  CHECK(ga == gb);
}

TEST_CASE("prediction mimicking equals cross-head distillation at split n") {
  Pair p = make_pair(3, 11, 12);
  DistillConfig a;
  a.split_index = 3;
  DistillConfig m = a;
  m.strategy = Strategy::pred_mimic;
  m.split_index = 1;  // ignored
  DetectorParams ga = p.student.params().zeros_like();
  DetectorParams gm = p.student.params().zeros_like();
  const StepResult ra = distill_step(request(p, a, true), &ga);
  const StepResult rm = distill_step(request(p, m, true), &gm);
  CHECK(ra.output.total_loss == rm.output.total_loss);
  CHECK(ga == gm);
}

TEST_CASE("cross-head KD gradients reach only layers up to the split") {
  for (int i = 0; i <= 2; ++i) {
    CAPTURE(i);
    Pair p = make_pair(2, 13, 14);
    DistillConfig d;
    d.split_index = i;
    DetectorParams g = p.student.params().zeros_like();
    distill_step(request(p, d), &g);
    for (Branch b : kBranches) {
      const auto& head = g.heads(b)[0];
      for (int k = 0; k < 2; ++k) {
        if (k + 1 > i) {
          CHECK(layer_norm(head[k]) == 0.0);
        } else {
          CHECK(layer_norm(head[k]) > 1e-8);
        }
      }
    }
    double backbone = 0.0;
    for (const auto& l : g.backbone) backbone += layer_norm(l);
    for (const auto& l : g.neck) backbone += layer_norm(l);
    CHECK(backbone > 1e-8);
  }
}

TEST_CASE("reverse strategies train the student head only") {
  Pair p = make_pair(2, 15, 16);
  DistillConfig d;
  d.strategy = Strategy::self_teacher_d;
  d.split_index = 1;
  DetectorParams g = p.student.params().zeros_like();
  distill_step(request(p, d), &g);
  CHECK(layer_norm(g.heads(Branch::cls)[0][0]) == 0.0);
  CHECK(layer_norm(g.heads(Branch::cls)[0][1]) > 1e-8);
  for (const auto& l : g.backbone) CHECK(layer_norm(l) == 0.0);
}

TEST_CASE("KD gradient at the delivered feature matches finite differences") {
  Pair p = make_pair(3, 17, 18);
  DistillConfig d;
  d.split_index = 1;
  d.distill_reg = false;
  FeatureGradProbe probe;
  distill_step(request(p, d), nullptr, &probe);
  const ForwardResult sf = forward(p.student, p.image);
  const ForwardResult tf = forward(p.teacher, p.image);
  std::vector<Tensor> feats{sf.feature(Branch::cls, 0, 1).values, sf.feature(Branch::cls, 1, 1).values};
  const double total = sf.predictions[0].locations() + sf.predictions[1].locations();
  auto loss = [&] {
    double s = 0.0;
    for (int l = 0; l < 2; ++l) {
      const Tensor logits = forward_branch_from(p.teacher.head(Branch::cls, l), feats[l], 2);
      Tensor target = tf.predictions[l].cls_logits;
      for (double& v : target.data) v = 1.0 / (1.0 + std::exp(-v));
      for (double v : qfl(logits, target, 1.0).per_location) s += v;
    }
    return s / total;
  };
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (int k = 0; k < 20; ++k) {
    const int l = k % 2;
    const std::size_t idx = (k * 7) % feats[l].data.size();
    coords.push_back(&feats[l].data[idx]);
    analytic.push_back(probe.grads[0][l][1].data[idx]);
  }
  double norm = 0.0;
  for (double v : analytic) norm += v * v;
  CHECK(std::sqrt(norm) > 1e-8);
  CHECK(rel_error(analytic, central_diff(loss, coords.data(), coords.size())) < 1e-4);
}

TEST_CASE("full cross-head objective gradients match finite differences") {
  struct Case {
    Strategy s;
    int i;
    ClsKdLoss cls;
    RegKdLoss reg;
    bool feat;
  };
  const Case cases[] = {{Strategy::crosskd_a, 0, ClsKdLoss::qfl, RegKdLoss::ld_kl, false},
                        {Strategy::crosskd_a, 1, ClsKdLoss::bce, RegKdLoss::giou, true},
                        {Strategy::crosskd_a, 2, ClsKdLoss::qfl, RegKdLoss::ld_kl, true},
                        {Strategy::reverse_b, 1, ClsKdLoss::qfl, RegKdLoss::ld_kl, false},
                        {Strategy::self_student_c, 1, ClsKdLoss::qfl, RegKdLoss::ld_kl, false},
                        {Strategy::self_teacher_d, 2, ClsKdLoss::bce, RegKdLoss::ld_kl, false},
                        {Strategy::pred_mimic, 0, ClsKdLoss::qfl, RegKdLoss::giou, false}};
  for (const Case& c : cases) {
    CAPTURE(to_string(c.s));
    CAPTURE(c.i);
    Pair p = make_pair(3, 21, 22);
    DistillConfig d;
    d.strategy = c.s;
    d.split_index = c.i;
    d.cls_loss = c.cls;
    d.reg_loss = c.reg;
    d.w_cls_kd = 1.3;
    d.w_reg_kd = 0.7;
    if (c.feat) {
      d.w_feat = 0.5;
      d.feat_neck = true;
      d.feat_head = true;
    }
    StepRequest req = request(p, d, true);
    DetectorParams g = p.student.params().zeros_like();
    distill_step(req, &g);
    std::function<double()> f = [&] { return distill_step(req, nullptr).output.total_loss; };
    // Strategies whose target is the student's own prediction treat it as a
    // constant, so the reference objective freezes it at the base point.
    const bool student_target = c.s == Strategy::reverse_b || c.s == Strategy::self_student_c;
    const std::vector<PredictionMap> frozen_target = forward(p.student, p.image).predictions;
    const ForwardResult tf = forward(p.teacher, p.image);
    if (student_target) {
      REQUIRE(c.cls == ClsKdLoss::qfl);
      REQUIRE(c.reg == RegKdLoss::ld_kl);
      f = [&] {
        const ForwardResult sf = forward(p.student, p.image);
        const DetectionLoss det = detection_loss(sf.predictions, p.assignment, DetectionLossConfig{}, false);
        const auto src = strategy_predictions(p.teacher, p.student, tf, sf, d).source;
        double cls = 0.0, reg = 0.0, count = 0.0;
        for (int l = 0; l < 2; ++l) {
          Tensor target = frozen_target[l].cls_logits;
          for (double& v : target.data) v = 1.0 / (1.0 + std::exp(-v));
          for (double v : qfl(src[l].cls_logits, target, d.gamma).per_location) cls += v;
          for (double v : ld_kl(src[l].reg_output, frozen_target[l].reg_output, d.tau).per_location) reg += v;
          count += src[l].locations();
        }
        return det.cls + det.reg + d.w_cls_kd * cls / count + d.w_reg_kd * reg / count;
      };
    }

    std::vector<ConvLayer*> pl, gl;
    p.student.params().for_each_layer([&](const std::string&, ParamGroup, ConvLayer& l) { pl.push_back(&l); });
    g.for_each_layer([&](const std::string&, ParamGroup, ConvLayer& l) { gl.push_back(&l); });
    std::mt19937_64 rng(99);
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (int k = 0; k < 20; ++k) {
      const std::size_t layer = rng() % pl.size();
      const std::size_t w = rng() % pl[layer]->weight.size();
      coords.push_back(&pl[layer]->weight[w]);
      analytic.push_back(gl[layer]->weight[w]);
    }
    CHECK(rel_error(analytic, central_diff(f, coords.data(), coords.size())) < 1e-4);
  }
}

TEST_CASE("head width mismatch is a wiring error naming the junction") {
  Pair p = make_pair(2, 1, 2, 8);
  for (int i : {0, 1}) {
    DistillConfig d;
    d.split_index = i;
    try {
      distill_step(request(p, d), nullptr);
      FAIL("expected wiring error");
    } catch (const WiringError& e) {
      CHECK(std::string(e.what()).find("C_" + std::to_string(i + 1)) != std::string::npos);
    }
  }
  DistillConfig mimic;
  mimic.strategy = Strategy::pred_mimic;
  CHECK_NOTHROW(distill_step(request(p, mimic), nullptr));
}
