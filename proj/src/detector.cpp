// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/detector.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace crosskd {

std::string to_string(RegMode m) {
  return m == RegMode::box_offsets ? "box_offsets" : "distribution";
}

RegMode reg_mode_from_string(const std::string& s) {
  if (s == "box_offsets") return RegMode::box_offsets;
  if (s == "distribution") return RegMode::distribution;
  throw ConfigError("unknown reg_mode '" + s + "' (expected box_offsets or distribution)");
}

std::string to_string(Branch b) { return b == Branch::cls ? "cls" : "reg"; }

void HeadSpec::validate() const {
  if (n_layers < 2) throw ConfigError("head.n_layers must be >= 2");
  if (hidden_channels < 1) throw ConfigError("head.hidden_channels must be >= 1");
  if (num_classes < 1) throw ConfigError("head.num_classes must be >= 1");
  if (reg_mode == RegMode::distribution && bin_count < 1)
    throw ConfigError("head.bin_count must be >= 1 in distribution mode");
}

std::vector<int> ModelConfig::strides() const {
  const int blocks = static_cast<int>(backbone_channels.size());
  return {1 << (blocks - 1), 1 << blocks};
}

void ModelConfig::validate() const {
  if (in_channels < 1) throw ConfigError("model.in_channels must be >= 1");
  if (backbone_channels.size() < 2)
    throw ConfigError("model.backbone_channels needs at least 2 blocks");
  for (int c : backbone_channels)
    if (c < 1) throw ConfigError("model.backbone_channels entries must be >= 1");
  head.validate();
}

PointGrid grid_for(const PredictionMap& pred) {
  return {pred.stride, pred.height(), pred.width()};
}

std::vector<PointGrid> grids_for(const ModelConfig& config, int image_h, int image_w) {
  std::vector<PointGrid> out;
  for (int s : config.strides()) out.push_back({s, image_h / s, image_w / s});
  return out;
}

DetectorParams DetectorParams::zeros_like() const {
  DetectorParams z = *this;
  z.for_each_layer([](const std::string&, ParamGroup, ConvLayer& l) { l = l.zeros_like(); });
  return z;
}

std::size_t DetectorParams::param_count() const {
  std::size_t n = 0;
  for_each_layer([&](const std::string&, ParamGroup, const ConvLayer& l) { n += l.param_count(); });
  return n;
}

namespace {

constexpr double kClsPriorBias = -4.59511985013459;  // logit of 0.01

std::vector<ConvLayer> make_branch(const HeadSpec& h, Branch b) {
  std::vector<ConvLayer> layers;
  for (int k = 0; k < h.n_layers - 1; ++k)
    layers.emplace_back(h.hidden_channels, h.hidden_channels, 3, 1, 1);
  layers.emplace_back(h.hidden_channels, h.branch_out_channels(b), 3, 1, 1);
  return layers;
}

DetectorParams make_params(const ModelConfig& c) {
  DetectorParams p;
  int in = c.in_channels;
  for (int ch : c.backbone_channels) {
    p.backbone.emplace_back(in, ch, 3, 2, 1);
    in = ch;
  }
  const int blocks = static_cast<int>(c.backbone_channels.size());
  for (int lvl = 0; lvl < c.num_levels(); ++lvl) {
    const int src = c.backbone_channels[blocks - c.num_levels() + lvl];
    p.neck.emplace_back(src, c.head.hidden_channels, 1, 1, 0);
  }
  const int copies = c.head.shared_across_levels ? 1 : c.num_levels();
  for (int i = 0; i < copies; ++i) {
    p.cls_heads.push_back(make_branch(c.head, Branch::cls));
    p.reg_heads.push_back(make_branch(c.head, Branch::reg));
  }
  return p;
}

bool same_geometry(const ConvLayer& a, const ConvLayer& b) {
  return a.in_channels == b.in_channels && a.out_channels == b.out_channels &&
         a.kernel == b.kernel && a.stride == b.stride && a.pad == b.pad &&
         a.weight.size() == b.weight.size() && a.bias.size() == b.bias.size();
}

}  // namespace

DetectorModel DetectorModel::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  DetectorModel m;
  m.config_ = config;
  m.params_ = make_params(config);
  std::mt19937_64 rng(seed);
  auto he_init = [&](ConvLayer& l) {
    const double fan_in = static_cast<double>(l.in_channels) * l.kernel * l.kernel;
    l.init_normal(rng, std::sqrt(2.0 / fan_in), 0.0);
  };
  for (auto& l : m.params_.backbone) he_init(l);
  for (auto& l : m.params_.neck) he_init(l);
  for (Branch b : kBranches) {
    for (auto& head : m.params_.heads(b)) {
      for (std::size_t k = 0; k + 1 < head.size(); ++k) he_init(head[k]);
      head.back().init_normal(rng, 0.01, b == Branch::cls ? kClsPriorBias : 0.0);
    }
  }
  return m;
}

DetectorModel make_model_from_params(ModelConfig config, DetectorParams params) {
  config.validate();
  DetectorParams expected = make_params(config);
  std::vector<const ConvLayer*> want;
  expected.for_each_layer([&](const std::string&, ParamGroup, const ConvLayer& l) { want.push_back(&l); });
  std::size_t i = 0;
  bool ok = true;
  params.for_each_layer([&](const std::string&, ParamGroup, const ConvLayer& l) {
    if (i >= want.size() || !same_geometry(l, *want[i])) ok = false;
    ++i;
  });
  if (!ok || i != want.size()) throw ConfigError("parameters do not match model configuration");
  DetectorModel m;
  m.config_ = std::move(config);
  m.params_ = std::move(params);
  return m;
}

std::span<const ConvLayer> DetectorModel::head(Branch b, int level) const {
  const auto& hs = params_.heads(b);
  return hs[hs.size() == 1 ? 0 : level];
}

std::vector<ConvLayer>& DetectorModel::head_mut(Branch b, int level) {
  auto& hs = params_.heads(b);
  return hs[hs.size() == 1 ? 0 : level];
}

bool DetectorModel::fully_frozen() const {
  return std::all_of(frozen_.begin(), frozen_.end(), [](bool f) { return f; });
}

Tensor forward_branch_from(std::span<const ConvLayer> layers, const Tensor& features,
                           int start_layer, BranchTrace* trace) {
  const int n = static_cast<int>(layers.size());
  if (start_layer < 1 || start_layer > n) {
    throw ContractViolation("forward_branch_from: start layer " + std::to_string(start_layer) +
                            " outside [1, " + std::to_string(n) + "]");
  }
  if (features.channels != layers[start_layer - 1].in_channels) {
    throw WiringError("features with " + std::to_string(features.channels) +
                      " channels cannot feed head layer C_" + std::to_string(start_layer) +
                      " expecting " + std::to_string(layers[start_layer - 1].in_channels));
  }
  if (trace != nullptr) {
    trace->start_layer = start_layer;
    trace->inputs.clear();
    trace->inputs.push_back(features);
  }
  Tensor x = features;
  for (int k = start_layer - 1; k < n; ++k) {
    x = conv_forward(layers[k], x);
    if (k + 1 < n) {
      x = relu(x);
      if (trace != nullptr) trace->inputs.push_back(x);
    }
  }
  if (trace != nullptr) trace->output = x;
  return x;
}

PredictionMap forward_head_from(const DetectorModel& model, int level,
                                const FeatureMap& cls_features, const FeatureMap& reg_features,
                                int start_layer) {
  PredictionMap p;
  p.cls_logits = forward_branch_from(model.head(Branch::cls, level), cls_features.values, start_layer);
  p.reg_output = forward_branch_from(model.head(Branch::reg, level), reg_features.values, start_layer);
  p.stride = cls_features.stride;
  p.level_id = level;
  return p;
}

ForwardResult forward(const DetectorModel& model, const Tensor& image) {
  const ModelConfig& cfg = model.config();
  if (image.channels != cfg.in_channels) {
    throw ConfigError("image has " + std::to_string(image.channels) + " channels, model expects " +
                      std::to_string(cfg.in_channels));
  }
  const int s = cfg.largest_stride();
  if (image.height < s || image.width < s || image.height % s != 0 || image.width % s != 0) {
    throw ConfigError("image size " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                      " is not divisible by the largest stride " + std::to_string(s));
  }
  ForwardResult r;
  r.image = image;
  const auto& p = model.params();
  Tensor x = image;
  for (const ConvLayer& l : p.backbone) {
    x = relu(conv_forward(l, x));
    r.backbone_outputs.push_back(x);
  }
  const int blocks = static_cast<int>(p.backbone.size());
  const auto strides = cfg.strides();
  const int n = cfg.head.n_layers;
  for (auto& per_branch : r.intermediates) per_branch.resize(cfg.num_levels());
  for (int lvl = 0; lvl < cfg.num_levels(); ++lvl) {
    const Tensor& src = r.backbone_outputs[blocks - cfg.num_levels() + lvl];
    const Tensor f0 = conv_forward(p.neck[lvl], src);
    PredictionMap pred;
    pred.stride = strides[lvl];
    pred.level_id = lvl;
    for (Branch b : kBranches) {
      BranchTrace trace;
      Tensor out = forward_branch_from(model.head(b, lvl), f0, 1, &trace);
      auto& feats = r.intermediates[static_cast<int>(b)][lvl];
      feats.reserve(n);
      for (auto& t : trace.inputs) feats.push_back({std::move(t), strides[lvl], lvl});
      (b == Branch::cls ? pred.cls_logits : pred.reg_output) = std::move(out);
    }
    r.predictions.push_back(std::move(pred));
  }
  return r;
}

Tensor backward_branch(std::span<const ConvLayer> layers, int start_layer,
                       std::span<const Tensor* const> inputs, const Tensor& grad_output,
                       std::span<const Tensor> injected, std::vector<ConvLayer>* layer_grads,
                       std::vector<Tensor>* feature_grads) {
  const int n = static_cast<int>(layers.size());
  const int first = start_layer - 1;
  if (static_cast<int>(inputs.size()) != n - first) {
    throw ContractViolation("backward_branch: trace does not match layer range");
  }
  if (!injected.empty() && static_cast<int>(injected.size()) != n) {
    throw ContractViolation("backward_branch: injected gradients must have n entries");
  }
  if (feature_grads != nullptr) feature_grads->resize(n);
  Tensor g = grad_output;
  for (int k = n - 1; k >= first; --k) {
    const Tensor& in = *inputs[k - first];
    Tensor gin;
    conv_backward(layers[k], in, g, layer_grads ? &(*layer_grads)[k] : nullptr, &gin);
    if (!injected.empty() && !injected[k].empty()) gin += injected[k];
    if (feature_grads != nullptr) (*feature_grads)[k] = gin;
    if (k == first) return gin;
    relu_backward_inplace(in, gin);
    g = std::move(gin);
  }
  return g;
}

Tensor backward_branch(std::span<const ConvLayer> layers, const BranchTrace& trace,
                       const Tensor& grad_output, std::vector<ConvLayer>* layer_grads) {
  std::vector<const Tensor*> ptrs;
  for (const Tensor& t : trace.inputs) ptrs.push_back(&t);
  return backward_branch(layers, trace.start_layer, ptrs, grad_output, {}, layer_grads);
}

OutputGrads OutputGrads::for_model(const ModelConfig& config) {
  OutputGrads g;
  g.cls.resize(config.num_levels());
  g.reg.resize(config.num_levels());
  for (auto& per_branch : g.features) {
    per_branch.assign(config.num_levels(), std::vector<Tensor>(config.head.n_layers));
  }
  return g;
}

void backward(const DetectorModel& model, const ForwardResult& fwd, const OutputGrads& upstream,
              DetectorParams& grads, FeatureGradProbe* probe) {
  const ModelConfig& cfg = model.config();
  const auto& p = model.params();
  const int blocks = static_cast<int>(p.backbone.size());
  const int levels = cfg.num_levels();
  std::vector<Tensor> backbone_grads(blocks);

  if (probe != nullptr) {
    for (auto& per_branch : probe->grads) per_branch.assign(levels, {});
  }

  for (int lvl = 0; lvl < levels; ++lvl) {
    Tensor grad_f0;
    for (Branch b : kBranches) {
      const int bi = static_cast<int>(b);
      const Tensor& out_grad_in = b == Branch::cls ? upstream.cls[lvl] : upstream.reg[lvl];
      const auto& injected = upstream.features[bi][lvl];
      const bool any_injected = std::any_of(injected.begin(), injected.end(),
                                            [](const Tensor& t) { return !t.empty(); });
      if (out_grad_in.empty() && !any_injected) continue;
      const Tensor& pred_ref = b == Branch::cls ? fwd.predictions[lvl].cls_logits
                                                : fwd.predictions[lvl].reg_output;
      Tensor out_grad = out_grad_in.empty() ? Tensor::zeros_like(pred_ref) : out_grad_in;
      const auto& feats = fwd.intermediates[bi][lvl];
      std::vector<const Tensor*> ptrs;
      for (const auto& f : feats) ptrs.push_back(&f.values);
      auto& heads = grads.heads(b);
      auto& layer_grads = heads[heads.size() == 1 ? 0 : lvl];
      Tensor g0 = backward_branch(model.head(b, lvl), 1, ptrs, out_grad, injected, &layer_grads,
                                  probe ? &probe->grads[bi][lvl] : nullptr);
      if (grad_f0.empty()) grad_f0 = std::move(g0);
      else grad_f0 += g0;
    }
    if (grad_f0.empty()) continue;
    const int src = blocks - levels + lvl;
    Tensor gsrc;
    conv_backward(p.neck[lvl], fwd.backbone_outputs[src], grad_f0, &grads.neck[lvl], &gsrc);
    if (backbone_grads[src].empty()) backbone_grads[src] = std::move(gsrc);
    else backbone_grads[src] += gsrc;
  }

  for (int k = blocks - 1; k >= 0; --k) {
    Tensor& g = backbone_grads[k];
    if (g.empty()) continue;
    relu_backward_inplace(fwd.backbone_outputs[k], g);
    const Tensor& in = k == 0 ? fwd.image : fwd.backbone_outputs[k - 1];
    Tensor gin;
    conv_backward(p.backbone[k], in, g, &grads.backbone[k], k > 0 ? &gin : nullptr);
    if (k > 0) {
      if (backbone_grads[k - 1].empty()) backbone_grads[k - 1] = std::move(gin);
      else backbone_grads[k - 1] += gin;
    }
  }
}

double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double distribution_expectation(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double e = std::exp(logits[k] - mx);
    z += e;
    acc += static_cast<double>(k) * e;
  }
  return acc / z;
}

namespace {

// Edge distances (l, t, r, b) in pixels at one location.
std::array<double, 4> edge_distances(const Tensor& reg, const PointGrid& grid, int row, int col) {
  std::array<double, 4> d{};
  if (reg.channels == 4) {
    for (int e = 0; e < 4; ++e) d[e] = softplus(reg.at(e, row, col)) * grid.stride;
  } else {
    const int bins = reg.channels / 4;
    std::vector<double> logits(bins);
    for (int e = 0; e < 4; ++e) {
      for (int k = 0; k < bins; ++k) logits[k] = reg.at(e * bins + k, row, col);
      d[e] = distribution_expectation(logits) * grid.stride;
    }
  }
  return d;
}

}  // namespace

Box decode_location(const Tensor& reg, const PointGrid& grid, int row, int col) {
  const auto d = edge_distances(reg, grid, row, col);
  const double cx = grid.center_x(col);
  const double cy = grid.center_y(row);
  return {cx - d[0], cy - d[1], cx + d[2], cy + d[3]};
}

std::vector<Box> decode_boxes(const PredictionMap& pred, const PointGrid& grid) {
  const Tensor& reg = pred.reg_output;
  if (reg.channels != 4 && (reg.channels % 4 != 0 || reg.channels < 8)) {
    throw ContractViolation("decode_boxes: reg_output has " + std::to_string(reg.channels) +
                            " channels; expected 4 or 4(m+1)");
  }
  if (reg.height != grid.rows || reg.width != grid.cols) {
    throw ContractViolation("decode_boxes: grid does not match prediction shape");
  }
  std::vector<Box> out;
  out.reserve(grid.locations());
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) out.push_back(decode_location(reg, grid, r, c));
  return out;
}

void decode_location_backward(const Tensor& reg, const PointGrid& grid, int row, int col,
                              const std::array<double, 4>& grad_box, Tensor& grad_reg) {
  // x1 = cx - l, y1 = cy - t, x2 = cx + r, y2 = cy + b
  const std::array<double, 4> gd{-grad_box[0], -grad_box[1], grad_box[2], grad_box[3]};
  if (reg.channels == 4) {
    for (int e = 0; e < 4; ++e)
      grad_reg.at(e, row, col) += gd[e] * grid.stride * sigmoid(reg.at(e, row, col));
    return;
  }
  const int bins = reg.channels / 4;
  std::vector<double> prob(bins);
  for (int e = 0; e < 4; ++e) {
    double mx = -INFINITY;
    for (int k = 0; k < bins; ++k) mx = std::max(mx, reg.at(e * bins + k, row, col));
    double z = 0.0;
    for (int k = 0; k < bins; ++k) z += prob[k] = std::exp(reg.at(e * bins + k, row, col) - mx);
    double mean = 0.0;
    for (int k = 0; k < bins; ++k) {
      prob[k] /= z;
      mean += k * prob[k];
    }
    for (int k = 0; k < bins; ++k)
      grad_reg.at(e * bins + k, row, col) += gd[e] * grid.stride * prob[k] * (k - mean);
  }
}

}  // namespace crosskd
