// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crosskd/box.hpp"
#include "crosskd/conv.hpp"
#include "crosskd/tensor.hpp"

namespace crosskd {

enum class RegMode { box_offsets, distribution };
enum class Branch : int { cls = 0, reg = 1 };
inline constexpr std::array<Branch, 2> kBranches{Branch::cls, Branch::reg};

std::string to_string(RegMode m);
RegMode reg_mode_from_string(const std::string& s);
std::string to_string(Branch b);

/// Layer layout of one detection head. `n_layers` counts every conv of a
/// branch including the final predictor, so a head has n_layers - 1 hidden
/// layers C_1..C_{n-1} followed by the predictor C_n.
struct HeadSpec {
  int n_layers = 4;
  int hidden_channels = 32;
  int num_classes = 3;
  RegMode reg_mode = RegMode::distribution;
  int bin_count = 8;  // m, only meaningful in distribution mode
  bool shared_across_levels = true;

  int reg_channels() const {
    return reg_mode == RegMode::box_offsets ? 4 : 4 * (bin_count + 1);
  }
  int branch_out_channels(Branch b) const {
    return b == Branch::cls ? num_classes : reg_channels();
  }
  void validate() const;
  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

/// Backbone of stride-2 3x3 blocks; the last two blocks feed two pyramid
/// levels through per-level 1x1 neck projections.
struct ModelConfig {
  int in_channels = 1;
  std::vector<int> backbone_channels{8, 16, 32, 32};
  HeadSpec head;

  int num_levels() const { return 2; }
  std::vector<int> strides() const;
  int largest_stride() const { return strides().back(); }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct FeatureMap {
  Tensor values;
  int stride = 1;
  int level_id = 0;
};

struct PredictionMap {
  Tensor cls_logits;
  Tensor reg_output;
  int stride = 1;
  int level_id = 0;

  int height() const { return cls_logits.height; }
  int width() const { return cls_logits.width; }
  int locations() const { return cls_logits.plane(); }
};

/// Anchor-free point grid: cell (r, c) at stride s is centred at
/// ((c + 0.5) s, (r + 0.5) s).
struct PointGrid {
  int stride = 1;
  int rows = 0;
  int cols = 0;

  double center_x(int c) const { return (c + 0.5) * stride; }
  double center_y(int r) const { return (r + 0.5) * stride; }
  int locations() const { return rows * cols; }
};

PointGrid grid_for(const PredictionMap& pred);
std::vector<PointGrid> grids_for(const ModelConfig& config, int image_h, int image_w);

enum class ParamGroup : int { backbone = 0, neck = 1, cls_head = 2, reg_head = 3 };
inline constexpr int kParamGroups = 4;

/// Every trainable tensor of a detector. Also used, zero-initialised, as the
/// gradient accumulator for the same model.
struct DetectorParams {
  std::vector<ConvLayer> backbone;
  std::vector<ConvLayer> neck;                     // one per level
  std::vector<std::vector<ConvLayer>> cls_heads;   // one per level, or one if shared
  std::vector<std::vector<ConvLayer>> reg_heads;

  DetectorParams zeros_like() const;
  std::size_t param_count() const;

  std::vector<std::vector<ConvLayer>>& heads(Branch b) {
    return b == Branch::cls ? cls_heads : reg_heads;
  }
  const std::vector<std::vector<ConvLayer>>& heads(Branch b) const {
    return b == Branch::cls ? cls_heads : reg_heads;
  }

  /// Visits (key, group, layer) in a fixed order. Keys follow the
  /// "branch/layer_index/" prefix used by checkpoints.
  template <typename Fn>
  void for_each_layer(Fn&& fn);
  template <typename Fn>
  void for_each_layer(Fn&& fn) const;

  friend bool operator==(const DetectorParams&, const DetectorParams&) = default;
};

class DetectorModel {
 public:
  DetectorModel() = default;
  /// Builds a model with seeded random initialisation.
  static DetectorModel create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const HeadSpec& head_spec() const { return config_.head; }

  DetectorParams& params() { return params_; }
  const DetectorParams& params() const { return params_; }

  /// Layer sequence C_1..C_n of a branch at a pyramid level. Shared heads
  /// return the same storage for every level.
  std::span<const ConvLayer> head(Branch b, int level) const;
  std::vector<ConvLayer>& head_mut(Branch b, int level);

  bool frozen(ParamGroup g) const { return frozen_[static_cast<int>(g)]; }
  void set_frozen(ParamGroup g, bool f) { frozen_[static_cast<int>(g)] = f; }
  bool fully_frozen() const;

  friend bool operator==(const DetectorModel&, const DetectorModel&) = default;

 private:
  friend DetectorModel make_model_from_params(ModelConfig, DetectorParams);
  ModelConfig config_;
  DetectorParams params_;
  std::array<bool, kParamGroups> frozen_{};
};

/// Wraps loaded parameters; validates their shapes against the config.
DetectorModel make_model_from_params(ModelConfig config, DetectorParams params);

/// Inputs of each executed head layer. inputs[k] feeds layer start_layer + k,
/// so for a full pass (start_layer = 1) inputs are f_0..f_{n-1}.
struct BranchTrace {
  int start_layer = 1;
  std::vector<Tensor> inputs;
  Tensor output;
};

struct ForwardResult {
  std::vector<PredictionMap> predictions;
  /// intermediates[branch][level] holds f_0..f_{n-1} for that branch.
  std::array<std::vector<std::vector<FeatureMap>>, 2> intermediates;
  Tensor image;
  std::vector<Tensor> backbone_outputs;

  const FeatureMap& feature(Branch b, int level, int index) const {
    return intermediates[static_cast<int>(b)][level][index];
  }
};

ForwardResult forward(const DetectorModel& model, const Tensor& image);

/// Runs layers C_j..C_n of a branch on `features` (which must be f_{j-1}).
Tensor forward_branch_from(std::span<const ConvLayer> layers, const Tensor& features,
                           int start_layer, BranchTrace* trace = nullptr);

/// Runs both branches of `model`'s head at `level` starting at layer j.
PredictionMap forward_head_from(const DetectorModel& model, int level,
                                const FeatureMap& cls_features,
                                const FeatureMap& reg_features, int start_layer);

/// Backpropagates through layers start_layer..n of a branch. `inputs[k]`
/// must be the tensor that fed layer start_layer + k during the forward pass.
/// `injected` is either empty or has n entries, the k-th adding a gradient
/// at f_k (empty tensors mean none). Layer parameter gradients accumulate into
/// `layer_grads` when given (indexed 0..n-1 for C_1..C_n). When
/// `feature_grads` is given (n entries) it receives the total gradient at each
/// f_k that was reached. Returns the gradient at f_{start_layer-1}.
Tensor backward_branch(std::span<const ConvLayer> layers, int start_layer,
                       std::span<const Tensor* const> inputs, const Tensor& grad_output,
                       std::span<const Tensor> injected, std::vector<ConvLayer>* layer_grads,
                       std::vector<Tensor>* feature_grads = nullptr);

/// Convenience overload over a recorded trace.
Tensor backward_branch(std::span<const ConvLayer> layers, const BranchTrace& trace,
                       const Tensor& grad_output, std::vector<ConvLayer>* layer_grads);

/// Upstream gradients into a model's forward pass.
struct OutputGrads {
  std::vector<Tensor> cls;  // per level; empty tensor = none
  std::vector<Tensor> reg;
  /// features[branch][level][k]: extra gradient at f_k (empty = none).
  std::array<std::vector<std::vector<Tensor>>, 2> features;

  static OutputGrads for_model(const ModelConfig& config);
  std::vector<Tensor>& branch(Branch b) { return b == Branch::cls ? cls : reg; }
};

/// Optional capture of the total gradient reaching each head feature f_k.
struct FeatureGradProbe {
  /// grads[branch][level][k]
  std::array<std::vector<std::vector<Tensor>>, 2> grads;
};

/// Full reverse pass; accumulates parameter gradients into `grads`.
void backward(const DetectorModel& model, const ForwardResult& fwd, const OutputGrads& upstream,
              DetectorParams& grads, FeatureGradProbe* probe = nullptr);

double softplus(double x) noexcept;
double sigmoid(double x) noexcept;

/// Per-location boxes, row-major over the level's grid.
std::vector<Box> decode_boxes(const PredictionMap& pred, const PointGrid& grid);

/// Decodes a single location; exposed for losses that work per location.
Box decode_location(const Tensor& reg_output, const PointGrid& grid, int row, int col);

/// Expected edge distance (in bins) of a softmax over `logits`.
double distribution_expectation(std::span<const double> logits);

/// Chain rule through decode_location: given dL/d(x1, y1, x2, y2) at
/// (row, col), accumulates dL/d(reg_output) into `grad_reg`.
void decode_location_backward(const Tensor& reg_output, const PointGrid& grid, int row,
                              int col, const std::array<double, 4>& grad_box, Tensor& grad_reg);

// ---- template implementation ----

template <typename Fn>
void DetectorParams::for_each_layer(Fn&& fn) {
  for (std::size_t i = 0; i < backbone.size(); ++i)
    fn("backbone/" + std::to_string(i), ParamGroup::backbone, backbone[i]);
  for (std::size_t i = 0; i < neck.size(); ++i)
    fn("neck/" + std::to_string(i), ParamGroup::neck, neck[i]);
  for (Branch b : kBranches) {
    auto& hs = heads(b);
    const ParamGroup g = b == Branch::cls ? ParamGroup::cls_head : ParamGroup::reg_head;
    for (std::size_t lvl = 0; lvl < hs.size(); ++lvl) {
      const std::string name =
          hs.size() == 1 ? to_string(b) : to_string(b) + "." + std::to_string(lvl);
      for (std::size_t k = 0; k < hs[lvl].size(); ++k)
        fn(name + "/" + std::to_string(k + 1), g, hs[lvl][k]);
    }
  }
}

template <typename Fn>
void DetectorParams::for_each_layer(Fn&& fn) const {
  const_cast<DetectorParams*>(this)->for_each_layer(
      [&](const std::string& key, ParamGroup g, ConvLayer& l) {
        fn(key, g, static_cast<const ConvLayer&>(l));
      });
}

}  // namespace crosskd
