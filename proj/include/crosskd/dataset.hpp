// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "crosskd/assigners.hpp"
#include "crosskd/tensor.hpp"

namespace crosskd {

/// Shape classes drawn by the generator; the value is the class id.
enum class ShapeKind : int { circle = 0, square = 1, triangle = 2 };

struct SyntheticDatasetSpec {
  int image_size = 64;
  int num_classes = 3;
  int objects_min = 1;
  int objects_max = 3;
  double size_min = 12.0;
  double size_max = 28.0;
  double noise = 0.05;
  double max_overlap = 0.3;  // IoU limit between objects of one image
  std::uint64_t seed = 7;
  int train_size = 200;
  int val_size = 64;

  void validate() const;
  friend bool operator==(const SyntheticDatasetSpec&, const SyntheticDatasetSpec&) = default;
};

enum class Split { train, val };

struct Sample {
  Tensor image;  // 1 x size x size
  GroundTruth gt;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

/// Deterministic in (spec, split, index); throws ContractViolation when
/// index is outside the split.
Sample generate_sample(const SyntheticDatasetSpec& spec, Split split, int index);
Dataset generate_dataset(const SyntheticDatasetSpec& spec);

/// Composites one anti-aliased shape filling `box` over `image` (channel 0)
/// with the given intensity. The shape touches all four box edges.
void render_shape(Tensor& image, ShapeKind kind, const Box& box, double intensity);

/// mt19937_64 with explicit conversions, so draws do not depend on the
/// standard library's distribution implementations.
class SampleRng {
 public:
  explicit SampleRng(std::uint64_t seed) : engine_(seed) {}
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi);  // inclusive
  double normal();
  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// Mixes seed material into a single 64-bit seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace crosskd
