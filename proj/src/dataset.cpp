// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace crosskd {

namespace {

constexpr int kSupersample = 4;

bool inside(ShapeKind kind, const Box& b, double x, double y) {
  if (x < b.x1 || x > b.x2 || y < b.y1 || y > b.y2) return false;
  switch (kind) {
    case ShapeKind::square:
      return true;
    case ShapeKind::circle: {
      const double rx = 0.5 * b.width();
      const double ry = 0.5 * b.height();
      const double dx = (x - b.center_x()) / rx;
      const double dy = (y - b.center_y()) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeKind::triangle: {
      const double frac = (y - b.y1) / b.height();
      return std::abs(x - b.center_x()) <= 0.5 * b.width() * frac;
    }
  }
  return false;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double SampleRng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

int SampleRng::integer(int lo, int hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(engine_() % span);
}

double SampleRng::normal() {
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void SyntheticDatasetSpec::validate() const {
  if (image_size < 8) throw ConfigError("dataset.image_size must be >= 8");
  if (num_classes < 1 || num_classes > 3) throw ConfigError("dataset.num_classes must lie in [1, 3]");
  if (objects_min < 0 || objects_max < objects_min)
    throw ConfigError("dataset.objects_min/objects_max must satisfy 0 <= min <= max");
  if (!(size_min >= 2.0) || size_max < size_min || size_max > image_size - 2)
    throw ConfigError("dataset.size_min/size_max must satisfy 2 <= min <= max <= image_size - 2");
  if (!(noise >= 0.0)) throw ConfigError("dataset.noise must be >= 0");
  if (!(max_overlap >= 0.0 && max_overlap <= 1.0)) throw ConfigError("dataset.max_overlap must lie in [0, 1]");
  if (train_size < 0 || val_size < 0) throw ConfigError("dataset split sizes must be >= 0");
}

void render_shape(Tensor& image, ShapeKind kind, const Box& box, double intensity) {
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
  const int x1 = std::min(image.width, static_cast<int>(std::ceil(box.x2)));
  const int y1 = std::min(image.height, static_cast<int>(std::ceil(box.y2)));
  constexpr double kStep = 1.0 / kSupersample;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          hits += inside(kind, box, x + (sx + 0.5) * kStep, y + (sy + 0.5) * kStep);
        }
      }
      if (hits == 0) continue;
      const double cover = static_cast<double>(hits) / (kSupersample * kSupersample);
      double& v = image.at(0, y, x);
      v = v * (1.0 - cover) + intensity * cover;
    }
  }
}

Sample generate_sample(const SyntheticDatasetSpec& spec, Split split, int index) {
  const int limit = split == Split::train ? spec.train_size : spec.val_size;
  if (index < 0 || index >= limit) {
    throw ContractViolation("generate_sample: index " + std::to_string(index) + " outside split of size " +
                            std::to_string(limit));
  }
  SampleRng rng(mix_seed(mix_seed(spec.seed, split == Split::train ? 1 : 2), static_cast<std::uint64_t>(index)));
  Sample s;
  s.image = Tensor(1, spec.image_size, spec.image_size);
  const int count = rng.integer(spec.objects_min, spec.objects_max);
  constexpr int kTries = 50;
  for (int k = 0; k < count; ++k) {
    for (int attempt = 0; attempt < kTries; ++attempt) {
      const double side = rng.uniform(spec.size_min, spec.size_max);
      const double x = rng.uniform(1.0, spec.image_size - 1.0 - side);
      const double y = rng.uniform(1.0, spec.image_size - 1.0 - side);
      const int cls = rng.integer(0, spec.num_classes - 1);
      const double intensity = rng.uniform(0.5, 1.0);
      const Box box{x, y, x + side, y + side};
      const bool clash = std::any_of(s.gt.instances.begin(), s.gt.instances.end(),
                                     [&](const Instance& o) { return iou(o.box, box) > spec.max_overlap; });
      if (clash) continue;
      render_shape(s.image, static_cast<ShapeKind>(cls), box, intensity);
      s.gt.instances.push_back({box, cls});
      break;
    }
  }
  for (double& v : s.image.data) v += spec.noise * rng.normal();
  return s;
}

Dataset generate_dataset(const SyntheticDatasetSpec& spec) {
  spec.validate();
  Dataset d;
  for (int i = 0; i < spec.train_size; ++i) d.train.push_back(generate_sample(spec, Split::train, i));
  for (int i = 0; i < spec.val_size; ++i) d.val.push_back(generate_sample(spec, Split::val, i));
  return d;
}

}  // namespace crosskd
