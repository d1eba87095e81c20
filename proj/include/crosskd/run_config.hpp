// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crosskd/assigners.hpp"
#include "crosskd/dataset.hpp"
#include "crosskd/detector.hpp"
#include "crosskd/engine.hpp"
#include "crosskd/metrics.hpp"
#include "crosskd/training.hpp"

namespace crosskd {

/// Everything needed to build and train one detector.
struct ModelRole {
  ModelConfig model;
  AssignerConfig assigner;
  OptimizerConfig optimizer;
  std::uint64_t init_seed = 1;
  std::string checkpoint;  // optional pre-trained weights
  friend bool operator==(const ModelRole&, const ModelRole&) = default;
};

/// One row of a sweep: either the plain student or a distillation setting.
struct Variant {
  std::string name;
  bool distill = true;
  Strategy strategy = Strategy::crosskd_a;
  int split_index = 3;
  friend bool operator==(const Variant&, const Variant&) = default;
};

struct ConflictTeacher {
  std::string name;
  AssignerConfig assigner;
  std::string checkpoint;
  friend bool operator==(const ConflictTeacher&, const ConflictTeacher&) = default;
};

struct Recipe {
  std::string name;
  std::vector<Variant> variants;  // empty: baseline plus every split index
  std::vector<double> thresholds;  // empty: 0, 0.05, ..., 1
  std::vector<ConflictTeacher> conflict_teachers;
  std::vector<std::string> checks;
  int conflict_images = 64;
  int heatmap_images = 0;
  friend bool operator==(const Recipe&, const Recipe&) = default;
};

struct RunConfig {
  SyntheticDatasetSpec dataset;
  ModelRole teacher;
  ModelRole student;
  DistillConfig distill;
  DetectionLossConfig detection;
  EvalConfig eval;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "out";
  int distance_slice = 64;
  std::vector<int> checkpoint_epochs;
  Recipe recipe;

  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses and validates a JSON run configuration. Unknown keys, wrong types
/// and missing required sections raise ConfigError naming the offending path.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical JSON with every field spelled out.
std::string run_config_to_json(const RunConfig& config);

/// FNV-1a of the canonical JSON, excluding seeds and output_dir.
std::string config_hash(const RunConfig& config);

/// Variants a sweep runs: recipe variants, or baseline plus split 0..n.
std::vector<Variant> sweep_variants(const RunConfig& config);

}  // namespace crosskd
