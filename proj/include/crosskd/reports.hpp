// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crosskd/run_config.hpp"

namespace crosskd {

// ---- figures ----

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line chart; every point carries its exact source values in data-x/data-y
/// attributes. Non-finite points are skipped.
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series);

/// Grey-scale grid of a 1 x H x W map; cells carry data-value attributes.
std::string svg_heatmap(const std::string& title, const Tensor& map);

// ---- experiments ----

Dataset build_dataset(const RunConfig& config);

/// Loads `checkpoint` when non-empty, otherwise trains the configured teacher
/// with `assigner`. The returned model is frozen.
DetectorModel obtain_teacher(const RunConfig& config, const Dataset& data, const AssignerConfig& assigner,
                             const std::string& checkpoint, TrainLog* log = nullptr);

TrainOptions student_options(const RunConfig& config, const Variant& variant, std::uint64_t seed);

struct RunOutcome {
  TrainLog log;
  DetectorModel model;
};

/// Trains one student from its seeded initialisation.
RunOutcome run_student(const RunConfig& config, const Dataset& data, const DetectorModel& teacher,
                       const Variant& variant, std::uint64_t seed);

struct SweepRow {
  Variant variant;
  std::vector<std::uint64_t> seeds;
  std::vector<TrainLog> logs;
  std::vector<double> final_ap;
  double mean_ap = 0.0;

  double mean_final(double EpochRecord::*field) const;
};

/// Identifies runs that are equivalent across recipes sharing a setup.
std::string run_key(const Variant& v, std::uint64_t seed);
using RunCache = std::map<std::string, TrainLog>;

/// Runs every variant for every configured seed. Runs found in `cache` are
/// reused, new ones are added to it.
std::vector<SweepRow> run_sweep(const RunConfig& config, const Dataset& data, const DetectorModel& teacher,
                                const std::vector<Variant>& variants, RunCache* cache = nullptr,
                                std::ostream* progress = nullptr);

std::string sweep_to_csv(const std::vector<SweepRow>& rows, const std::string& hash);

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Evaluates the sweep-level ordering checks named in the recipe.
std::vector<CheckResult> evaluate_sweep_checks(const std::vector<std::string>& checks,
                                               const std::vector<SweepRow>& rows, int n_layers);

// ---- commands ----

struct CommandOptions {
  std::filesystem::path config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::filesystem::path> teacher;
  std::optional<std::filesystem::path> checkpoint;
  std::vector<std::filesystem::path> inputs;
};

/// Each command writes its artifacts below the output directory and reports
/// to `out`. Errors propagate as ConfigError, ContractViolation,
/// DivergenceError or WiringError.
int cmd_train_teacher(const CommandOptions& opts, std::ostream& out);
int cmd_distill(const CommandOptions& opts, std::ostream& out);
int cmd_ablate_split(const CommandOptions& opts, std::ostream& out);
int cmd_analyze_conflict(const CommandOptions& opts, std::ostream& out);
int cmd_eval(const CommandOptions& opts, std::ostream& out);
int cmd_plot(const CommandOptions& opts, std::ostream& out);

/// Maps an exception from a command to the process exit code.
int exit_code_for(const std::exception& e);

}  // namespace crosskd
