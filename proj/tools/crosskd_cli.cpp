// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include <CLI11.hpp>

#include "crosskd/reports.hpp"

int main(int argc, char** argv) {
  using namespace crosskd;
  CLI::App app{"crosskd: cross-head distillation experiments on synthetic detection data"};
  app.require_subcommand(1);

  CommandOptions opts;
  std::uint64_t seed = 0;
  std::string out_dir, teacher, checkpoint;
  std::vector<std::string> inputs;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", opts.config_path, "run configuration (JSON)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "override the seed list with a single seed");
    cmd->add_option("--out", out_dir, "output directory");
  };

  auto* train_teacher = app.add_subcommand("train-teacher", "train the teacher detector");
  add_common(train_teacher, true);
  auto* distill = app.add_subcommand("distill", "train students with the configured distillation");
  add_common(distill, true);
  distill->add_option("--teacher", teacher, "teacher checkpoint")->check(CLI::ExistingFile);
  auto* ablate = app.add_subcommand("ablate-split", "sweep split index / strategy variants over seeds");
  add_common(ablate, true);
  ablate->add_option("--teacher", teacher, "teacher checkpoint")->check(CLI::ExistingFile);
  auto* conflict = app.add_subcommand("analyze-conflict", "target-conflict curves of one or more teachers");
  add_common(conflict, true);
  conflict->add_option("--teacher", teacher, "teacher checkpoint")->check(CLI::ExistingFile);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  add_common(eval, true);
  eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->check(CLI::ExistingFile);
  eval->add_option("--teacher", teacher, "alias of --checkpoint")->check(CLI::ExistingFile);
  auto* plot = app.add_subcommand("plot", "render TrainLog, conflict-curve and heatmap CSVs as SVG");
  plot->add_option("inputs", inputs, "CSV files")->required();
  plot->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  auto* cmd = app.get_subcommands().front();
  if (cmd != plot && cmd->count("--seed") > 0) opts.seed = seed;
  if (!out_dir.empty()) opts.out_dir = out_dir;
  if (!teacher.empty()) opts.teacher = teacher;
  if (!checkpoint.empty()) opts.checkpoint = checkpoint;
  for (const auto& p : inputs) opts.inputs.emplace_back(p);

  try {
    if (cmd == train_teacher) return cmd_train_teacher(opts, std::cout);
    if (cmd == distill) return cmd_distill(opts, std::cout);
    if (cmd == ablate) return cmd_ablate_split(opts, std::cout);
    if (cmd == conflict) return cmd_analyze_conflict(opts, std::cout);
    if (cmd == eval) return cmd_eval(opts, std::cout);
    return cmd_plot(opts, std::cout);
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged in component '" << e.component() << "': " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const WiringError& e) {
    std::cerr << "wiring error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}
