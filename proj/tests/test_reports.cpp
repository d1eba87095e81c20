// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "crosskd/csv.hpp"
#include "crosskd/reports.hpp"

using namespace crosskd;

namespace {

const char* const kMinimal = R"({"dataset": {}, "teacher": {}, "student": {}})";

std::string with_field(const std::string& section, const std::string& body) {
  return R"({"dataset": {}, "teacher": {}, "student": {}, ")" + section + R"(": )" + body + "}";
}

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text).validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("crosskd_reports_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

SweepRow row(const std::string& name, bool distill, Strategy s, int split, double ap, double cls_gt, double pt) {
  SweepRow r;
  r.variant = {name, distill, s, split};
  r.mean_ap = ap;
  TrainLog log;
  EpochRecord e;
  e.l1_cls_gt = cls_gt;
  e.l1_pred_teacher = pt;
  log.records.push_back(e);
  r.logs.push_back(log);
  r.final_ap.push_back(ap);
  r.seeds.push_back(1);
  return r;
}

}  // namespace

TEST_CASE("minimal config parses to defaults") {
  const RunConfig c = parse_run_config(kMinimal);
  CHECK_NOTHROW(c.validate());
  CHECK(c.dataset == SyntheticDatasetSpec{});
  CHECK(c.student.model == ModelConfig{});
  CHECK(c.seeds == std::vector<std::uint64_t>{1});
}

TEST_CASE("config strictness") {
  CHECK(error_of(R"({"dataset": {}, "teacher": {}})").find("student") != std::string::npos);
  CHECK(error_of(with_field("distill", R"({"split_idx": 2})")).find("distill.split_idx") != std::string::npos);
  CHECK(error_of(with_field("bogus", "1")).find("bogus") != std::string::npos);
  CHECK(error_of(with_field("distill", R"({"split_index": "two"})")).find("distill.split_index") != std::string::npos);
  CHECK(error_of(with_field("distill", R"({"strategy": "nope"})")).find("nope") != std::string::npos);
  CHECK(error_of(with_field("distill", R"({"split_index": 9})")).find("split_index") != std::string::npos);
  CHECK(error_of(with_field("distill", R"({"branches": ["cls", "box"]})")).find("box") != std::string::npos);
  CHECK(error_of(with_field("recipe", R"({"checks": ["unknown_check"]})")).find("unknown_check") != std::string::npos);
  CHECK(error_of(with_field("seeds", "[]")).find("seeds") != std::string::npos);
  CHECK(error_of("{not json").find("JSON") != std::string::npos);
  CHECK(error_of(R"({"dataset": {"image_size": 60}, "teacher": {}, "student": {}})").find("divisible") !=
        std::string::npos);
}

TEST_CASE("config round trip and hash") {
  const std::string text = R"({
    "dataset": {"image_size": 32, "train_size": 12, "val_size": 6, "seed": 11},
    "teacher": {"model": {"backbone_channels": [4, 8, 8, 8], "head": {"n_layers": 3, "hidden_channels": 8}},
                "assigner": {"kind": "iou", "pos_thr": 0.45}, "optimizer": {"epochs": 4}},
    "student": {"model": {"backbone_channels": [2, 4, 8, 8], "head": {"n_layers": 3, "hidden_channels": 8}},
                "assigner": {"kind": "center"}, "init_seed": 5},
    "distill": {"split_index": 1, "branches": ["cls"], "w_feat": 0.5, "feat_positions": ["neck"]},
    "seeds": [1, 2],
    "recipe": {"name": "r", "variants": [{"name": "base", "distill": false},
                                         {"name": "x1", "strategy": "crosskd", "split_index": 1}],
               "checks": ["crosskd_ge_baseline"]}
  })";
  const RunConfig c = parse_run_config(text);
  CHECK(c.teacher.assigner.kind == AssignerKind::iou);
  CHECK(c.teacher.assigner.pos_thr == 0.45);
  CHECK(c.distill.distill_cls);
  CHECK_FALSE(c.distill.distill_reg);
  CHECK(c.distill.feat_neck);
  CHECK(c.recipe.variants.size() == 2);
  CHECK_FALSE(c.recipe.variants[0].distill);

  const RunConfig back = parse_run_config(run_config_to_json(c));
  CHECK(back == c);
  CHECK(run_config_to_json(back) == run_config_to_json(c));

  const std::string h = config_hash(c);
  CHECK(h.size() == 16);
  RunConfig other = c;
  other.seeds = {7};
  other.output_dir = "elsewhere";
  CHECK(config_hash(other) == h);
  other.distill.tau = 2.0;
  CHECK(config_hash(other) != h);
}

TEST_CASE("default sweep covers the baseline and every split") {
  RunConfig c = parse_run_config(kMinimal);
  const auto v = sweep_variants(c);
  REQUIRE(v.size() == 6);
  CHECK_FALSE(v[0].distill);
  for (int i = 0; i <= 4; ++i) CHECK(v[i + 1].split_index == i);
  CHECK(run_key(v[1], 3) != run_key(v[2], 3));
  CHECK(run_key(v[1], 3) != run_key(v[1], 4));
}

TEST_CASE("sweep checks") {
  std::vector<SweepRow> rows{row("baseline", false, Strategy::crosskd_a, 0, 0.30, 0.4, 0.2),
                             row("x1", true, Strategy::crosskd_a, 1, 0.35, 0.30, 0.20),
                             row("x4", true, Strategy::crosskd_a, 4, 0.31, 0.38, 0.10),
                             row("mimic", true, Strategy::pred_mimic, 3, 0.32, 0.36, 0.12)};
  auto res = evaluate_sweep_checks(
      {"splits_ge_baseline", "crosskd_ge_baseline", "mimic_le_crosskd", "fig6_distance_ordering"}, rows, 4);
  REQUIRE(res.size() == 4);
  for (const auto& r : res) CHECK_MESSAGE(r.pass, r.name << ": " << r.detail);

  rows[2].mean_ap = 0.29;
  res = evaluate_sweep_checks({"splits_ge_baseline", "crosskd_ge_baseline"}, rows, 4);
  CHECK_FALSE(res[0].pass);
  CHECK(res[1].pass);  // split 4 is prediction mimicking, not cross-head

  rows[1].logs[0].records[0].l1_cls_gt = 0.5;
  CHECK_FALSE(evaluate_sweep_checks({"fig6_distance_ordering"}, rows, 4)[0].pass);
  CHECK_FALSE(evaluate_sweep_checks({"mimic_le_crosskd"}, {rows[0]}, 4)[0].pass);
}

TEST_CASE("line plots carry the source values unchanged") {
  Series a{"run/seed1", {1, 2, 3}, {0.1, 1.0 / 3.0, std::nan("")}};
  Series b{"other & more", {1, 2}, {2.5e-7, 0.25}};
  const std::string svg = svg_line_plot("t", "epoch", "y", {a, b});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("other &amp; more") != std::string::npos);
  std::regex point("data-x=\"([^\"]+)\" data-y=\"([^\"]+)\"");
  std::vector<std::pair<double, double>> got;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), point); it != std::sregex_iterator(); ++it)
    got.emplace_back(csv::to_double((*it)[1]), csv::to_double((*it)[2]));
  const std::vector<std::pair<double, double>> want{{1, 0.1}, {2, 1.0 / 3.0}, {1, 2.5e-7}, {2, 0.25}};
  CHECK(got == want);
}

TEST_CASE("heatmap svg carries every cell value") {
  Tensor m(1, 2, 3);
  m.data = {0.0, 0.5, 1.0 / 7.0, 2.0, 3.5, 1e-9};
  const std::string svg = svg_heatmap("h", m);
  std::regex cell("data-row=\"(\\d+)\" data-col=\"(\\d+)\" data-value=\"([^\"]+)\"");
  int count = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), cell); it != std::sregex_iterator(); ++it, ++count) {
    const int r = std::stoi((*it)[1]), c = std::stoi((*it)[2]);
    CHECK(csv::to_double((*it)[3]) == m.at(0, r, c));
  }
  CHECK(count == 6);
}

TEST_CASE("plot command") {
  const auto dir = scratch_dir("plot");
  TrainLog log;
  log.config_hash = "feedbeefcafe0000";
  log.seed = 2;
  log.records.push_back({1, 0.5, 1, 1, 0, 0, 0, 0.1, 0.2, 3});
  log.records.push_back({2, 0.625, 0.5, 0.5, 0, 0, 0, 0.1, 0.15, 2});
  std::ofstream(dir / "log.csv") << train_log_to_csv(log);
  TrainLog empty = log;
  empty.records.clear();
  std::ofstream(dir / "empty.csv") << train_log_to_csv(empty);

  CommandOptions opts;
  opts.out_dir = dir / "out";
  opts.inputs = {dir / "log.csv"};
  std::ostringstream out;
  CHECK(cmd_plot(opts, out) == 0);
  std::ifstream f(dir / "out" / "plot_ap.svg");
  std::stringstream ss;
  ss << f.rdbuf();
  CHECK(ss.str().find("data-y=\"0.625\"") != std::string::npos);
  CHECK(ss.str().find("feedbeef/seed2") != std::string::npos);

  opts.inputs = {dir / "empty.csv"};
  try {
    cmd_plot(opts, out);
    FAIL("expected an empty-figure error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("empty figure") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == 1);
  CHECK(exit_code_for(DivergenceError("kd_cls", "x")) == 2);
  CHECK(exit_code_for(WiringError("x")) == 3);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("shipped recipes are valid") {
  const std::filesystem::path dir = std::filesystem::path(CROSSKD_SOURCE_DIR) / "recipes";
  int count = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    CAPTURE(e.path().string());
    CHECK_NOTHROW(load_run_config(e.path()));
    ++count;
  }
  CHECK(count >= 4);
}
