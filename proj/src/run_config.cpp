// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "crosskd/checkpoint.hpp"

namespace crosskd {

namespace {

using json = nlohmann::json;

const std::set<std::string> kKnownChecks{"splits_ge_baseline", "crosskd_ge_baseline", "mimic_le_crosskd",
                                         "fig6_distance_ordering", "cross_assigner_ordering",
                                         "conflict_ordering_at_half"};

// Strict view over one JSON object: every key must be consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(display() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  Section sub(const std::string& key) {
    used_.insert(key);
    return Section(j_.at(key), join(key));
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void opt(const std::string& key, T& dst) {
    if (!has(key)) return;
    used_.insert(key);
    dst = convert<T>(j_.at(key), join(key));
  }

  void require(const std::string& key) const {
    if (!has(key)) throw ConfigError("missing required field '" + join(key) + "'");
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown field '" + join(key) + "'");
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("'" + where + "' must be a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) throw ConfigError("'" + where + "' must be an integer");
      return v.get<int>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ConfigError("'" + where + "' must be a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError("'" + where + "' must be a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("'" + where + "' must be a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) throw ConfigError("'" + where + "' must be an array");
      T out;
      for (std::size_t k = 0; k < v.size(); ++k) {
        out.push_back(convert<typename T::value_type>(v[k], where + "[" + std::to_string(k) + "]"));
      }
      return out;
    }
  }

 private:
  std::string display() const { return path_.empty() ? "configuration" : "'" + path_ + "'"; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename E, typename Parse>
void opt_enum(Section& s, const std::string& key, E& dst, Parse parse) {
  std::string text;
  if (!s.has(key)) return;
  s.opt(key, text);
  try {
    dst = parse(text);
  } catch (const ConfigError& e) {
    throw ConfigError("'" + s.join(key) + "': " + e.what());
  }
}

ModelConfig read_model(Section s) {
  ModelConfig m;
  s.opt("in_channels", m.in_channels);
  s.opt("backbone_channels", m.backbone_channels);
  if (s.has("head")) {
    Section h = s.sub("head");
    h.opt("n_layers", m.head.n_layers);
    h.opt("hidden_channels", m.head.hidden_channels);
    h.opt("num_classes", m.head.num_classes);
    opt_enum(h, "reg_mode", m.head.reg_mode, reg_mode_from_string);
    h.opt("bin_count", m.head.bin_count);
    h.opt("shared_across_levels", m.head.shared_across_levels);
    h.finish();
  }
  s.finish();
  return m;
}

AssignerConfig read_assigner(Section s) {
  AssignerConfig a;
  opt_enum(s, "kind", a.kind, assigner_from_string);
  s.opt("pos_thr", a.pos_thr);
  s.opt("neg_thr", a.neg_thr);
  s.opt("top_k", a.top_k);
  s.opt("radius_factor", a.radius_factor);
  s.finish();
  return a;
}

OptimizerConfig read_optimizer(Section s) {
  OptimizerConfig o;
  s.opt("lr", o.lr);
  s.opt("momentum", o.momentum);
  s.opt("weight_decay", o.weight_decay);
  s.opt("epochs", o.epochs);
  s.opt("batch_size", o.batch_size);
  s.opt("lr_steps", o.lr_steps);
  s.opt("lr_decay", o.lr_decay);
  s.opt("warmup_iters", o.warmup_iters);
  s.opt("warmup_ratio", o.warmup_ratio);
  s.opt("grad_clip", o.grad_clip);
  s.finish();
  return o;
}

ModelRole read_role(Section s) {
  ModelRole r;
  if (s.has("model")) r.model = read_model(s.sub("model"));
  if (s.has("assigner")) r.assigner = read_assigner(s.sub("assigner"));
  if (s.has("optimizer")) r.optimizer = read_optimizer(s.sub("optimizer"));
  s.opt("init_seed", r.init_seed);
  s.opt("checkpoint", r.checkpoint);
  s.finish();
  return r;
}

DistillConfig read_distill(Section s) {
  DistillConfig d;
  s.opt("split_index", d.split_index);
  opt_enum(s, "strategy", d.strategy, strategy_from_string);
  if (s.has("branches")) {
    std::vector<std::string> branches;
    s.opt("branches", branches);
    d.distill_cls = d.distill_reg = false;
    for (const auto& b : branches) {
      if (b == "cls") d.distill_cls = true;
      else if (b == "reg") d.distill_reg = true;
      else throw ConfigError("'" + s.join("branches") + "': unknown branch '" + b + "' (expected cls or reg)");
    }
  }
  opt_enum(s, "cls_loss", d.cls_loss, cls_kd_loss_from_string);
  opt_enum(s, "reg_loss", d.reg_loss, reg_kd_loss_from_string);
  s.opt("tau", d.tau);
  s.opt("gamma", d.gamma);
  s.opt("w_cls_kd", d.w_cls_kd);
  s.opt("w_reg_kd", d.w_reg_kd);
  s.opt("w_feat", d.w_feat);
  if (s.has("feat_positions")) {
    std::vector<std::string> pos;
    s.opt("feat_positions", pos);
    d.feat_neck = d.feat_head = false;
    for (const auto& p : pos) {
      if (p == "neck") d.feat_neck = true;
      else if (p == "head") d.feat_head = true;
      else throw ConfigError("'" + s.join("feat_positions") + "': unknown position '" + p + "' (expected neck or head)");
    }
  }
  s.finish();
  return d;
}

SyntheticDatasetSpec read_dataset(Section s) {
  SyntheticDatasetSpec d;
  s.opt("image_size", d.image_size);
  s.opt("num_classes", d.num_classes);
  s.opt("objects_min", d.objects_min);
  s.opt("objects_max", d.objects_max);
  s.opt("size_min", d.size_min);
  s.opt("size_max", d.size_max);
  s.opt("noise", d.noise);
  s.opt("max_overlap", d.max_overlap);
  s.opt("seed", d.seed);
  s.opt("train_size", d.train_size);
  s.opt("val_size", d.val_size);
  s.finish();
  return d;
}

Recipe read_recipe(Section s) {
  Recipe r;
  s.opt("name", r.name);
  if (s.has("variants")) {
    const json& arr = s.raw("variants");
    if (!arr.is_array()) throw ConfigError("'" + s.join("variants") + "' must be an array");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      Section v(arr[k], s.join("variants") + "[" + std::to_string(k) + "]");
      Variant var;
      v.require("name");
      v.opt("name", var.name);
      v.opt("distill", var.distill);
      opt_enum(v, "strategy", var.strategy, strategy_from_string);
      v.opt("split_index", var.split_index);
      v.finish();
      r.variants.push_back(var);
    }
  }
  s.opt("thresholds", r.thresholds);
  if (s.has("conflict_teachers")) {
    const json& arr = s.raw("conflict_teachers");
    if (!arr.is_array()) throw ConfigError("'" + s.join("conflict_teachers") + "' must be an array");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      Section v(arr[k], s.join("conflict_teachers") + "[" + std::to_string(k) + "]");
      ConflictTeacher t;
      v.require("name");
      v.opt("name", t.name);
      if (v.has("assigner")) t.assigner = read_assigner(v.sub("assigner"));
      v.opt("checkpoint", t.checkpoint);
      v.finish();
      r.conflict_teachers.push_back(t);
    }
  }
  s.opt("checks", r.checks);
  s.opt("conflict_images", r.conflict_images);
  s.opt("heatmap_images", r.heatmap_images);
  s.finish();
  return r;
}

json model_json(const ModelConfig& m) {
  return {{"in_channels", m.in_channels},
          {"backbone_channels", m.backbone_channels},
          {"head",
           {{"n_layers", m.head.n_layers},
            {"hidden_channels", m.head.hidden_channels},
            {"num_classes", m.head.num_classes},
            {"reg_mode", to_string(m.head.reg_mode)},
            {"bin_count", m.head.bin_count},
            {"shared_across_levels", m.head.shared_across_levels}}}};
}

json assigner_json(const AssignerConfig& a) {
  return {{"kind", to_string(a.kind)}, {"pos_thr", a.pos_thr}, {"neg_thr", a.neg_thr},
          {"top_k", a.top_k}, {"radius_factor", a.radius_factor}};
}

json optimizer_json(const OptimizerConfig& o) {
  return {{"lr", o.lr},           {"momentum", o.momentum},         {"weight_decay", o.weight_decay},
          {"epochs", o.epochs},   {"batch_size", o.batch_size},     {"lr_steps", o.lr_steps},
          {"lr_decay", o.lr_decay}, {"warmup_iters", o.warmup_iters}, {"warmup_ratio", o.warmup_ratio},
          {"grad_clip", o.grad_clip}};
}

json role_json(const ModelRole& r) {
  return {{"model", model_json(r.model)},
          {"assigner", assigner_json(r.assigner)},
          {"optimizer", optimizer_json(r.optimizer)},
          {"init_seed", r.init_seed},
          {"checkpoint", r.checkpoint}};
}

json distill_json(const DistillConfig& d) {
  json branches = json::array();
  if (d.distill_cls) branches.push_back("cls");
  if (d.distill_reg) branches.push_back("reg");
  json pos = json::array();
  if (d.feat_neck) pos.push_back("neck");
  if (d.feat_head) pos.push_back("head");
  return {{"split_index", d.split_index}, {"strategy", to_string(d.strategy)}, {"branches", branches},
          {"cls_loss", to_string(d.cls_loss)}, {"reg_loss", to_string(d.reg_loss)}, {"tau", d.tau},
          {"gamma", d.gamma}, {"w_cls_kd", d.w_cls_kd}, {"w_reg_kd", d.w_reg_kd}, {"w_feat", d.w_feat},
          {"feat_positions", pos}};
}

json dataset_json(const SyntheticDatasetSpec& d) {
  return {{"image_size", d.image_size}, {"num_classes", d.num_classes}, {"objects_min", d.objects_min},
          {"objects_max", d.objects_max}, {"size_min", d.size_min},   {"size_max", d.size_max},
          {"noise", d.noise},           {"max_overlap", d.max_overlap}, {"seed", d.seed},
          {"train_size", d.train_size}, {"val_size", d.val_size}};
}

json recipe_json(const Recipe& r) {
  json variants = json::array();
  for (const auto& v : r.variants) {
    variants.push_back({{"name", v.name}, {"distill", v.distill}, {"strategy", to_string(v.strategy)},
                        {"split_index", v.split_index}});
  }
  json teachers = json::array();
  for (const auto& t : r.conflict_teachers) {
    teachers.push_back({{"name", t.name}, {"assigner", assigner_json(t.assigner)}, {"checkpoint", t.checkpoint}});
  }
  return {{"name", r.name},
          {"variants", variants},
          {"thresholds", r.thresholds},
          {"conflict_teachers", teachers},
          {"checks", r.checks},
          {"conflict_images", r.conflict_images},
          {"heatmap_images", r.heatmap_images}};
}

json config_json(const RunConfig& c) {
  return {{"dataset", dataset_json(c.dataset)},
          {"teacher", role_json(c.teacher)},
          {"student", role_json(c.student)},
          {"distill", distill_json(c.distill)},
          {"detection", {{"cls_gamma", c.detection.cls_gamma}, {"reg_weight", c.detection.reg_weight}}},
          {"eval",
           {{"iou_thr", c.eval.iou_thr},
            {"score_thr", c.eval.score_thr},
            {"nms_iou", c.eval.nms_iou},
            {"max_dets", c.eval.max_dets}}},
          {"seeds", c.seeds},
          {"output_dir", c.output_dir},
          {"distance_slice", c.distance_slice},
          {"checkpoint_epochs", c.checkpoint_epochs},
          {"recipe", recipe_json(c.recipe)}};
}

void validate_role(const ModelRole& r, const char* name) {
  try {
    r.model.validate();
    r.optimizer.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  }
  if (r.assigner.top_k < 1) throw ConfigError(std::string(name) + ".assigner.top_k must be >= 1");
  if (!(r.assigner.neg_thr <= r.assigner.pos_thr)) {
    throw ConfigError(std::string(name) + ".assigner.neg_thr must not exceed pos_thr");
  }
  if (!(r.assigner.radius_factor > 0.0)) throw ConfigError(std::string(name) + ".assigner.radius_factor must be > 0");
}

}  // namespace

void RunConfig::validate() const {
  dataset.validate();
  validate_role(teacher, "teacher");
  validate_role(student, "student");
  for (const ModelRole* r : {&teacher, &student}) {
    if (dataset.image_size % r->model.largest_stride() != 0) {
      throw ConfigError("dataset.image_size must be divisible by the largest model stride (" +
                        std::to_string(r->model.largest_stride()) + ")");
    }
    if (r->model.head.num_classes != dataset.num_classes) {
      throw ConfigError("model head num_classes must equal dataset.num_classes");
    }
  }
  distill.validate(student.model.head);
  if (!(eval.iou_thr > 0.0 && eval.iou_thr <= 1.0)) throw ConfigError("eval.iou_thr must lie in (0, 1]");
  if (!(eval.score_thr >= 0.0 && eval.score_thr < 1.0)) throw ConfigError("eval.score_thr must lie in [0, 1)");
  if (!(eval.nms_iou > 0.0 && eval.nms_iou <= 1.0)) throw ConfigError("eval.nms_iou must lie in (0, 1]");
  if (eval.max_dets < 1) throw ConfigError("eval.max_dets must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (distance_slice < 1) throw ConfigError("distance_slice must be >= 1");
  const int n = student.model.head.n_layers;
  for (const auto& v : recipe.variants) {
    if (v.distill && v.strategy != Strategy::pred_mimic && (v.split_index < 0 || v.split_index > n)) {
      throw ConfigError("recipe variant '" + v.name + "': split_index outside [0, " + std::to_string(n) + "]");
    }
  }
  for (std::size_t k = 0; k < recipe.thresholds.size(); ++k) {
    const double t = recipe.thresholds[k];
    if (!(t >= 0.0 && t <= 1.0) || (k > 0 && t < recipe.thresholds[k - 1])) {
      throw ConfigError("recipe.thresholds must be ascending within [0, 1]");
    }
  }
  for (const auto& c : recipe.checks) {
    if (!kKnownChecks.count(c)) throw ConfigError("recipe.checks: unknown check '" + c + "'");
  }
  if (recipe.conflict_images < 1) throw ConfigError("recipe.conflict_images must be >= 1");
  if (recipe.heatmap_images < 0) throw ConfigError("recipe.heatmap_images must be >= 0");
}

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  Section s(root, "");
  for (const char* key : {"dataset", "teacher", "student"}) s.require(key);
  RunConfig c;
  c.dataset = read_dataset(s.sub("dataset"));
  c.teacher = read_role(s.sub("teacher"));
  c.student = read_role(s.sub("student"));
  if (s.has("distill")) c.distill = read_distill(s.sub("distill"));
  if (s.has("detection")) {
    Section d = s.sub("detection");
    d.opt("cls_gamma", c.detection.cls_gamma);
    d.opt("reg_weight", c.detection.reg_weight);
    d.finish();
  }
  if (s.has("eval")) {
    Section e = s.sub("eval");
    e.opt("iou_thr", c.eval.iou_thr);
    e.opt("score_thr", c.eval.score_thr);
    e.opt("nms_iou", c.eval.nms_iou);
    e.opt("max_dets", c.eval.max_dets);
    e.finish();
  }
  s.opt("seeds", c.seeds);
  s.opt("output_dir", c.output_dir);
  s.opt("distance_slice", c.distance_slice);
  s.opt("checkpoint_epochs", c.checkpoint_epochs);
  if (s.has("recipe")) c.recipe = read_recipe(s.sub("recipe"));
  s.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& config) { return config_json(config).dump(2) + "\n"; }

std::string config_hash(const RunConfig& config) {
  json j = config_json(config);
  j.erase("seeds");
  j.erase("output_dir");
  return fnv1a_hex(j.dump());
}

std::vector<Variant> sweep_variants(const RunConfig& config) {
  if (!config.recipe.variants.empty()) return config.recipe.variants;
  std::vector<Variant> out;
  out.push_back({"baseline", false, Strategy::crosskd_a, 0});
  for (int i = 0; i <= config.student.model.head.n_layers; ++i) {
    out.push_back({"crosskd_i" + std::to_string(i), true, Strategy::crosskd_a, i});
  }
  return out;
}

}  // namespace crosskd
