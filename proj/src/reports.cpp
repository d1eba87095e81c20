// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/reports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "crosskd/checkpoint.hpp"
#include "crosskd/conflict.hpp"
#include "crosskd/csv.hpp"

namespace crosskd {

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v, const char* spec = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string header_line(const std::string& hash, const std::string& seed) {
  return "# config_hash=" + hash + " seed=" + seed + "\n";
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t k = 0; k < seeds.size(); ++k) s += (k ? ";" : "") + std::to_string(seeds[k]);
  return s;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series) {
  constexpr double W = 640, H = 420, L = 70, R = 170, T = 40, B = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      x0 = std::min(x0, s.x[k]);
      x1 = std::max(x1, s.x[k]);
      y0 = std::min(y0, s.y[k]);
      y1 = std::max(y1, s.y[k]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<title>" << xml_escape(title) << "</title>\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
     << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0;
    const double yv = y0 + (y1 - y0) * k / 4.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << fmt(xv) << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << xml_escape(x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % std::size(kPalette)];
    os << "<g class=\"series\" data-name=\"" << xml_escape(s.name) << "\" stroke=\"" << color << "\" fill=\"" << color
       << "\">\n<polyline fill=\"none\" points=\"";
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
      if (std::isfinite(s.x[k]) && std::isfinite(s.y[k])) os << fmt(px(s.x[k]), "%.2f") << ',' << fmt(py(s.y[k]), "%.2f") << ' ';
    }
    os << "\"/>\n";
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      os << "<circle cx=\"" << fmt(px(s.x[k]), "%.2f") << "\" cy=\"" << fmt(py(s.y[k]), "%.2f")
         << "\" r=\"2.5\" data-x=\"" << csv::num(s.x[k]) << "\" data-y=\"" << csv::num(s.y[k]) << "\"/>\n";
    }
    os << "</g>\n";
    const double ly = T + 16.0 * static_cast<double>(si);
    os << "<rect x=\"" << W - R + 12 << "\" y=\"" << ly << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
    os << "<text x=\"" << W - R + 28 << "\" y=\"" << ly + 9 << "\" font-size=\"11\">" << xml_escape(s.name)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_heatmap(const std::string& title, const Tensor& map) {
  constexpr int kCell = 24;
  constexpr int kTop = 36;
  double hi = 0.0;
  for (double v : map.data) hi = std::max(hi, v);
  std::ostringstream os;
  const int w = std::max(200, map.width * kCell + 20);
  const int h = map.height * kCell + kTop + 10;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<title>" << xml_escape(title) << "</title>\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"10\" y=\"22\" font-size=\"13\">" << xml_escape(title) << "</text>\n";
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      const double v = map.at(0, r, c);
      const int shade = hi > 0.0 ? static_cast<int>(std::lround(255.0 * (1.0 - v / hi))) : 255;
      os << "<rect x=\"" << 10 + c * kCell << "\" y=\"" << kTop + r * kCell << "\" width=\"" << kCell << "\" height=\""
         << kCell << "\" fill=\"rgb(" << shade << ',' << shade << ',' << shade << ")\" data-row=\"" << r
         << "\" data-col=\"" << c << "\" data-value=\"" << csv::num(v) << "\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

Dataset build_dataset(const RunConfig& config) { return generate_dataset(config.dataset); }

DetectorModel obtain_teacher(const RunConfig& config, const Dataset& data, const AssignerConfig& assigner,
                             const std::string& checkpoint, TrainLog* log) {
  DetectorModel teacher;
  if (!checkpoint.empty()) {
    teacher = load_checkpoint(checkpoint);
  } else {
    teacher = DetectorModel::create(config.teacher.model, config.teacher.init_seed);
    TrainOptions o;
    o.optimizer = config.teacher.optimizer;
    o.assigner = assigner;
    o.detection = config.detection;
    o.eval = config.eval;
    o.seed = config.teacher.init_seed;
    o.distance_slice = config.distance_slice;
    o.config_hash = config_hash(config);
    TrainLog l = train(teacher, data, o, nullptr);
    if (log != nullptr) *log = std::move(l);
  }
  freeze_teacher(teacher);
  return teacher;
}

TrainOptions student_options(const RunConfig& config, const Variant& variant, std::uint64_t seed) {
  TrainOptions o;
  o.optimizer = config.student.optimizer;
  o.assigner = config.student.assigner;
  o.detection = config.detection;
  o.eval = config.eval;
  o.distill = config.distill;
  o.distill.strategy = variant.strategy;
  if (variant.strategy != Strategy::pred_mimic) o.distill.split_index = variant.split_index;
  o.distill_enabled = variant.distill;
  o.seed = seed;
  o.distance_slice = config.distance_slice;
  o.config_hash = config_hash(config);
  return o;
}

RunOutcome run_student(const RunConfig& config, const Dataset& data, const DetectorModel& teacher,
                       const Variant& variant, std::uint64_t seed) {
  RunOutcome r;
  r.model = DetectorModel::create(config.student.model, mix_seed(config.student.init_seed, seed));
  r.log = train(r.model, data, student_options(config, variant, seed), &teacher);
  return r;
}

double SweepRow::mean_final(double EpochRecord::*field) const {
  std::vector<double> v;
  for (const auto& l : logs) {
    if (!l.records.empty()) v.push_back(l.records.back().*field);
  }
  return mean(v);
}

std::string run_key(const Variant& v, std::uint64_t seed) {
  if (!v.distill) return "baseline/" + std::to_string(seed);
  const std::string split = v.strategy == Strategy::pred_mimic ? "n" : std::to_string(v.split_index);
  return to_string(v.strategy) + "/" + split + "/" + std::to_string(seed);
}

std::vector<SweepRow> run_sweep(const RunConfig& config, const Dataset& data, const DetectorModel& teacher,
                                const std::vector<Variant>& variants, RunCache* cache, std::ostream* progress) {
  std::vector<SweepRow> rows;
  for (const Variant& v : variants) {
    SweepRow row;
    row.variant = v;
    for (std::uint64_t seed : config.seeds) {
      const std::string key = run_key(v, seed);
      TrainLog log;
      if (cache != nullptr && cache->count(key)) {
        log = cache->at(key);
      } else {
        log = run_student(config, data, teacher, v, seed).log;
        if (cache != nullptr) (*cache)[key] = log;
      }
      const double ap = log.records.empty() ? 0.0 : log.records.back().ap;
      if (progress != nullptr) *progress << "  " << v.name << " seed " << seed << ": final AP " << fmt(ap) << '\n';
      row.seeds.push_back(seed);
      row.final_ap.push_back(ap);
      row.logs.push_back(std::move(log));
    }
    row.mean_ap = mean(row.final_ap);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows, const std::string& hash) {
  std::ostringstream os;
  const std::vector<std::uint64_t> seeds = rows.empty() ? std::vector<std::uint64_t>{} : rows.front().seeds;
  os << header_line(hash, join_seeds(seeds));
  os << "variant,distill,strategy,split_index";
  for (auto s : seeds) os << ",ap_seed" << s;
  os << ",mean_ap,mean_l1_pred_teacher,mean_l1_cls_gt,mean_l1_box_gt\n";
  for (const auto& r : rows) {
    os << r.variant.name << ',' << (r.variant.distill ? 1 : 0) << ','
       << (r.variant.distill ? to_string(r.variant.strategy) : std::string("none")) << ','
       << (r.variant.distill && r.variant.strategy != Strategy::pred_mimic ? std::to_string(r.variant.split_index)
                                                                            : std::string("-"));
    for (double ap : r.final_ap) os << ',' << csv::num(ap);
    os << ',' << csv::num(r.mean_ap) << ',' << csv::num(r.mean_final(&EpochRecord::l1_pred_teacher)) << ','
       << csv::num(r.mean_final(&EpochRecord::l1_cls_gt)) << ',' << csv::num(r.mean_final(&EpochRecord::l1_box_gt))
       << '\n';
  }
  return os.str();
}

std::vector<CheckResult> evaluate_sweep_checks(const std::vector<std::string>& checks,
                                               const std::vector<SweepRow>& rows, int n_layers) {
  const SweepRow* baseline = nullptr;
  std::vector<const SweepRow*> distilled, crosskd, mimic;
  for (const auto& r : rows) {
    if (!r.variant.distill) {
      baseline = &r;
      continue;
    }
    distilled.push_back(&r);
    if (r.variant.strategy == Strategy::crosskd_a && r.variant.split_index < n_layers) crosskd.push_back(&r);
    if (r.variant.strategy == Strategy::pred_mimic ||
        (r.variant.strategy == Strategy::crosskd_a && r.variant.split_index == n_layers)) {
      mimic.push_back(&r);
    }
  }
  std::vector<CheckResult> out;
  for (const auto& name : checks) {
    CheckResult c{name, true, ""};
    std::ostringstream d;
    if (name == "splits_ge_baseline" || name == "crosskd_ge_baseline") {
      const auto& group = name == "splits_ge_baseline" ? distilled : crosskd;
      if (baseline == nullptr || group.empty()) {
        c.pass = false;
        d << "needs a baseline row and at least one distilled row";
      }
      for (const SweepRow* r : group) {
        if (baseline == nullptr) break;
        const bool ok = r->mean_ap >= baseline->mean_ap;
        c.pass = c.pass && ok;
        d << r->variant.name << ' ' << fmt(r->mean_ap) << (ok ? " >= " : " < ") << "baseline "
          << fmt(baseline->mean_ap) << "; ";
      }
    } else if (name == "mimic_le_crosskd" || name == "fig6_distance_ordering") {
      if (mimic.empty() || crosskd.empty()) {
        c.pass = false;
        d << "needs a prediction-mimicking row and a cross-head row";
      }
      for (const SweepRow* m : mimic) {
        for (const SweepRow* x : crosskd) {
          if (name == "mimic_le_crosskd") {
            const bool ok = m->mean_ap <= x->mean_ap;
            c.pass = c.pass && ok;
            d << m->variant.name << ' ' << fmt(m->mean_ap) << (ok ? " <= " : " > ") << x->variant.name << ' '
              << fmt(x->mean_ap) << "; ";
          } else {
            const double xg = x->mean_final(&EpochRecord::l1_cls_gt);
            const double mg = m->mean_final(&EpochRecord::l1_cls_gt);
            const double xt = x->mean_final(&EpochRecord::l1_pred_teacher);
            const double mt = m->mean_final(&EpochRecord::l1_pred_teacher);
            const bool ok = xg <= mg && mt <= xt;
            c.pass = c.pass && ok;
            d << "l1_cls_gt " << x->variant.name << ' ' << fmt(xg) << " vs " << m->variant.name << ' ' << fmt(mg)
              << ", l1_pred_teacher " << m->variant.name << ' ' << fmt(mt) << " vs " << x->variant.name << ' '
              << fmt(xt) << "; ";
          }
        }
      }
    } else {
      continue;  // evaluated by other commands
    }
    c.detail = d.str();
    if (c.detail.size() >= 2 && c.detail.compare(c.detail.size() - 2, 2, "; ") == 0) c.detail.resize(c.detail.size() - 2);
    out.push_back(c);
  }
  return out;
}

// ---- commands ----

namespace {

struct Loaded {
  RunConfig config;
  std::filesystem::path out;
  std::string hash;
};

Loaded load(const CommandOptions& opts) {
  Loaded l;
  l.config = load_run_config(opts.config_path);
  if (opts.seed) l.config.seeds = {*opts.seed};
  l.out = opts.out_dir ? *opts.out_dir : std::filesystem::path(l.config.output_dir);
  l.hash = config_hash(l.config);
  std::filesystem::create_directories(l.out);
  return l;
}

DetectorModel teacher_for(const CommandOptions& opts, const Loaded& l, const Dataset& data, std::ostream& out) {
  std::string ckpt = opts.teacher ? opts.teacher->string() : l.config.teacher.checkpoint;
  if (ckpt.empty()) out << "no teacher checkpoint given; training the configured teacher\n";
  return obtain_teacher(l.config, data, l.config.teacher.assigner, ckpt);
}

void print_checks(const std::vector<CheckResult>& checks, std::ostream& out) {
  for (const auto& c : checks) out << "check " << c.name << ": " << (c.pass ? "PASS" : "FAIL") << "  " << c.detail << '\n';
}

void write_logs(const std::vector<SweepRow>& rows, const std::filesystem::path& dir) {
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < r.logs.size(); ++k) {
      write_file(dir / ("trainlog_" + r.variant.name + "_seed" + std::to_string(r.seeds[k]) + ".csv"),
                 train_log_to_csv(r.logs[k]));
    }
  }
}

}  // namespace

int cmd_train_teacher(const CommandOptions& opts, std::ostream& out) {
  Loaded l = load(opts);
  if (opts.seed) l.config.teacher.init_seed = *opts.seed;
  const Dataset data = build_dataset(l.config);
  TrainLog log;
  const DetectorModel teacher = obtain_teacher(l.config, data, l.config.teacher.assigner, "", &log);
  const auto ckpt = l.out / "teacher.ckpt";
  save_checkpoint(teacher, ckpt);
  write_file(l.out / "teacher_trainlog.csv", train_log_to_csv(log));
  const double ap = log.records.empty() ? evaluate_ap(teacher, data.val, l.config.eval) : log.records.back().ap;
  out << "teacher final AP: " << fmt(ap) << '\n';
  out << "checkpoint: " << ckpt.string() << " digest " << fnv1a_hex(serialize_checkpoint(teacher)) << '\n';
  return 0;
}

int cmd_distill(const CommandOptions& opts, std::ostream& out) {
  const Loaded l = load(opts);
  const RunConfig& c = l.config;
  const Dataset data = build_dataset(c);
  const DetectorModel teacher = teacher_for(opts, l, data, out);
  const Variant v{"distill", true, c.distill.strategy, c.distill.split_index};
  std::vector<double> aps;
  std::ostringstream summary;
  summary << header_line(l.hash, join_seeds(c.seeds)) << "seed,final_ap\n";
  for (std::uint64_t seed : c.seeds) {
    RunOutcome r = run_student(c, data, teacher, v, seed);
    const std::string tag = "seed" + std::to_string(seed);
    write_file(l.out / ("trainlog_" + tag + ".csv"), train_log_to_csv(r.log));
    save_checkpoint(r.model, l.out / ("student_" + tag + ".ckpt"));
    const double ap = r.log.records.empty() ? evaluate_ap(r.model, data.val, c.eval) : r.log.records.back().ap;
    aps.push_back(ap);
    summary << seed << ',' << csv::num(ap) << '\n';
    out << "final AP " << tag << ": " << fmt(ap) << '\n';

    const int n = c.student.model.head.n_layers;
    const int k = std::min(c.distill.effective_split(n), n - 1);
    for (int img = 0; img < std::min<int>(c.recipe.heatmap_images, static_cast<int>(data.val.size())); ++img) {
      const Sample& s = data.val[img];
      const auto a = assign(c.student.assigner, grids_for(c.student.model, s.image.height, s.image.width), s.gt,
                            c.student.model.head.num_classes);
      const Tensor heat = grad_heatmap(r.model, teacher, c.distill, s.image, a, Branch::cls, 0, k);
      const std::string stem = "heatmap_" + tag + "_img" + std::to_string(img);
      write_file(l.out / (stem + ".csv"), header_line(l.hash, std::to_string(seed)) + heatmap_to_csv(heat));
      write_file(l.out / (stem + ".svg"), svg_heatmap("d KD / d f_" + std::to_string(k) + " (" + tag + ")", heat));
    }
  }
  write_file(l.out / "distill_summary.csv", summary.str());
  out << "mean final AP: " << fmt(mean(aps)) << '\n';
  return 0;
}

int cmd_ablate_split(const CommandOptions& opts, std::ostream& out) {
  const Loaded l = load(opts);
  const RunConfig& c = l.config;
  const Dataset data = build_dataset(c);
  const DetectorModel teacher = teacher_for(opts, l, data, out);
  const auto rows = run_sweep(c, data, teacher, sweep_variants(c), nullptr, &out);
  write_file(l.out / "ablate_split.csv", sweep_to_csv(rows, l.hash));
  write_logs(rows, l.out / "logs");
  out << "variant,mean_ap\n";
  for (const auto& r : rows) out << r.variant.name << ',' << fmt(r.mean_ap) << '\n';
  print_checks(evaluate_sweep_checks(c.recipe.checks, rows, c.student.model.head.n_layers), out);
  return 0;
}

int cmd_analyze_conflict(const CommandOptions& opts, std::ostream& out) {
  const Loaded l = load(opts);
  const RunConfig& c = l.config;
  const Dataset data = build_dataset(c);
  std::vector<DetectorModel> models;
  std::vector<std::string> names;
  std::vector<AssignerKind> kinds;
  if (c.recipe.conflict_teachers.empty()) {
    models.push_back(teacher_for(opts, l, data, out));
    names.push_back("teacher");
    kinds.push_back(c.teacher.assigner.kind);
  } else {
    for (const auto& t : c.recipe.conflict_teachers) {
      out << "teacher '" << t.name << "' (" << to_string(t.assigner.kind) << ")\n";
      models.push_back(obtain_teacher(c, data, t.assigner, t.checkpoint));
      names.push_back(t.name);
      kinds.push_back(t.assigner.kind);
    }
  }
  std::vector<TeacherUnderTest> teachers;
  for (std::size_t k = 0; k < models.size(); ++k) teachers.push_back({names[k], &models[k], kinds[k]});
  const auto thresholds = c.recipe.thresholds.empty() ? default_thresholds() : c.recipe.thresholds;
  const std::size_t count = std::min<std::size_t>(data.val.size(), static_cast<std::size_t>(c.recipe.conflict_images));
  const std::vector<Sample> samples(data.val.begin(), data.val.begin() + static_cast<std::ptrdiff_t>(count));
  const CrossAssignerReport report = cross_assigner_report(teachers, c.student.assigner, samples, thresholds);

  const std::string seed_tag = std::to_string(c.teacher.init_seed);
  std::vector<Series> series;
  std::ostringstream table;
  table << header_line(l.hash, seed_tag) << "teacher,teacher_assigner,same_assigner,positive_count,ratio_at_0.5\n";
  for (const auto& e : report.entries) {
    write_file(l.out / ("conflict_" + e.name + ".csv"), header_line(l.hash, seed_tag) + conflict_curve_to_csv(e.curve));
    series.push_back({e.name + " (" + to_string(e.teacher_assigner) + ")", e.curve.thresholds, e.curve.ratios});
    double at_half = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = 0; k < e.curve.thresholds.size(); ++k) {
      if (std::abs(e.curve.thresholds[k] - 0.5) < 1e-12) at_half = e.curve.ratios[k];
    }
    table << e.name << ',' << to_string(e.teacher_assigner) << ',' << (e.same_assigner ? 1 : 0) << ','
          << e.curve.positive_count << ',' << csv::num(at_half) << '\n';
    out << "teacher " << e.name << ": conflict ratio at 0.5 = " << fmt(at_half) << '\n';
  }
  write_file(l.out / "conflict_report.csv", table.str());
  write_file(l.out / "conflict.svg", svg_line_plot("Target conflict", "discrepancy threshold",
                                                   "conflict area / positive area", series));
  if (!samples.empty()) {
    const Sample& s = samples.front();
    const auto grids = grids_for(c.student.model, s.image.height, s.image.width);
    write_file(l.out / "assignment_img0.csv",
               assignment_to_csv(assign(c.student.assigner, grids, s.gt, c.student.model.head.num_classes)));
    for (std::size_t k = 0; k < models.size(); ++k) {
      write_file(l.out / ("predictions_" + names[k] + "_img0.csv"),
                 prediction_dump_to_csv(forward(models[k], s.image).predictions));
    }
  }
  for (const auto& name : c.recipe.checks) {
    if (name == "cross_assigner_ordering") {
      out << "check cross_assigner_ordering: " << (report.ordering_holds ? "PASS" : "FAIL") << '\n';
    } else if (name == "conflict_ordering_at_half") {
      out << "check conflict_ordering_at_half: " << (ordering_holds_at(report, 0.5) ? "PASS" : "FAIL") << '\n';
    }
  }
  return 0;
}

int cmd_eval(const CommandOptions& opts, std::ostream& out) {
  const Loaded l = load(opts);
  const auto path = opts.checkpoint ? opts.checkpoint : opts.teacher;
  if (!path) throw ConfigError("eval needs --checkpoint PATH");
  const DetectorModel model = load_checkpoint(*path);
  const Dataset data = build_dataset(l.config);
  const double ap = evaluate_ap(model, data.val, l.config.eval);
  write_file(l.out / "eval.csv", header_line(l.hash, join_seeds(l.config.seeds)) + "checkpoint,ap\n" +
                                     path->filename().string() + "," + csv::num(ap) + "\n");
  out << "AP@" << fmt(l.config.eval.iou_thr) << ": " << fmt(ap) << '\n';
  return 0;
}

int cmd_plot(const CommandOptions& opts, std::ostream& out) {
  if (opts.inputs.empty()) throw ConfigError("plot needs at least one CSV input");
  const std::filesystem::path dir = opts.out_dir ? *opts.out_dir : std::filesystem::path("plots");
  std::filesystem::create_directories(dir);
  static const char* const kColumns[] = {"ap",     "det_cls",         "det_reg",   "kd_cls",   "kd_reg",
                                         "feat",   "l1_pred_teacher", "l1_cls_gt", "l1_box_gt"};
  std::vector<TrainLog> logs;
  std::vector<Series> conflict;
  for (const auto& p : opts.inputs) {
    const std::string text = read_file(p);
    const auto lines = csv::data_lines(text);
    if (lines.empty()) throw ConfigError("empty figure: '" + p.string() + "' has no data");
    const std::string& head = lines.front();
    if (head.rfind("epoch,ap,", 0) == 0) {
      TrainLog log = train_log_from_csv(text);
      if (log.records.empty()) throw ConfigError("empty figure: '" + p.string() + "' has no epochs");
      logs.push_back(std::move(log));
    } else if (head.rfind("threshold,ratio,", 0) == 0) {
      const ConflictCurve cc = conflict_curve_from_csv(text);
      conflict.push_back({p.stem().string(), cc.thresholds, cc.ratios});
    } else if (head == "row,col,value") {
      int rows = 0, cols = 0;
      std::vector<std::array<double, 3>> cells;
      for (std::size_t k = 1; k < lines.size(); ++k) {
        const auto f = csv::split(lines[k]);
        if (f.size() != 3) throw ConfigError("heatmap CSV '" + p.string() + "': expected 3 fields");
        cells.push_back({csv::to_double(f[0]), csv::to_double(f[1]), csv::to_double(f[2])});
        rows = std::max(rows, csv::to_int(f[0]) + 1);
        cols = std::max(cols, csv::to_int(f[1]) + 1);
      }
      Tensor map(1, rows, cols);
      for (const auto& cell : cells) map.at(0, static_cast<int>(cell[0]), static_cast<int>(cell[1])) = cell[2];
      const auto target = dir / (p.stem().string() + ".svg");
      write_file(target, svg_heatmap(p.stem().string(), map));
      out << "wrote " << target.string() << '\n';
    } else {
      throw ConfigError("'" + p.string() + "': unrecognised CSV header '" + head + "'");
    }
  }
  if (!logs.empty()) {
    for (std::size_t col = 0; col < std::size(kColumns); ++col) {
      std::vector<Series> series;
      for (const auto& log : logs) {
        Series s;
        s.name = log.config_hash.substr(0, 8) + "/seed" + std::to_string(log.seed);
        for (const auto& r : log.records) {
          const double values[] = {r.ap,     r.det_cls,         r.det_reg,   r.kd_cls,   r.kd_reg,
                                   r.feat,   r.l1_pred_teacher, r.l1_cls_gt, r.l1_box_gt};
          s.x.push_back(r.epoch);
          s.y.push_back(values[col]);
        }
        series.push_back(std::move(s));
      }
      const auto target = dir / (std::string("plot_") + kColumns[col] + ".svg");
      write_file(target, svg_line_plot(kColumns[col], "epoch", kColumns[col], series));
      out << "wrote " << target.string() << '\n';
    }
  }
  if (!conflict.empty()) {
    const auto target = dir / "plot_conflict.svg";
    write_file(target, svg_line_plot("Target conflict", "discrepancy threshold", "conflict area / positive area", conflict));
    out << "wrote " << target.string() << '\n';
  }
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const WiringError*>(&e) != nullptr) return 3;
  if (dynamic_cast<const DivergenceError*>(&e) != nullptr) return 2;
  return 1;
}

}  // namespace crosskd
