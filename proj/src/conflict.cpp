// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/conflict.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "crosskd/csv.hpp"

namespace crosskd {

std::vector<double> discrepancy_from_probs(const Tensor& probs, const LevelAssignment& level) {
  if (!probs.same_shape(level.cls_target)) {
    throw ContractViolation("discrepancy: teacher map " + probs.shape_string() + " vs targets " +
                            level.cls_target.shape_string());
  }
  std::vector<double> d(probs.plane(), 0.0);
  for (int c = 0; c < probs.channels; ++c) {
    const auto p = probs.channel(c);
    const auto t = level.cls_target.channel(c);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::max(d[i], std::abs(p[i] - t[i]));
  }
  return d;
}

std::vector<double> discrepancy_map(const std::vector<PredictionMap>& teacher_preds,
                                    const AssignmentResult& assignment) {
  if (teacher_preds.size() != assignment.levels.size()) {
    throw ContractViolation("discrepancy_map: level count mismatch");
  }
  std::vector<double> out;
  for (std::size_t l = 0; l < teacher_preds.size(); ++l) {
    Tensor probs = teacher_preds[l].cls_logits;
    for (double& v : probs.data) v = sigmoid(v);
    const auto d = discrepancy_from_probs(probs, assignment.levels[l]);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

ConflictCurve conflict_curve(const std::vector<double>& discrepancy, const AssignmentResult& assignment,
                             const std::vector<double>& thresholds) {
  if (static_cast<int>(discrepancy.size()) != assignment.location_count()) {
    throw ContractViolation("conflict_curve: discrepancy map does not cover the assignment");
  }
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    if (!(thresholds[k] >= 0.0 && thresholds[k] <= 1.0) || (k > 0 && thresholds[k] < thresholds[k - 1])) {
      throw ContractViolation("conflict_curve: thresholds must be ascending within [0, 1]");
    }
  }
  ConflictCurve curve;
  curve.thresholds = thresholds;
  curve.positive_count = assignment.positive_count();
  for (double t : thresholds) {
    const long count = std::count_if(discrepancy.begin(), discrepancy.end(), [t](double d) { return d > t; });
    curve.conflict_counts.push_back(count);
    curve.ratios.push_back(curve.positive_count > 0 ? static_cast<double>(count) / curve.positive_count
                                                    : std::numeric_limits<double>::quiet_NaN());
  }
  return curve;
}

ConflictCurve merge_curves(const std::vector<ConflictCurve>& curves) {
  ConflictCurve out;
  if (curves.empty()) return out;
  out.thresholds = curves.front().thresholds;
  out.conflict_counts.assign(out.thresholds.size(), 0);
  for (const auto& c : curves) {
    if (c.thresholds != out.thresholds) throw ContractViolation("merge_curves: threshold grids differ");
    out.positive_count += c.positive_count;
    for (std::size_t k = 0; k < c.conflict_counts.size(); ++k) out.conflict_counts[k] += c.conflict_counts[k];
  }
  for (long count : out.conflict_counts) {
    out.ratios.push_back(out.positive_count > 0 ? static_cast<double>(count) / out.positive_count
                                                : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int k = 0; k <= 20; ++k) t.push_back(k * 0.05);
  return t;
}

CrossAssignerReport cross_assigner_report(const std::vector<TeacherUnderTest>& teachers,
                                          const AssignerConfig& student_assigner,
                                          const std::vector<Sample>& samples,
                                          const std::vector<double>& thresholds) {
  CrossAssignerReport report;
  if (samples.empty()) return report;
  for (const auto& t : teachers) {
    if (t.model == nullptr) throw ContractViolation("cross_assigner_report: missing teacher model");
    const ModelConfig& mc = t.model->config();
    std::vector<ConflictCurve> per_image;
    for (const Sample& s : samples) {
      const auto grids = grids_for(mc, s.image.height, s.image.width);
      const AssignmentResult a = assign(student_assigner, grids, s.gt, mc.head.num_classes);
      const ForwardResult f = forward(*t.model, s.image);
      per_image.push_back(conflict_curve(discrepancy_map(f.predictions, a), a, thresholds));
    }
    report.entries.push_back({t.name, t.assigner, t.assigner == student_assigner.kind, merge_curves(per_image)});
  }
  for (const auto& diff : report.entries) {
    if (diff.same_assigner) continue;
    for (const auto& same : report.entries) {
      if (!same.same_assigner) continue;
      for (std::size_t k = 0; k < thresholds.size(); ++k) {
        if (diff.curve.conflict_counts[k] * same.curve.positive_count <
            same.curve.conflict_counts[k] * diff.curve.positive_count) {
          report.ordering_holds = false;
        }
      }
    }
  }
  return report;
}

bool ordering_holds_at(const CrossAssignerReport& report, double threshold) {
  bool holds = true;
  for (const auto& diff : report.entries) {
    if (diff.same_assigner) continue;
    for (const auto& same : report.entries) {
      if (!same.same_assigner) continue;
      auto index = [&](const ConflictCurve& c) {
        for (std::size_t k = 0; k < c.thresholds.size(); ++k) {
          if (std::abs(c.thresholds[k] - threshold) < 1e-12) return k;
        }
        throw ContractViolation("ordering_holds_at: threshold " + csv::num(threshold) + " is not on the curves");
      };
      const std::size_t kd = index(diff.curve), ks = index(same.curve);
      if (diff.curve.conflict_counts[kd] * same.curve.positive_count <
          same.curve.conflict_counts[ks] * diff.curve.positive_count) {
        holds = false;
      }
    }
  }
  return holds;
}

std::string prediction_dump_to_csv(const std::vector<PredictionMap>& preds) {
  std::ostringstream os;
  os << "level,row,col";
  const int classes = preds.empty() ? 0 : preds.front().cls_logits.channels;
  for (int c = 0; c < classes; ++c) os << ",class_" << c;
  os << '\n';
  for (std::size_t l = 0; l < preds.size(); ++l) {
    const Tensor& t = preds[l].cls_logits;
    for (int r = 0; r < t.height; ++r) {
      for (int col = 0; col < t.width; ++col) {
        os << l << ',' << r << ',' << col;
        for (int c = 0; c < t.channels; ++c) os << ',' << csv::num(sigmoid(t.at(c, r, col)));
        os << '\n';
      }
    }
  }
  return os.str();
}

std::vector<Tensor> prediction_dump_from_csv(const std::string& text, const std::vector<PointGrid>& grids,
                                             int num_classes) {
  std::vector<Tensor> out;
  for (const auto& g : grids) out.emplace_back(num_classes, g.rows, g.cols);
  const auto lines = csv::data_lines(text);
  if (lines.empty()) throw ConfigError("prediction dump: missing header");
  std::vector<std::vector<char>> seen(grids.size());
  for (std::size_t l = 0; l < grids.size(); ++l) seen[l].assign(grids[l].locations(), 0);
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto f = csv::split(lines[k]);
    if (static_cast<int>(f.size()) != 3 + num_classes) {
      throw ConfigError("prediction dump line " + std::to_string(k + 1) + ": expected " +
                        std::to_string(3 + num_classes) + " fields");
    }
    const int l = csv::to_int(f[0]);
    const int r = csv::to_int(f[1]);
    const int c = csv::to_int(f[2]);
    if (l < 0 || l >= static_cast<int>(grids.size()) || r < 0 || r >= grids[l].rows || c < 0 ||
        c >= grids[l].cols) {
      throw ConfigError("prediction dump line " + std::to_string(k + 1) + ": location outside the grid");
    }
    for (int cls = 0; cls < num_classes; ++cls) out[l].at(cls, r, c) = csv::to_double(f[3 + cls]);
    seen[l][r * grids[l].cols + c] = 1;
  }
  for (const auto& s : seen) {
    if (std::find(s.begin(), s.end(), 0) != s.end()) throw ConfigError("prediction dump: missing locations");
  }
  return out;
}

std::string conflict_curve_to_csv(const ConflictCurve& curve) {
  std::ostringstream os;
  os << "threshold,ratio,conflict_count,positive_count\n";
  for (std::size_t k = 0; k < curve.thresholds.size(); ++k) {
    os << csv::num(curve.thresholds[k]) << ','
       << (curve.defined() ? csv::num(curve.ratios[k]) : std::string("undefined")) << ','
       << curve.conflict_counts[k] << ',' << curve.positive_count << '\n';
  }
  return os.str();
}

ConflictCurve conflict_curve_from_csv(const std::string& text) {
  const auto lines = csv::data_lines(text);
  if (lines.empty() || lines.front() != "threshold,ratio,conflict_count,positive_count") {
    throw ConfigError("conflict curve CSV: unexpected header");
  }
  ConflictCurve c;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto f = csv::split(lines[k]);
    if (f.size() != 4) throw ConfigError("conflict curve CSV line " + std::to_string(k + 1) + ": expected 4 fields");
    c.thresholds.push_back(csv::to_double(f[0]));
    c.ratios.push_back(f[1] == "undefined" ? std::numeric_limits<double>::quiet_NaN() : csv::to_double(f[1]));
    c.conflict_counts.push_back(csv::to_int(f[2]));
    c.positive_count = csv::to_int(f[3]);
  }
  return c;
}

}  // namespace crosskd
