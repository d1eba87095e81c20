// Copyright 2026 The CrossKD Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "crosskd/assigners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "crosskd/csv.hpp"

namespace crosskd {

void GroundTruth::validate(int image_w, int image_h, int num_classes) const {
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& in = instances[i];
    const Box& b = in.box;
    if (!b.valid()) throw ContractViolation("gt " + std::to_string(i) + ": degenerate box");
    if (b.x1 < 0 || b.y1 < 0 || b.x2 > image_w || b.y2 > image_h)
      throw ContractViolation("gt " + std::to_string(i) + ": box outside image");
    if (in.class_id < 0 || in.class_id >= num_classes)
      throw ContractViolation("gt " + std::to_string(i) + ": class id out of range");
  }
}

int AssignmentResult::positive_count() const {
  int n = 0;
  for (const auto& l : levels) n += static_cast<int>(std::count(l.pos_mask.begin(), l.pos_mask.end(), 1));
  return n;
}

int AssignmentResult::location_count() const {
  int n = 0;
  for (const auto& l : levels) n += l.grid.locations();
  return n;
}

std::string to_string(AssignerKind k) {
  switch (k) {
    case AssignerKind::iou: return "iou";
    case AssignerKind::atss: return "atss";
    case AssignerKind::center: return "center";
  }
  return "?";
}

AssignerKind assigner_from_string(const std::string& s) {
  if (s == "iou") return AssignerKind::iou;
  if (s == "atss") return AssignerKind::atss;
  if (s == "center") return AssignerKind::center;
  throw ConfigError("unknown assigner '" + s + "' (expected iou, atss or center)");
}

namespace {

AssignmentResult empty_result(const std::vector<PointGrid>& grids, const GroundTruth& gts,
                              int num_classes) {
  AssignmentResult r;
  r.num_classes = num_classes;
  r.instances = gts.instances;
  for (const PointGrid& g : grids) {
    LevelAssignment l;
    l.grid = g;
    const auto n = static_cast<std::size_t>(g.locations());
    l.cls_target = Tensor(num_classes, g.rows, g.cols);
    l.reg_target.assign(n, {0.0, 0.0, 0.0, 0.0});
    l.pos_mask.assign(n, 0);
    l.ignore_mask.assign(n, 0);
    l.assigned_instance.assign(n, -1);
    l.quality.assign(n, 0.0);
    r.levels.push_back(std::move(l));
  }
  return r;
}

void mark_positive(AssignmentResult& r, int level, int row, int col, int inst) {
  LevelAssignment& l = r.levels[level];
  const int i = l.index(row, col);
  const Box& b = r.instances[inst].box;
  const double cx = l.grid.center_x(col);
  const double cy = l.grid.center_y(row);
  l.pos_mask[i] = 1;
  l.ignore_mask[i] = 0;
  l.assigned_instance[i] = inst;
  l.reg_target[i] = {cx - b.x1, cy - b.y1, b.x2 - cx, b.y2 - cy};
  l.quality[i] = 1.0;
  l.cls_target.at(r.instances[inst].class_id, row, col) = 1.0;
}

Box anchor_at(const PointGrid& g, int row, int col) {
  return square_at(g.center_x(col), g.center_y(row), anchor_side(g.stride));
}

}  // namespace

AssignmentResult assign_iou(const std::vector<PointGrid>& grids, const GroundTruth& gts,
                            int num_classes, double pos_thr, double neg_thr) {
  if (!(0.0 <= neg_thr && neg_thr <= pos_thr && pos_thr <= 1.0)) {
    throw ContractViolation("assign_iou: need 0 <= neg_thr <= pos_thr <= 1");
  }
  AssignmentResult r = empty_result(grids, gts, num_classes);
  if (gts.empty()) return r;
  for (std::size_t lvl = 0; lvl < grids.size(); ++lvl) {
    const PointGrid& g = grids[lvl];
    for (int row = 0; row < g.rows; ++row) {
      for (int col = 0; col < g.cols; ++col) {
        const Box anchor = anchor_at(g, row, col);
        double best = -1.0;
        int best_idx = -1;
        for (std::size_t k = 0; k < gts.instances.size(); ++k) {
          const double v = iou(anchor, gts.instances[k].box);
          if (v > best) {
            best = v;
            best_idx = static_cast<int>(k);
          }
        }
        if (best >= pos_thr) {
          mark_positive(r, static_cast<int>(lvl), row, col, best_idx);
        } else if (best >= neg_thr) {
          r.levels[lvl].ignore_mask[r.levels[lvl].index(row, col)] = 1;
        }
      }
    }
  }
  return r;
}

AssignmentResult assign_atss(const std::vector<PointGrid>& grids, const GroundTruth& gts,
                             int num_classes, int top_k) {
  if (top_k < 1) throw ContractViolation("assign_atss: top_k must be >= 1");
  AssignmentResult r = empty_result(grids, gts, num_classes);
  // best[level][loc] = (iou, instance) of the strongest claim so far
  std::vector<std::vector<std::pair<double, int>>> best(grids.size());
  for (std::size_t lvl = 0; lvl < grids.size(); ++lvl)
    best[lvl].assign(grids[lvl].locations(), {-1.0, -1});

  for (std::size_t k = 0; k < gts.instances.size(); ++k) {
    const Box& gt = gts.instances[k].box;
    struct Candidate {
      int level, row, col;
      double iou;
    };
    std::vector<Candidate> cands;
    for (std::size_t lvl = 0; lvl < grids.size(); ++lvl) {
      const PointGrid& g = grids[lvl];
      std::vector<std::pair<double, int>> dist;
      for (int row = 0; row < g.rows; ++row) {
        for (int col = 0; col < g.cols; ++col) {
          const double dx = g.center_x(col) - gt.center_x();
          const double dy = g.center_y(row) - gt.center_y();
          dist.emplace_back(dx * dx + dy * dy, row * g.cols + col);
        }
      }
      const int take = std::min<int>(top_k, static_cast<int>(dist.size()));
      std::partial_sort(dist.begin(), dist.begin() + take, dist.end());
      for (int t = 0; t < take; ++t) {
        const int row = dist[t].second / g.cols;
        const int col = dist[t].second % g.cols;
        cands.push_back({static_cast<int>(lvl), row, col, iou(anchor_at(g, row, col), gt)});
      }
    }
    double mean = 0.0;
    for (const auto& c : cands) mean += c.iou;
    mean /= static_cast<double>(cands.size());
    double var = 0.0;
    for (const auto& c : cands) var += (c.iou - mean) * (c.iou - mean);
    const double sd = cands.size() > 1 ? std::sqrt(var / static_cast<double>(cands.size() - 1)) : 0.0;
    const double thr = mean + sd;
    for (const auto& c : cands) {
      const PointGrid& g = grids[c.level];
      if (c.iou < thr || !gt.contains(g.center_x(c.col), g.center_y(c.row))) continue;
      auto& slot = best[c.level][c.row * g.cols + c.col];
      if (c.iou > slot.first) slot = {c.iou, static_cast<int>(k)};
    }
  }
  for (std::size_t lvl = 0; lvl < grids.size(); ++lvl) {
    const PointGrid& g = grids[lvl];
    for (int i = 0; i < g.locations(); ++i) {
      if (best[lvl][i].second >= 0)
        mark_positive(r, static_cast<int>(lvl), i / g.cols, i % g.cols, best[lvl][i].second);
    }
  }
  return r;
}

AssignmentResult assign_center(const std::vector<PointGrid>& grids, const GroundTruth& gts,
                               int num_classes, double radius_factor) {
  if (!(radius_factor > 0.0)) throw ContractViolation("assign_center: radius_factor must be > 0");
  AssignmentResult r = empty_result(grids, gts, num_classes);
  for (std::size_t lvl = 0; lvl < grids.size(); ++lvl) {
    const PointGrid& g = grids[lvl];
    const double radius = radius_factor * g.stride;
    for (int row = 0; row < g.rows; ++row) {
      for (int col = 0; col < g.cols; ++col) {
        const double x = g.center_x(col);
        const double y = g.center_y(row);
        int chosen = -1;
        double chosen_area = 0.0;
        for (std::size_t k = 0; k < gts.instances.size(); ++k) {
          const Box& b = gts.instances[k].box;
          if (std::abs(x - b.center_x()) > radius || std::abs(y - b.center_y()) > radius) continue;
          if (!b.contains(x, y)) continue;
          if (chosen < 0 || b.area() < chosen_area) {
            chosen = static_cast<int>(k);
            chosen_area = b.area();
          }
        }
        if (chosen >= 0) mark_positive(r, static_cast<int>(lvl), row, col, chosen);
      }
    }
  }
  return r;
}

AssignmentResult assign(const AssignerConfig& c, const std::vector<PointGrid>& grids,
                        const GroundTruth& gts, int num_classes) {
  switch (c.kind) {
    case AssignerKind::iou: return assign_iou(grids, gts, num_classes, c.pos_thr, c.neg_thr);
    case AssignerKind::atss: return assign_atss(grids, gts, num_classes, c.top_k);
    case AssignerKind::center: return assign_center(grids, gts, num_classes, c.radius_factor);
  }
  throw ConfigError("unknown assigner");
}

std::vector<std::vector<double>> quality_target(const AssignmentResult& a,
                                                const std::vector<std::vector<Box>>& decoded) {
  if (decoded.size() != a.levels.size()) throw ContractViolation("quality_target: level count mismatch");
  std::vector<std::vector<double>> q(a.levels.size());
  for (std::size_t lvl = 0; lvl < a.levels.size(); ++lvl) {
    const LevelAssignment& l = a.levels[lvl];
    if (static_cast<int>(decoded[lvl].size()) != l.grid.locations())
      throw ContractViolation("quality_target: box count mismatch");
    q[lvl].assign(l.grid.locations(), 0.0);
    for (int i = 0; i < l.grid.locations(); ++i) {
      if (!l.pos_mask[i]) continue;
      q[lvl][i] = iou(decoded[lvl][i], a.instances[l.assigned_instance[i]].box);
    }
  }
  return q;
}

void apply_quality(AssignmentResult& a, const std::vector<std::vector<double>>& quality) {
  for (std::size_t lvl = 0; lvl < a.levels.size(); ++lvl) {
    LevelAssignment& l = a.levels[lvl];
    for (int i = 0; i < l.grid.locations(); ++i) {
      if (!l.pos_mask[i]) continue;
      const int cls = a.instances[l.assigned_instance[i]].class_id;
      l.quality[i] = quality[lvl][i];
      l.cls_target.at(cls, i / l.grid.cols, i % l.grid.cols) = quality[lvl][i];
    }
  }
}

Box target_box(const LevelAssignment& l, int row, int col) {
  const auto& t = l.reg_target[l.index(row, col)];
  const double cx = l.grid.center_x(col);
  const double cy = l.grid.center_y(row);
  return {cx - t[0], cy - t[1], cx + t[2], cy + t[3]};
}

std::string assignment_to_csv(const AssignmentResult& a) {
  std::ostringstream out;
  out << "level,row,col,pos,class,l,t,r,b,quality\n";
  for (std::size_t lvl = 0; lvl < a.levels.size(); ++lvl) {
    const LevelAssignment& l = a.levels[lvl];
    for (int row = 0; row < l.grid.rows; ++row) {
      for (int col = 0; col < l.grid.cols; ++col) {
        const int i = l.index(row, col);
        const bool pos = l.pos_mask[i] != 0;
        const int cls = pos ? a.instances[l.assigned_instance[i]].class_id : -1;
        const auto& t = l.reg_target[i];
        out << lvl << ',' << row << ',' << col << ',' << (pos ? 1 : 0) << ',' << cls << ','
            << csv::num(t[0]) << ',' << csv::num(t[1]) << ',' << csv::num(t[2]) << ','
            << csv::num(t[3]) << ',' << csv::num(l.quality[i]) << '\n';
      }
    }
  }
  return out.str();
}

AssignmentResult assignment_from_csv(const std::string& text, const std::vector<PointGrid>& grids,
                                     int num_classes) {
  AssignmentResult r = empty_result(grids, GroundTruth{}, num_classes);
  const auto lines = csv::data_lines(text);
  if (lines.empty() || lines[0] != "level,row,col,pos,class,l,t,r,b,quality")
    throw ConfigError("assignment csv: missing or wrong header");
  for (std::size_t n = 1; n < lines.size(); ++n) {
    const auto f = csv::split(lines[n]);
    if (f.size() != 10) throw ConfigError("assignment csv: line " + std::to_string(n + 1) + " needs 10 fields");
    const int lvl = csv::to_int(f[0]);
    const int row = csv::to_int(f[1]);
    const int col = csv::to_int(f[2]);
    if (lvl < 0 || lvl >= static_cast<int>(grids.size()) || row < 0 || row >= grids[lvl].rows ||
        col < 0 || col >= grids[lvl].cols)
      throw ConfigError("assignment csv: location out of range on line " + std::to_string(n + 1));
    LevelAssignment& l = r.levels[lvl];
    const int i = l.index(row, col);
    if (csv::to_int(f[3]) != 0) {
      const int cls = csv::to_int(f[4]);
      if (cls < 0 || cls >= num_classes) throw ConfigError("assignment csv: class out of range");
      l.pos_mask[i] = 1;
      l.reg_target[i] = {csv::to_double(f[5]), csv::to_double(f[6]), csv::to_double(f[7]),
                         csv::to_double(f[8])};
      l.quality[i] = csv::to_double(f[9]);
      l.cls_target.at(cls, row, col) = l.quality[i];
      // Instances are not part of the schema; rebuild one per positive.
      r.instances.push_back({target_box(l, row, col), cls});
      l.assigned_instance[i] = static_cast<int>(r.instances.size()) - 1;
    }
  }
  return r;
}

}  // namespace crosskd
