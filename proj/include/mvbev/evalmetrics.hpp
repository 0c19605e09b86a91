#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "mvbev/error.hpp"
#include "mvbev/geometry.hpp"
#include "mvbev/parallel.hpp"
#include "mvbev/pseudolabel.hpp"
#include "mvbev/synthworld.hpp"
#include "mvbev/tinynet.hpp"

namespace mvbev {

/// Minimum-cost perfect assignment on a square cost matrix (row-major,
/// n x n) using the O(n^3) potentials formulation of the Hungarian method.
/// Returns assignment[row] = column.
inline std::vector<int> hungarian(const std::vector<double>& cost, int n) {
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1), v(static_cast<std::size_t>(n) + 1);
  std::vector<int> p(static_cast<std::size_t>(n) + 1), way(static_cast<std::size_t>(n) + 1);
  auto a = [&](int i, int j) { return cost[static_cast<std::size_t>(i - 1) * n + (j - 1)]; };
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) assignment[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return assignment;
}

struct MatchResult {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  std::vector<double> dist_scores;  // 1 - dist / r per true positive
};

inline double cell_distance(Cell a, Cell b) {
  return std::hypot(static_cast<double>(a.i - b.i), static_cast<double>(a.j - b.j));
}

/// Gated optimal matching: maximise the number of pairs within r_cells, then
/// minimise their total distance.
inline MatchResult match_frame(const DetectionSet& dets, std::span<const Cell> gts, double r_cells) {
  if (!(r_cells > 0)) throw InvalidArgument("gate radius must be positive");
  const int nd = static_cast<int>(dets.size()), ng = static_cast<int>(gts.size());
  const int n = std::max(nd, ng);
  // Any gated-out or padded pair costs more than every feasible total distance.
  const double big = 1.0 + r_cells * (n + 1);
  std::vector<double> cost(static_cast<std::size_t>(n) * n, big);
  for (int a = 0; a < nd; ++a)
    for (int b = 0; b < ng; ++b) {
      const double d = cell_distance(dets[static_cast<std::size_t>(a)].cell,
                                     gts[static_cast<std::size_t>(b)]);
      if (d <= r_cells) cost[static_cast<std::size_t>(a) * n + b] = d;
    }
  const auto assign = hungarian(cost, n);
  MatchResult m;
  for (int a = 0; a < nd; ++a) {
    const int b = assign[static_cast<std::size_t>(a)];
    if (b < 0 || b >= ng) continue;
    const double d =
        cell_distance(dets[static_cast<std::size_t>(a)].cell, gts[static_cast<std::size_t>(b)]);
    if (d > r_cells) continue;
    ++m.tp;
    m.dist_scores.push_back(1.0 - d / r_cells);
  }
  m.fp = nd - m.tp;
  m.fn = ng - m.tp;
  return m;
}

/// Percentages. MODA is reported raw and may be negative.
struct MetricsReport {
  double moda = 0.0;
  double modp = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  long tp = 0, fp = 0, fn = 0, gt = 0;
};

inline MetricsReport aggregate(std::span<const MatchResult> results) {
  MetricsReport r;
  double dist_sum = 0.0;
  for (const auto& m : results) {
    r.tp += m.tp;
    r.fp += m.fp;
    r.fn += m.fn;
    for (double s : m.dist_scores) dist_sum += s;
  }
  r.gt = r.tp + r.fn;
  if (r.gt == 0) throw NoGroundTruth("MODA and recall need at least one ground-truth position");
  r.moda = 100.0 * (1.0 - static_cast<double>(r.fp + r.fn) / static_cast<double>(r.gt));
  r.recall = 100.0 * static_cast<double>(r.tp) / static_cast<double>(r.gt);
  r.precision = r.tp + r.fp == 0 ? 100.0
                                 : 100.0 * static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
  r.modp = r.tp == 0 ? 0.0 : 100.0 * dist_sum / static_cast<double>(r.tp);
  return r;
}

/// The conventional τ grid {0.05, 0.10, ..., 0.95}.
inline std::vector<double> default_tau_set() {
  std::vector<double> taus;
  for (int k = 1; k <= 19; ++k) taus.push_back(k * 0.05);
  return taus;
}

struct SweepResult {
  double best_tau = 0.0;
  MetricsReport best;
  std::vector<std::pair<double, MetricsReport>> per_tau;
};

/// Occupancy maps for the given frames (clean, all views active).
inline std::vector<Tensor<float>> predict_maps(const NetConfig& cfg, const ParameterSet<float>& params,
                                               const Dataset& ds, std::span<const int> frame_ids,
                                               std::span<const ProjectionTable> tables) {
  std::vector<Tensor<float>> maps(frame_ids.size());
  parallel_for(static_cast<int>(frame_ids.size()), [&](int k) {
    const auto& f = ds.frames.at(static_cast<std::size_t>(frame_ids[static_cast<std::size_t>(k)]));
    maps[static_cast<std::size_t>(k)] =
        forward<float>(cfg, params, std::span<const Tensor<float>>(f.views), tables).occupancy;
  });
  return maps;
}

/// Evaluates precomputed maps against labels for each τ; best is the
/// highest MODA, ties resolved toward the smaller τ.
inline SweepResult sweep_tau_maps(std::span<const Tensor<float>> maps,
                                  std::span<const std::vector<Cell>> labels,
                                  PostprocessConfig post, std::span<const double> tau_set,
                                  double r_cells) {
  if (tau_set.empty()) throw InvalidArgument("empty tau set");
  if (maps.size() != labels.size()) throw ShapeMismatch("one label list per map required");
  SweepResult out;
  bool have_best = false;
  for (double tau : tau_set) {
    post.tau = tau;
    std::vector<MatchResult> results;
    results.reserve(maps.size());
    for (std::size_t k = 0; k < maps.size(); ++k)
      results.push_back(match_frame(postprocess(maps[k], post), labels[k], r_cells));
    const MetricsReport rep = aggregate(results);
    out.per_tau.emplace_back(tau, rep);
    if (!have_best || rep.moda > out.best.moda ||
        (rep.moda == out.best.moda && tau < out.best_tau)) {
      out.best_tau = tau;
      out.best = rep;
      have_best = true;
    }
  }
  return out;
}

inline SweepResult sweep_tau(const NetConfig& cfg, const ParameterSet<float>& params,
                             const Dataset& ds, std::span<const int> frame_ids,
                             std::span<const ProjectionTable> tables, PostprocessConfig post,
                             std::span<const double> tau_set, double r_cells) {
  const auto maps = predict_maps(cfg, params, ds, frame_ids, tables);
  std::vector<std::vector<Cell>> labels;
  for (int id : frame_ids) {
    const auto& f = ds.frames.at(static_cast<std::size_t>(id));
    if (!f.gt) throw NoGroundTruth("frame " + std::to_string(f.frame_id) + " has no labels");
    labels.push_back(*f.gt);
  }
  return sweep_tau_maps(maps, labels, post, tau_set, r_cells);
}

}  // namespace mvbev
