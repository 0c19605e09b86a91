#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "mvbev/error.hpp"
#include "mvbev/geometry.hpp"
#include "mvbev/io.hpp"
#include "mvbev/tensor.hpp"

namespace mvbev {

struct Detection {
  Cell cell;
  double score = 0.0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

using DetectionSet = std::vector<Detection>;

enum class PostprocessMethod { Vanilla, LocalMax };

inline const char* method_name(PostprocessMethod m) {
  return m == PostprocessMethod::Vanilla ? "vanilla" : "local_max";
}

inline PostprocessMethod parse_method(const std::string& s) {
  if (s == "vanilla") return PostprocessMethod::Vanilla;
  if (s == "local_max") return PostprocessMethod::LocalMax;
  throw InvalidArgument("unknown post-processing method '" + s + "'");
}

struct PostprocessConfig {
  PostprocessMethod method = PostprocessMethod::LocalMax;
  double tau = 0.3;
  double d_cells = 5.0;
  int k_d = 3;
};

namespace detail {

// Descending score, ties by ascending (i, j).
inline void sort_candidates(DetectionSet& c) {
  std::sort(c.begin(), c.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.cell < b.cell;
  });
}

template <typename Real>
void require_map(const Tensor<Real>& map) {
  if (map.rank() != 2) throw ShapeMismatch("occupancy map must be 2-D, got " + shape_str(map.shape()));
}

}  // namespace detail

/// Threshold at tau, then greedy suppression of everything within Euclidean
/// distance d_cells of each emitted detection.
template <typename Real>
DetectionSet vanilla_nms(const Tensor<Real>& map, double tau, double d_cells) {
  detail::require_map(map);
  const int H = map.dim(0), W = map.dim(1);
  DetectionSet cand;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      if (map.at(i, j) > tau) cand.push_back({{i, j}, static_cast<double>(map.at(i, j))});
  detail::sort_candidates(cand);

  const int r = static_cast<int>(std::floor(d_cells));
  const double d2 = d_cells * d_cells;
  std::vector<char> suppressed(static_cast<std::size_t>(H) * W, 0);
  DetectionSet out;
  for (const auto& c : cand) {
    if (suppressed[static_cast<std::size_t>(c.cell.i) * W + c.cell.j]) continue;
    out.push_back(c);
    for (int di = -r; di <= r; ++di) {
      const int i = c.cell.i + di;
      if (i < 0 || i >= H) continue;
      for (int dj = -r; dj <= r; ++dj) {
        const int j = c.cell.j + dj;
        if (j < 0 || j >= W || di * di + dj * dj > d2) continue;
        suppressed[static_cast<std::size_t>(i) * W + j] = 1;
      }
    }
  }
  return out;
}

/// Cells above tau that are >= every value in their clipped
/// (2 k_d + 1)^2 neighbourhood, in sorted candidate order.
template <typename Real>
DetectionSet local_max_candidates(const Tensor<Real>& map, double tau, int k_d) {
  detail::require_map(map);
  if (k_d < 1) throw InvalidArgument("k_d must be at least 1");
  const int H = map.dim(0), W = map.dim(1);
  DetectionSet cand;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      const Real v = map.at(i, j);
      if (!(v > tau)) continue;
      bool is_max = true;
      for (int k = std::max(0, i - k_d); k <= std::min(H - 1, i + k_d) && is_max; ++k)
        for (int l = std::max(0, j - k_d); l <= std::min(W - 1, j + k_d); ++l)
          if (map.at(k, l) > v) {
            is_max = false;
            break;
          }
      if (is_max) cand.push_back({{i, j}, static_cast<double>(v)});
    }
  detail::sort_candidates(cand);
  return cand;
}

/// Local-max pseudo-labelling with deterministic plateau resolution: later
/// candidates within Chebyshev distance k_d of an emitted one are dropped.
template <typename Real>
DetectionSet local_max(const Tensor<Real>& map, double tau, int k_d) {
  const DetectionSet cand = local_max_candidates(map, tau, k_d);
  const int H = map.dim(0), W = map.dim(1);
  std::vector<char> suppressed(static_cast<std::size_t>(H) * W, 0);
  DetectionSet out;
  for (const auto& c : cand) {
    if (suppressed[static_cast<std::size_t>(c.cell.i) * W + c.cell.j]) continue;
    out.push_back(c);
    for (int i = std::max(0, c.cell.i - k_d); i <= std::min(H - 1, c.cell.i + k_d); ++i)
      for (int j = std::max(0, c.cell.j - k_d); j <= std::min(W - 1, c.cell.j + k_d); ++j)
        suppressed[static_cast<std::size_t>(i) * W + j] = 1;
  }
  return out;
}

template <typename Real>
DetectionSet postprocess(const Tensor<Real>& map, const PostprocessConfig& cfg) {
  return cfg.method == PostprocessMethod::Vanilla ? vanilla_nms(map, cfg.tau, cfg.d_cells)
                                                  : local_max(map, cfg.tau, cfg.k_d);
}

inline std::vector<Cell> to_pseudo_label(const DetectionSet& dets) {
  std::vector<Cell> cells;
  cells.reserve(dets.size());
  for (const auto& d : dets) cells.push_back(d.cell);
  return cells;
}

/// JSON lines {"i":..,"j":..,"score":..} in emission order.
inline std::string detections_to_jsonl(const DetectionSet& dets) {
  std::ostringstream os;
  for (const auto& d : dets)
    os << io::json{{"i", d.cell.i}, {"j", d.cell.j}, {"score", d.score}}.dump() << "\n";
  return os.str();
}

inline DetectionSet detections_from_jsonl(const std::string& text) {
  DetectionSet out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = io::json::parse(line);
      out.push_back({{j.at("i").get<int>(), j.at("j").get<int>()}, j.at("score").get<double>()});
    } catch (const io::json::exception& e) {
      throw CorruptDataset(std::string("detection line: ") + e.what());
    }
  }
  return out;
}

}  // namespace mvbev
