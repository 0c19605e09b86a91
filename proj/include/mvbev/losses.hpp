#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "mvbev/error.hpp"
#include "mvbev/geometry.hpp"
#include "mvbev/tensor.hpp"

namespace mvbev {

/// Unnormalised Gaussian bumps (peak 1) on an h x w plane, truncated at
/// Euclidean radius ceil(3 sigma) and combined by pointwise maximum.
template <typename Real>
Tensor<Real> gaussian_plane(int h, int w, std::span<const Cell> centers, double sigma) {
  if (!(sigma > 0)) throw InvalidArgument("sigma must be positive");
  Tensor<Real> out({h, w});
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (const Cell& c : centers) {
    for (int di = -radius; di <= radius; ++di) {
      const int i = c.i + di;
      if (i < 0 || i >= h) continue;
      for (int dj = -radius; dj <= radius; ++dj) {
        const int j = c.j + dj;
        if (j < 0 || j >= w) continue;
        const int d2 = di * di + dj * dj;
        if (d2 > radius * radius) continue;
        const Real g = static_cast<Real>(std::exp(-d2 * inv2s2));
        out.at(i, j) = std::max(out.at(i, j), g);
      }
    }
  }
  return out;
}

/// Soft BEV target G(y) for a list of occupied cells.
template <typename Real>
Tensor<Real> gaussian_soft_target(std::span<const Cell> positions, double sigma,
                                  const BevGrid& grid) {
  for (const Cell& c : positions)
    if (!grid.contains(c))
      throw PositionOutOfGrid("cell (" + std::to_string(c.i) + "," + std::to_string(c.j) +
                              ") outside " + std::to_string(grid.h_g) + "x" +
                              std::to_string(grid.w_g) + " grid");
  return gaussian_plane<Real>(grid.h_g, grid.w_g, positions, sigma);
}

template <typename Real>
struct LossResult {
  double loss = 0.0;
  Tensor<Real> grad;  // dL/d(prediction)
};

/// Sum of squared differences and its gradient 2 (pred - target).
template <typename Real>
LossResult<Real> mse_loss(const Tensor<Real>& target, const Tensor<Real>& pred) {
  if (target.shape() != pred.shape())
    throw ShapeMismatch("mse target " + shape_str(target.shape()) + " vs prediction " +
                        shape_str(pred.shape()));
  LossResult<Real> r{0.0, Tensor<Real>(pred.shape())};
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const Real diff = pred[k] - target[k];
    r.loss += static_cast<double>(diff) * static_cast<double>(diff);
    r.grad[k] = Real{2} * diff;
  }
  return r;
}

/// Feature-plane pixel of a world point, or nullopt when it is behind the
/// camera or falls outside the h_f x w_f plane after rounding.
inline std::optional<Cell> project_to_feature(const CameraCalibration& cam,
                                              const Eigen::Vector3d& p, int h_f, int w_f,
                                              double scale) {
  if (!(cam.to_camera(p).z() > 0)) return std::nullopt;
  const Eigen::Vector2d uv = project_world_to_image(cam, p);
  const double col = std::floor(uv.x() * scale + 0.5);
  const double row = std::floor(uv.y() * scale + 0.5);
  if (col < 0 || col >= w_f || row < 0 || row >= h_f) return std::nullopt;
  return Cell{static_cast<int>(row), static_cast<int>(col)};
}

template <typename Real>
struct PerspectiveLoss {
  double loss = 0.0;
  std::vector<Tensor<Real>> grads;             // per view, 2 x h_f x w_f; empty when skipped
  std::vector<Tensor<Real>> head_targets, foot_targets;
};

/// Head/foot supervision: (1/N) sum over views with aux maps of
/// MSE(head target, head map) + MSE(foot target, foot map). Targets are
/// Gaussian bumps at the projected foot (z=0) and head (z=ped_height).
template <typename Real>
PerspectiveLoss<Real> perspective_loss(const std::vector<Tensor<Real>>& aux_maps,
                                       std::span<const Cell> positions,
                                       const std::vector<CameraCalibration>& cameras,
                                       const BevGrid& grid, double sigma_px, double ped_height,
                                       double feature_scale) {
  if (aux_maps.size() != cameras.size())
    throw ShapeMismatch("one aux map (or empty slot) per camera required");
  PerspectiveLoss<Real> r;
  r.grads.resize(aux_maps.size());
  r.head_targets.resize(aux_maps.size());
  r.foot_targets.resize(aux_maps.size());
  int n_views = 0;
  for (const auto& m : aux_maps) n_views += !m.empty();
  if (n_views == 0) return r;
  const double inv_n = 1.0 / n_views;
  for (std::size_t v = 0; v < aux_maps.size(); ++v) {
    const auto& m = aux_maps[v];
    if (m.empty()) continue;
    if (m.rank() != 3 || m.dim(0) != 2) throw ShapeMismatch("aux map must be 2 x h_f x w_f");
    const int h_f = m.dim(1), w_f = m.dim(2);
    std::vector<Cell> heads, feet;
    for (const Cell& c : positions) {
      const Eigen::Vector2d xy = grid.cell_center(c.i, c.j);
      if (auto f = project_to_feature(cameras[v], {xy.x(), xy.y(), 0.0}, h_f, w_f, feature_scale))
        feet.push_back(*f);
      if (auto h = project_to_feature(cameras[v], {xy.x(), xy.y(), ped_height}, h_f, w_f,
                                      feature_scale))
        heads.push_back(*h);
    }
    r.head_targets[v] = gaussian_plane<Real>(h_f, w_f, heads, sigma_px);
    r.foot_targets[v] = gaussian_plane<Real>(h_f, w_f, feet, sigma_px);
    Tensor<Real> grad(m.shape());
    const std::size_t plane = static_cast<std::size_t>(h_f) * w_f;
    double sum = 0.0;
    for (int ch = 0; ch < 2; ++ch) {
      const auto& target = ch == 0 ? r.head_targets[v] : r.foot_targets[v];
      for (std::size_t k = 0; k < plane; ++k) {
        const Real diff = m[ch * plane + k] - target[k];
        sum += static_cast<double>(diff) * static_cast<double>(diff);
        grad[ch * plane + k] = static_cast<Real>(2.0 * inv_n) * diff;
      }
    }
    r.loss += inv_n * sum;
    r.grads[v] = std::move(grad);
  }
  return r;
}

}  // namespace mvbev
