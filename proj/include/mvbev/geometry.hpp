#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mvbev/error.hpp"
#include "mvbev/parallel.hpp"
#include "mvbev/tensor.hpp"

namespace mvbev {

/// Pinhole camera. R maps world to camera coordinates, the camera looks
/// along +Z, image u grows with camera +X and v with camera +Y.
class CameraCalibration {
 public:
  CameraCalibration(double fx, double fy, double cx, double cy, const Eigen::Matrix3d& R,
                    const Eigen::Vector3d& t, int image_w, int image_h)
      : fx_(fx), fy_(fy), cx_(cx), cy_(cy), R_(R), t_(t), image_w_(image_w), image_h_(image_h) {
    if (!(fx > 0) || !(fy > 0)) throw InvalidCalibration("focal lengths must be positive");
    if (image_w < 1 || image_h < 1) throw InvalidCalibration("image size must be positive");
    if (!R.allFinite() || !t.allFinite()) throw InvalidCalibration("non-finite extrinsics");
    const double ortho = (R * R.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho > 1e-9) throw InvalidCalibration("R is not orthonormal (|RR^T - I| = " +
                                               std::to_string(ortho) + ")");
    if (std::abs(R.determinant() - 1.0) > 1e-9)
      throw InvalidCalibration("R is not a proper rotation (det != 1)");
  }

  /// Camera at `position` looking at `target`, with world +Z as up.
  static CameraCalibration look_at(const Eigen::Vector3d& position, const Eigen::Vector3d& target,
                                   double fx, double fy, double cx, double cy, int image_w,
                                   int image_h) {
    Eigen::Vector3d forward = (target - position).normalized();
    Eigen::Vector3d up(0, 0, 1);
    if (forward.cross(up).norm() < 1e-9) up = Eigen::Vector3d(0, 1, 0);
    Eigen::Vector3d right = forward.cross(up).normalized();
    Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d R;
    R.row(0) = right.transpose();
    R.row(1) = down.transpose();
    R.row(2) = forward.transpose();
    return CameraCalibration(fx, fy, cx, cy, R, -R * position, image_w, image_h);
  }

  double fx() const { return fx_; }
  double fy() const { return fy_; }
  double cx() const { return cx_; }
  double cy() const { return cy_; }
  const Eigen::Matrix3d& R() const { return R_; }
  const Eigen::Vector3d& t() const { return t_; }
  int image_w() const { return image_w_; }
  int image_h() const { return image_h_; }

  Eigen::Matrix3d K() const {
    Eigen::Matrix3d K = Eigen::Matrix3d::Zero();
    K(0, 0) = fx_;
    K(1, 1) = fy_;
    K(0, 2) = cx_;
    K(1, 2) = cy_;
    K(2, 2) = 1.0;
    return K;
  }

  Eigen::Vector3d to_camera(const Eigen::Vector3d& p) const { return R_ * p + t_; }

  /// Camera center in world coordinates.
  Eigen::Vector3d center() const { return -R_.transpose() * t_; }

  friend bool operator==(const CameraCalibration&, const CameraCalibration&) = default;

 private:
  double fx_, fy_, cx_, cy_;
  Eigen::Matrix3d R_;
  Eigen::Vector3d t_;
  int image_w_, image_h_;
};

/// Integer BEV grid cell; i indexes world X, j indexes world Y.
struct Cell {
  int i = 0;
  int j = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct BevGrid {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 0.1;
  int h_g = 1;
  int w_g = 1;

  void validate() const {
    if (!(cell_size > 0)) throw InvalidArgument("grid cell_size must be positive");
    if (h_g < 1 || w_g < 1) throw InvalidArgument("grid shape must be at least 1x1");
  }
  bool contains(int i, int j) const { return i >= 0 && i < h_g && j >= 0 && j < w_g; }
  bool contains(Cell c) const { return contains(c.i, c.j); }
  /// World (X, Y) of a cell center; i indexes X, j indexes Y.
  Eigen::Vector2d cell_center(int i, int j) const {
    return {origin_x + (i + 0.5) * cell_size, origin_y + (j + 0.5) * cell_size};
  }
  int cells() const { return h_g * w_g; }
  friend bool operator==(const BevGrid&, const BevGrid&) = default;
};

inline Eigen::Vector2d project_world_to_image(const CameraCalibration& calib,
                                              const Eigen::Vector3d& p) {
  const Eigen::Vector3d pc = calib.to_camera(p);
  if (!(pc.z() > 0)) throw BehindCamera("camera-frame depth " + std::to_string(pc.z()));
  return {calib.fx() * pc.x() / pc.z() + calib.cx(), calib.fy() * pc.y() / pc.z() + calib.cy()};
}

/// Homography H = K [r1 r2 t] mapping ground points (X, Y, 1) to homogeneous
/// pixels. The third homogeneous coordinate equals the camera-frame depth.
inline Eigen::Matrix3d ground_homography(const CameraCalibration& calib) {
  Eigen::Matrix3d M;
  M.col(0) = calib.R().col(0);
  M.col(1) = calib.R().col(1);
  M.col(2) = calib.t();
  const Eigen::Matrix3d H = calib.K() * M;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H);
  const auto& s = svd.singularValues();
  if (!(s(2) > 0) || s(0) / s(2) > 1e12)
    throw DegenerateCamera("ground homography is singular (camera on the ground plane?)");
  return H;
}

/// Per-cell nearest feature pixel for one view, or OUT_OF_VIEW.
class ProjectionTable {
 public:
  static constexpr std::int32_t kOutOfView = -1;

  ProjectionTable(int h_g, int w_g, int h_f, int w_f)
      : h_g_(h_g), w_g_(w_g), h_f_(h_f), w_f_(w_f),
        entries_(static_cast<std::size_t>(h_g) * w_g, kOutOfView) {
    if (h_f < 1 || w_f < 1) throw InvalidArgument("feature shape must be at least 1x1");
    if (h_g < 1 || w_g < 1) throw InvalidArgument("grid shape must be at least 1x1");
  }

  int h_g() const { return h_g_; }
  int w_g() const { return w_g_; }
  int h_f() const { return h_f_; }
  int w_f() const { return w_f_; }

  /// Flat feature-pixel index row * w_f + col, or kOutOfView.
  std::int32_t entry(int i, int j) const { return entries_[static_cast<std::size_t>(i) * w_g_ + j]; }
  std::int32_t entry(std::size_t cell) const { return entries_[cell]; }
  void set(int i, int j, int row, int col) {
    if (row < 0 || row >= h_f_ || col < 0 || col >= w_f_)
      throw InvalidArgument("projection entry outside feature map");
    entries_[static_cast<std::size_t>(i) * w_g_ + j] = row * w_f_ + col;
  }
  void set_out_of_view(int i, int j) { entries_[static_cast<std::size_t>(i) * w_g_ + j] = kOutOfView; }
  const std::vector<std::int32_t>& entries() const { return entries_; }

  std::size_t in_view_count() const {
    std::size_t n = 0;
    for (auto e : entries_) n += e != kOutOfView;
    return n;
  }

  friend bool operator==(const ProjectionTable&, const ProjectionTable&) = default;

 private:
  int h_g_, w_g_, h_f_, w_f_;
  std::vector<std::int32_t> entries_;
};

inline ProjectionTable build_projection_table(const CameraCalibration& calib, const BevGrid& grid,
                                              int h_f, int w_f, double image_to_feature_scale) {
  grid.validate();
  if (!(image_to_feature_scale > 0)) throw InvalidArgument("feature scale must be positive");
  ProjectionTable table(grid.h_g, grid.w_g, h_f, w_f);
  const Eigen::Matrix3d H = ground_homography(calib);
  parallel_for(grid.h_g, [&](int i) {
    for (int j = 0; j < grid.w_g; ++j) {
      const Eigen::Vector2d c = grid.cell_center(i, j);
      const Eigen::Vector3d q = H * Eigen::Vector3d(c.x(), c.y(), 1.0);
      if (!(q.z() > 0)) continue;
      const double col = std::floor(q.x() / q.z() * image_to_feature_scale + 0.5);
      const double row = std::floor(q.y() / q.z() * image_to_feature_scale + 0.5);
      if (col < 0 || col >= w_f || row < 0 || row >= h_f) continue;
      table.set(i, j, static_cast<int>(row), static_cast<int>(col));
    }
  });
  return table;
}

/// Nearest-neighbour gather of a C x h_f x w_f feature map onto the grid.
template <typename Real>
Tensor<Real> warp_to_bev(const Tensor<Real>& feature, const ProjectionTable& table) {
  if (feature.rank() != 3 || feature.dim(1) != table.h_f() || feature.dim(2) != table.w_f())
    throw ShapeMismatch("feature " + shape_str(feature.shape()) + " vs table feature shape [" +
                        std::to_string(table.h_f()) + "," + std::to_string(table.w_f()) + "]");
  const int C = feature.dim(0);
  const std::size_t cells = static_cast<std::size_t>(table.h_g()) * table.w_g();
  const std::size_t plane = static_cast<std::size_t>(table.h_f()) * table.w_f();
  Tensor<Real> out({C, table.h_g(), table.w_g()});
  for (int c = 0; c < C; ++c) {
    const Real* src = feature.data() + c * plane;
    Real* dst = out.data() + c * cells;
    for (std::size_t k = 0; k < cells; ++k) {
      const auto e = table.entry(k);
      if (e != ProjectionTable::kOutOfView) dst[k] = src[e];
    }
  }
  return out;
}

/// Adjoint of warp_to_bev: scatter-add of grid gradients onto feature pixels.
template <typename Real>
Tensor<Real> warp_backward(const Tensor<Real>& grad_bev, const ProjectionTable& table) {
  if (grad_bev.rank() != 3 || grad_bev.dim(1) != table.h_g() || grad_bev.dim(2) != table.w_g())
    throw ShapeMismatch("BEV gradient " + shape_str(grad_bev.shape()) + " vs grid [" +
                        std::to_string(table.h_g()) + "," + std::to_string(table.w_g()) + "]");
  const int C = grad_bev.dim(0);
  const std::size_t cells = static_cast<std::size_t>(table.h_g()) * table.w_g();
  const std::size_t plane = static_cast<std::size_t>(table.h_f()) * table.w_f();
  Tensor<Real> out({C, table.h_f(), table.w_f()});
  for (int c = 0; c < C; ++c) {
    const Real* src = grad_bev.data() + c * cells;
    Real* dst = out.data() + c * plane;
    for (std::size_t k = 0; k < cells; ++k) {
      const auto e = table.entry(k);
      if (e != ProjectionTable::kOutOfView) dst[e] += src[k];
    }
  }
  return out;
}

}  // namespace mvbev
