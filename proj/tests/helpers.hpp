#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "mvbev/geometry.hpp"
#include "mvbev/synthworld.hpp"

namespace testutil {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = fs::temp_directory_path() / ("mvbev_" + tag + "_" + std::to_string(rd()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

/// Camera `height` meters above (x, y) looking straight down.
inline mvbev::CameraCalibration overhead(double x, double y, double height, double f, int w, int h) {
  return mvbev::CameraCalibration::look_at({x, y, height}, {x, y, 0}, f, f, w / 2.0, h / 2.0, w, h);
}

/// Small four-camera ring around a 3 m x 3 m area on a 30 x 30 grid.
struct SmallWorld {
  mvbev::BevGrid grid{0.0, 0.0, 0.1, 30, 30};
  mvbev::SceneConfig scene;
  mvbev::RigConfig rig;
  mvbev::DomainStyle style;

  SmallWorld() {
    scene.area_x = 0.3;
    scene.area_y = 0.3;
    scene.area_w = 2.4;
    scene.area_h = 2.4;
    scene.ped_count_min = 1;
    scene.ped_count_max = 4;
    rig.image_w = 48;
    rig.image_h = 32;
    for (int k = 0; k < 4; ++k) {
      const double a = (45.0 + 90.0 * k) * 3.14159265358979 / 180.0;
      rig.cameras.push_back(mvbev::CameraCalibration::look_at(
          {1.5 + 4.0 * std::cos(a), 1.5 + 4.0 * std::sin(a), 3.0}, {1.5, 1.5, 0.0}, 30, 30, 24, 16,
          48, 32));
    }
  }
};

}  // namespace testutil
