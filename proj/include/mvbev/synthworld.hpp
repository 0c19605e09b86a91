#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mvbev/error.hpp"
#include "mvbev/geometry.hpp"
#include "mvbev/io.hpp"
#include "mvbev/parallel.hpp"
#include "mvbev/rng.hpp"
#include "mvbev/tensor.hpp"

namespace mvbev {

struct SceneConfig {
  double area_x = 0.0;  // walkable area lower corner (world meters)
  double area_y = 0.0;
  double area_w = 4.0;
  double area_h = 4.0;
  int ped_count_min = 0;
  int ped_count_max = 6;
  double ped_radius = 0.3;
  double ped_height = 1.8;
  double min_separation = 0.5;

  void validate() const {
    if (!(ped_radius > 0) || !(ped_radius < min_separation))
      throw InvalidArgument("scene requires 0 < ped_radius < min_separation");
    if (ped_count_min < 0 || ped_count_max < ped_count_min)
      throw InvalidArgument("scene requires ped_count_max >= ped_count_min >= 0");
    if (!(area_w > 0) || !(area_h > 0)) throw InvalidArgument("scene area must be positive");
  }
};

struct DomainStyle {
  double bg_mean = 0.3;
  double bg_noise_std = 0.05;
  double ped_intensity_min = 0.7;
  double ped_intensity_max = 0.9;
  double gain = 1.0;
  double bias = 0.0;
  std::uint64_t texture_seed = 0;

  /// Per-channel multipliers in [0.95, 1.05], fixed by texture_seed.
  std::array<double, 3> channel_jitter() const {
    Rng rng = derive_rng(texture_seed, {0x7e47});
    std::array<double, 3> j{};
    for (auto& v : j) v = 1.0 + uniform(rng, -0.05, 0.05);
    return j;
  }
};

struct RigConfig {
  std::vector<CameraCalibration> cameras;
  int image_w = 0;
  int image_h = 0;

  int views() const { return static_cast<int>(cameras.size()); }
  void validate() const {
    if (cameras.empty()) throw InvalidArgument("rig needs at least one camera");
    for (const auto& c : cameras)
      if (c.image_w() != image_w || c.image_h() != image_h)
        throw InvalidArgument("all rig cameras must share the render resolution");
  }
};


struct FrameRecord {
  int frame_id = 0;
  std::vector<Tensor<float>> views;          // each C x image_h x image_w, values in [0,1]
  std::optional<std::vector<Cell>> gt;       // absent for unlabeled use

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

namespace raster {

using Point = Eigen::Vector2d;

/// True when pixel center (x, y) lies inside or on the convex polygon.
inline bool inside_convex(const std::vector<Point>& poly, double x, double y) {
  int sign = 0;
  const std::size_t n = poly.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Point& a = poly[k];
    const Point& b = poly[(k + 1) % n];
    const double cross = (b.x() - a.x()) * (y - a.y()) - (b.y() - a.y()) * (x - a.x());
    if (cross == 0) continue;
    const int s = cross > 0 ? 1 : -1;
    if (sign == 0)
      sign = s;
    else if (s != sign)
      return false;
  }
  return true;
}

/// Fills a convex polygon into every channel of a C x H x W image; pixel
/// (x, y) has its center at integer coordinates. Returns pixels written.
template <typename Real, typename Value>
std::size_t fill_convex(Tensor<Real>& image, const std::vector<Point>& poly, Value&& value_at) {
  const int H = image.dim(1), W = image.dim(2);
  double x0 = poly[0].x(), x1 = x0, y0 = poly[0].y(), y1 = y0;
  for (const auto& p : poly) {
    x0 = std::min(x0, p.x());
    x1 = std::max(x1, p.x());
    y0 = std::min(y0, p.y());
    y1 = std::max(y1, p.y());
  }
  const int ix0 = std::max(0, static_cast<int>(std::ceil(x0)));
  const int ix1 = std::min(W - 1, static_cast<int>(std::floor(x1)));
  const int iy0 = std::max(0, static_cast<int>(std::ceil(y0)));
  const int iy1 = std::min(H - 1, static_cast<int>(std::floor(y1)));
  std::size_t written = 0;
  for (int y = iy0; y <= iy1; ++y)
    for (int x = ix0; x <= ix1; ++x)
      if (inside_convex(poly, x, y)) {
        for (int c = 0; c < image.dim(0); ++c) image.at(c, y, x) = static_cast<Real>(value_at(c));
        ++written;
      }
  return written;
}

/// Projects a world polygon; nullopt when any vertex is behind the camera.
inline std::optional<std::vector<Point>> project_polygon(const CameraCalibration& calib,
                                                         const std::vector<Eigen::Vector3d>& world) {
  std::vector<Point> out;
  out.reserve(world.size());
  for (const auto& p : world) {
    if (!(calib.to_camera(p).z() > 1e-6)) return std::nullopt;
    out.push_back(project_world_to_image(calib, p));
  }
  return out;
}

}  // namespace raster

/// Ground cell of a world position: floor((X - origin_x) / cell, (Y - origin_y) / cell).
inline Cell quantize(const BevGrid& grid, double x, double y) {
  return {static_cast<int>(std::floor((x - grid.origin_x) / grid.cell_size)),
          static_cast<int>(std::floor((y - grid.origin_y) / grid.cell_size))};
}

namespace detail {

/// Quad spanned by a standing cylinder's silhouette: foot and head points
/// widened by the radius along the camera's horizontal axis.
inline std::vector<Eigen::Vector3d> pedestrian_quad(const CameraCalibration& calib, double x,
                                                    double y, double radius, double height) {
  Eigen::Vector3d right = calib.R().row(0).transpose();
  right.z() = 0;
  if (right.norm() < 1e-9) right = Eigen::Vector3d(1, 0, 0);
  right = right.normalized() * radius;
  const Eigen::Vector3d foot(x, y, 0), head(x, y, height);
  return {foot - right, foot + right, head + right, head - right};
}

}  // namespace detail

inline void check_grid_covers(const SceneConfig& scene, const BevGrid& grid) {
  const double gx1 = grid.origin_x + grid.h_g * grid.cell_size;
  const double gy1 = grid.origin_y + grid.w_g * grid.cell_size;
  if (scene.area_x < grid.origin_x || scene.area_y < grid.origin_y ||
      scene.area_x + scene.area_w > gx1 || scene.area_y + scene.area_h > gy1)
    throw GridTooSmall("scene area exceeds grid extent");
}

/// Draws pedestrian positions with rejection sampling (at most 1000 retries
/// per pedestrian; on exhaustion the frame keeps the pedestrians placed so far).
inline std::vector<Eigen::Vector2d> sample_positions(Rng& rng, const SceneConfig& scene) {
  const int target = uniform_int(rng, scene.ped_count_min, scene.ped_count_max);
  std::vector<Eigen::Vector2d> placed;
  for (int p = 0; p < target; ++p) {
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      Eigen::Vector2d c(scene.area_x + uniform(rng, 0.0, scene.area_w),
                        scene.area_y + uniform(rng, 0.0, scene.area_h));
      ok = std::all_of(placed.begin(), placed.end(), [&](const Eigen::Vector2d& q) {
        return (q - c).norm() >= scene.min_separation;
      });
      if (ok) placed.push_back(c);
    }
    if (!ok) break;
  }
  return placed;
}

inline FrameRecord sample_frame(Rng& rng, const SceneConfig& scene, const RigConfig& rig,
                                const DomainStyle& style, const BevGrid& grid, int frame_id = 0) {
  scene.validate();
  rig.validate();
  grid.validate();
  check_grid_covers(scene, grid);

  const auto positions = sample_positions(rng, scene);
  std::vector<double> intensity(positions.size());
  for (auto& v : intensity) v = uniform(rng, style.ped_intensity_min, style.ped_intensity_max);

  FrameRecord frame;
  frame.frame_id = frame_id;
  const auto jitter = style.channel_jitter();
  for (const auto& calib : rig.cameras) {
    Tensor<float> gray({1, rig.image_h, rig.image_w});
    std::normal_distribution<double> noise(0.0, style.bg_noise_std);
    for (auto& v : gray.vec())
      v = static_cast<float>(style.bg_mean + (style.bg_noise_std > 0 ? noise(rng) : 0.0));

    // Painter's order: far to near by camera depth of the foot point.
    std::vector<std::size_t> order(positions.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> depth(positions.size());
    for (std::size_t k = 0; k < positions.size(); ++k)
      depth[k] = calib.to_camera({positions[k].x(), positions[k].y(), 0}).z();
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return depth[a] > depth[b]; });
    for (auto k : order) {
      auto quad = raster::project_polygon(
          calib, detail::pedestrian_quad(calib, positions[k].x(), positions[k].y(),
                                         scene.ped_radius, scene.ped_height));
      if (quad) raster::fill_convex(gray, *quad, [&](int) { return intensity[k]; });
    }

    Tensor<float> image({kImageChannels, rig.image_h, rig.image_w});
    const std::size_t plane = static_cast<std::size_t>(rig.image_h) * rig.image_w;
    for (int c = 0; c < kImageChannels; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = style.gain * gray[p] * jitter[static_cast<std::size_t>(c)] + style.bias;
        image[c * plane + p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    frame.views.push_back(std::move(image));
  }

  std::vector<Cell> cells;
  for (const auto& p : positions) cells.push_back(quantize(grid, p.x(), p.y()));
  frame.gt = std::move(cells);
  return frame;
}

// ---------------------------------------------------------------------------
// Dataset store

struct Dataset {
  RigConfig rig;
  BevGrid grid;
  std::uint64_t seed = 0;
  std::vector<FrameRecord> frames;  // ordered by frame_id
  std::vector<int> train;           // indices into frames
  std::vector<int> test;

  std::size_t size() const { return frames.size(); }
  auto begin() const { return frames.begin(); }
  auto end() const { return frames.end(); }
  bool labeled() const {
    return !frames.empty() && std::all_of(frames.begin(), frames.end(),
                                          [](const FrameRecord& f) { return f.gt.has_value(); });
  }
};

struct DatasetManifest {
  int n_frames = 0;
  int n_views = 0;
  std::vector<int> train;
  std::vector<int> test;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string view_file_name(int frame_id, int view) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "f%06d_v%d.mvf", frame_id, view);
  return buf;
}

inline io::json rig_to_json(const RigConfig& rig) {
  io::json cams = io::json::array();
  for (const auto& c : rig.cameras) cams.push_back(io::calibration_to_json(c));
  return {{"image_w", rig.image_w}, {"image_h", rig.image_h}, {"cameras", cams}};
}

inline RigConfig rig_from_json(const io::json& j) {
  RigConfig rig;
  rig.image_w = j.at("image_w").get<int>();
  rig.image_h = j.at("image_h").get<int>();
  for (const auto& c : j.at("cameras")) rig.cameras.push_back(io::calibration_from_json(c));
  rig.validate();
  return rig;
}

}  // namespace detail

inline void write_rig(const std::filesystem::path& path, const RigConfig& rig) {
  io::write_text(path, detail::rig_to_json(rig).dump(2) + "\n");
}

/// First 90% of frames train, last 10% test.
inline std::pair<std::vector<int>, std::vector<int>> split_train_test(int n_frames) {
  const int n_train = n_frames * 9 / 10;
  std::vector<int> train, test;
  for (int k = 0; k < n_frames; ++k) (k < n_train ? train : test).push_back(k);
  return {train, test};
}

/// Writes frames, labels, calibration, grid and manifest under out_dir.
/// Frame k uses the RNG stream derive_seed(seed, k).
inline DatasetManifest generate_dataset(const SceneConfig& scene, const RigConfig& rig,
                                        const DomainStyle& style, const BevGrid& grid,
                                        std::uint64_t seed, int n_frames,
                                        const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (n_frames < 0) throw InvalidArgument("n_frames must be non-negative");
  scene.validate();
  rig.validate();
  check_grid_covers(scene, grid);
  std::error_code ec;
  fs::create_directories(out_dir / "views", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "views").string() + ": " + ec.message());

  std::vector<std::vector<Cell>> labels(static_cast<std::size_t>(n_frames));
  parallel_for(n_frames, [&](int k) {
    Rng rng = derive_rng(seed, {static_cast<std::uint64_t>(k)});
    FrameRecord f = sample_frame(rng, scene, rig, style, grid, k);
    for (int v = 0; v < rig.views(); ++v)
      io::write_mvf(out_dir / "views" / detail::view_file_name(k, v),
                    f.views[static_cast<std::size_t>(v)]);
    labels[static_cast<std::size_t>(k)] = *f.gt;
  });

  std::ostringstream jl;
  for (int k = 0; k < n_frames; ++k)
    jl << io::json{{"frame", k}, {"cells", io::cells_to_json(labels[static_cast<std::size_t>(k)])}}
              .dump()
       << "\n";
  io::write_text(out_dir / "labels.jsonl", jl.str());
  write_rig(out_dir / "rig.json", rig);
  io::write_text(out_dir / "grid.json", io::grid_to_json(grid).dump(2) + "\n");

  DatasetManifest m;
  m.n_frames = n_frames;
  m.n_views = rig.views();
  std::tie(m.train, m.test) = split_train_test(n_frames);
  m.seed = seed;
  io::json mj{{"format", "mvbev-dataset-1"},
              {"n_frames", m.n_frames},
              {"n_views", m.n_views},
              {"n_train", m.train.size()},
              {"n_test", m.test.size()},
              {"train", m.train},
              {"test", m.test},
              {"rig", "rig.json"},
              {"grid", "grid.json"},
              {"labels", "labels.jsonl"},
              {"views_dir", "views"},
              {"seed", seed}};
  io::write_text(out_dir / "manifest.json", mj.dump(2) + "\n");
  return m;
}

/// Loads a dataset directory. Labels are attached only when present in
/// labels.jsonl and `with_labels` is set.
inline Dataset load_dataset(const std::filesystem::path& dir, bool with_labels = true) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw CorruptDataset(manifest_path.string() + ": missing manifest");
  const io::json m = io::read_json(manifest_path);

  Dataset ds;
  int n_frames = 0;
  fs::path labels_path;
  try {
    n_frames = m.at("n_frames").get<int>();
    ds.train = m.at("train").get<std::vector<int>>();
    ds.test = m.at("test").get<std::vector<int>>();
    ds.seed = m.at("seed").get<std::uint64_t>();
    labels_path = dir / m.at("labels").get<std::string>();
    const fs::path rig_path = dir / m.at("rig").get<std::string>();
    try {
      ds.rig = detail::rig_from_json(io::read_json(rig_path));
    } catch (const CorruptDataset&) {
      throw;
    } catch (const std::exception& e) {
      throw CorruptDataset(rig_path.string() + ": " + e.what());
    }
    const fs::path grid_path = dir / m.at("grid").get<std::string>();
    try {
      ds.grid = io::grid_from_json(io::read_json(grid_path));
    } catch (const CorruptDataset&) {
      throw;
    } catch (const std::exception& e) {
      throw CorruptDataset(grid_path.string() + ": " + e.what());
    }
  } catch (const io::json::exception& e) {
    throw CorruptDataset(manifest_path.string() + ": " + e.what());
  }
  if (n_frames < 0 || ds.train.size() + ds.test.size() != static_cast<std::size_t>(n_frames))
    throw CorruptDataset(manifest_path.string() + ": split does not cover n_frames");

  std::vector<std::optional<std::vector<Cell>>> labels(static_cast<std::size_t>(n_frames));
  if (with_labels && fs::exists(labels_path)) {
    std::istringstream in(io::read_text(labels_path));
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        const auto j = io::json::parse(line);
        const int id = j.at("frame").get<int>();
        if (id < 0 || id >= n_frames) throw CorruptDataset("frame id out of range");
        std::vector<Cell> cells;
        for (const auto& c : j.at("cells")) {
          Cell cell{c.at(0).get<int>(), c.at(1).get<int>()};
          if (!ds.grid.contains(cell)) throw CorruptDataset("label cell outside grid");
          cells.push_back(cell);
        }
        labels[static_cast<std::size_t>(id)] = std::move(cells);
      } catch (const std::exception& e) {
        throw CorruptDataset(labels_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  ds.frames.resize(static_cast<std::size_t>(n_frames));
  parallel_for(n_frames, [&](int k) {
    FrameRecord& f = ds.frames[static_cast<std::size_t>(k)];
    f.frame_id = k;
    for (int v = 0; v < ds.rig.views(); ++v) {
      const fs::path p = dir / "views" / detail::view_file_name(k, v);
      Tensor<float> img;
      try {
        img = io::read_mvf(p);
      } catch (const IoError& e) {
        throw CorruptDataset(e.what());
      }
      if (img.shape() != Shape{kImageChannels, ds.rig.image_h, ds.rig.image_w})
        throw CorruptDataset(p.string() + ": unexpected image shape " + shape_str(img.shape()));
      f.views.push_back(std::move(img));
    }
    f.gt = labels[static_cast<std::size_t>(k)];
  });
  return ds;
}

}  // namespace mvbev
