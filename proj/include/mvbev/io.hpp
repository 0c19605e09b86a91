#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mvbev/error.hpp"
#include "mvbev/geometry.hpp"
#include "mvbev/tensor.hpp"

namespace mvbev::io {

namespace fs = std::filesystem;
using nlohmann::json;

// Little-endian primitive encoding.

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

/// Cursor over a byte buffer; throws CorruptDataset naming `source` on underrun.
class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& buf, std::string source)
      : buf_(buf), source_(std::move(source)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  [[noreturn]] void fail(const std::string& why) const { throw CorruptDataset(source_ + ": " + why); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) fail("truncated file");
  }
  const std::vector<std::uint8_t>& buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw CorruptDataset(path.string() + ": " + e.what());
  }
}

// MVF1 view image: "MVF1", u32 C, H, W, then C*H*W float32, all little-endian.

inline std::vector<std::uint8_t> encode_mvf(const Tensor<float>& image) {
  if (image.rank() != 3) throw ShapeMismatch("MVF1 expects a C x H x W tensor");
  std::vector<std::uint8_t> out{'M', 'V', 'F', '1'};
  out.reserve(16 + image.size() * 4);
  for (int d = 0; d < 3; ++d) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(image.dim(d)));
  for (float v : image.vec()) put_le<float>(out, v);
  return out;
}

inline Tensor<float> decode_mvf(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.bytes(4) != "MVF1") r.fail("bad magic (expected MVF1)");
  Shape shape(3);
  for (auto& d : shape) {
    auto v = r.get<std::uint32_t>();
    if (v > (1u << 20)) r.fail("implausible dimension");
    d = static_cast<int>(v);
  }
  std::vector<float> data(shape_numel(shape));
  for (auto& v : data) v = r.get<float>();
  if (!r.at_end()) r.fail("trailing bytes");
  return Tensor<float>(shape, std::move(data));
}

inline void write_mvf(const fs::path& path, const Tensor<float>& image) {
  write_bytes(path, encode_mvf(image));
}
inline Tensor<float> read_mvf(const fs::path& path) {
  return decode_mvf(read_bytes(path), path.string());
}

// Calibration / grid JSON.

inline json calibration_to_json(const CameraCalibration& c) {
  json R = json::array(), t = json::array();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) R.push_back(c.R()(r, k));
  for (int k = 0; k < 3; ++k) t.push_back(c.t()(k));
  return {{"fx", c.fx()},           {"fy", c.fy()},           {"cx", c.cx()}, {"cy", c.cy()},
          {"image_w", c.image_w()}, {"image_h", c.image_h()}, {"R", R},       {"t", t}};
}

inline CameraCalibration calibration_from_json(const json& j) {
  try {
    const auto R9 = j.at("R").get<std::vector<double>>();
    const auto t3 = j.at("t").get<std::vector<double>>();
    if (R9.size() != 9 || t3.size() != 3)
      throw InvalidCalibration("R needs 9 numbers and t needs 3");
    Eigen::Matrix3d R;
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) R(r, k) = R9[static_cast<std::size_t>(r * 3 + k)];
    return CameraCalibration(j.at("fx").get<double>(), j.at("fy").get<double>(),
                             j.at("cx").get<double>(), j.at("cy").get<double>(), R,
                             Eigen::Vector3d(t3[0], t3[1], t3[2]), j.at("image_w").get<int>(),
                             j.at("image_h").get<int>());
  } catch (const json::exception& e) {
    throw InvalidCalibration(std::string("malformed calibration: ") + e.what());
  }
}

inline json grid_to_json(const BevGrid& g) {
  return {{"origin_x", g.origin_x}, {"origin_y", g.origin_y}, {"cell_size", g.cell_size},
          {"h_g", g.h_g},           {"w_g", g.w_g}};
}

inline BevGrid grid_from_json(const json& j) {
  try {
    BevGrid g{j.at("origin_x").get<double>(), j.at("origin_y").get<double>(),
              j.at("cell_size").get<double>(), j.at("h_g").get<int>(), j.at("w_g").get<int>()};
    g.validate();
    return g;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed grid: ") + e.what());
  }
}

inline json cells_to_json(const std::vector<Cell>& cells) {
  json a = json::array();
  for (const auto& c : cells) a.push_back({c.i, c.j});
  return a;
}

}  // namespace mvbev::io
