#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvbev/conv.hpp"
#include "mvbev/error.hpp"
#include "mvbev/geometry.hpp"
#include "mvbev/io.hpp"
#include "mvbev/rng.hpp"
#include "mvbev/tensor.hpp"

namespace mvbev {

/// Detector shape. Extractor: two stride-2 3x3 convs (so features are a
/// quarter of the image resolution); BEV head: dilations 1, 2, 4 ending in a
/// single logistic channel; aux head: two 3x3 convs giving (head, foot).
struct NetConfig {
  int c_feat = 16;
  /// Initial bias of the logistic output layer. A low prior keeps the
  /// summed-MSE objective from saturating the logistic early in training.
  double output_bias_init = -3.0;
  static constexpr int kDownsample = 4;
  static constexpr std::array<int, 3> kHeadDilations{1, 2, 4};

  int feature_h(int image_h) const { return (image_h + kDownsample - 1) / kDownsample; }
  int feature_w(int image_w) const { return (image_w + kDownsample - 1) / kDownsample; }
  static constexpr double feature_scale() { return 1.0 / kDownsample; }
};

enum class Layer : int { Ext1 = 0, Ext2, Bev1, Bev2, Bev3, Aux1, Aux2, Count };
inline constexpr int kLayerCount = static_cast<int>(Layer::Count);

inline const char* layer_name(Layer l) {
  static constexpr const char* names[] = {"extractor.conv1", "extractor.conv2", "bev.conv1",
                                          "bev.conv2",       "bev.conv3",       "aux.conv1",
                                          "aux.conv2"};
  return names[static_cast<int>(l)];
}

inline ConvSpec layer_spec(const NetConfig& cfg, Layer l) {
  const int C = cfg.c_feat;
  switch (l) {
    case Layer::Ext1: return {kImageChannels, C, 2, 1};
    case Layer::Ext2: return {C, C, 2, 1};
    case Layer::Bev1: return {C, C, 1, NetConfig::kHeadDilations[0]};
    case Layer::Bev2: return {C, C, 1, NetConfig::kHeadDilations[1]};
    case Layer::Bev3: return {C, 1, 1, NetConfig::kHeadDilations[2]};
    case Layer::Aux1: return {C, C, 1, 1};
    case Layer::Aux2: return {C, 2, 1, 1};
    default: throw InvalidArgument("unknown layer");
  }
}

/// Learnable tensors, ordered (weight, bias) per layer. Used for the
/// student, the teacher, gradients and optimizer velocity alike.
template <typename Real>
struct ParameterSet {
  std::vector<std::string> names;
  std::vector<Tensor<Real>> tensors;

  std::size_t size() const { return tensors.size(); }
  const Tensor<Real>& weight(Layer l) const { return tensors[2 * static_cast<std::size_t>(l)]; }
  const Tensor<Real>& bias(Layer l) const { return tensors[2 * static_cast<std::size_t>(l) + 1]; }
  Tensor<Real>& weight(Layer l) { return tensors[2 * static_cast<std::size_t>(l)]; }
  Tensor<Real>& bias(Layer l) { return tensors[2 * static_cast<std::size_t>(l) + 1]; }

  const Tensor<Real>& find(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) return tensors[k];
    throw InvalidArgument("no parameter named " + name);
  }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  ParameterSet zeros_like() const {
    ParameterSet z;
    z.names = names;
    for (const auto& t : tensors) z.tensors.emplace_back(t.shape());
    return z;
  }

  bool same_layout(const ParameterSet& o) const {
    if (names != o.names || tensors.size() != o.tensors.size()) return false;
    for (std::size_t k = 0; k < tensors.size(); ++k)
      if (tensors[k].shape() != o.tensors[k].shape()) return false;
    return true;
  }

  bool all_finite() const {
    return std::all_of(tensors.begin(), tensors.end(), [](const auto& t) { return t.all_finite(); });
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> p;
    p.names = names;
    for (const auto& t : tensors) p.tensors.push_back(t.template cast<Other>());
    return p;
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

template <typename Real>
void require_same_layout(const ParameterSet<Real>& a, const ParameterSet<Real>& b, const char* what) {
  if (!a.same_layout(b)) throw ShapeMismatch(std::string(what) + ": parameter layouts differ");
}

/// Zero-initialised parameters laid out for `cfg`.
template <typename Real>
ParameterSet<Real> make_parameters(const NetConfig& cfg) {
  if (cfg.c_feat < 1) throw InvalidArgument("c_feat must be positive");
  ParameterSet<Real> p;
  for (int l = 0; l < kLayerCount; ++l) {
    const ConvSpec s = layer_spec(cfg, static_cast<Layer>(l));
    p.names.push_back(std::string(layer_name(static_cast<Layer>(l))) + ".weight");
    p.tensors.emplace_back(Shape{s.cout, s.cin, ConvSpec::kernel, ConvSpec::kernel});
    p.names.push_back(std::string(layer_name(static_cast<Layer>(l))) + ".bias");
    p.tensors.emplace_back(Shape{s.cout});
  }
  return p;
}

/// Kaiming-uniform (fan-in) weights; zero biases except the occupancy
/// output, which starts at cfg.output_bias_init.
template <typename Real>
ParameterSet<Real> init_parameters(const NetConfig& cfg, std::uint64_t seed) {
  ParameterSet<Real> p = make_parameters<Real>(cfg);
  Rng rng = derive_rng(seed, {0x1417});
  for (int l = 0; l < kLayerCount; ++l) {
    auto& w = p.weight(static_cast<Layer>(l));
    const double fan_in = static_cast<double>(w.dim(1)) * ConvSpec::kernel * ConvSpec::kernel;
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& v : w.vec()) v = static_cast<Real>(uniform(rng, -bound, bound));
  }
  p.bias(Layer::Bev3).fill(static_cast<Real>(cfg.output_bias_init));
  return p;
}

template <typename Real>
struct ForwardCache {
  ParameterSet<Real> params;
  std::vector<bool> active;
  std::vector<ProjectionTable> tables;
  std::vector<Tensor<Real>> input, ext1, features;  // per view; empty for inactive views
  std::vector<Tensor<Real>> aux_hidden, aux_out;
  Tensor<Real> bev_in, bev1, bev2, occupancy;
  int n_active = 0;
  bool with_aux = false;
};

template <typename Real>
struct ForwardResult {
  Tensor<Real> occupancy;            // h_g x w_g, logistic output
  std::vector<Tensor<Real>> aux;     // per view 2 x h_f x w_f (head, foot); empty if inactive
  ForwardCache<Real> cache;
};

namespace detail {

/// Sum of a handful of values in ascending order, so the result does not
/// depend on the order the views were supplied in.
template <typename Real>
Real canonical_sum(Real* vals, int n) {
  for (int a = 1; a < n; ++a)
    for (int b = a; b > 0 && vals[b] < vals[b - 1]; --b) std::swap(vals[b], vals[b - 1]);
  Real s{0};
  for (int a = 0; a < n; ++a) s += vals[a];
  return s;
}

template <typename Real>
Tensor<Real> sigmoid_output(Tensor<Real> z) {
  logistic_inplace(z);
  return z;
}

}  // namespace detail

/// Full detector pass. `active` may be empty (all views active).
template <typename Real>
ForwardResult<Real> forward(const NetConfig& cfg, const ParameterSet<Real>& params,
                            std::span<const Tensor<Real>> views,
                            std::span<const ProjectionTable> tables, std::vector<bool> active = {},
                            bool with_aux = false) {
  const std::size_t N = views.size();
  if (tables.size() != N) throw ShapeMismatch("one projection table per view required");
  if (active.empty()) active.assign(N, true);
  if (active.size() != N) throw ShapeMismatch("active-view mask length differs from view count");
  if (!params.same_layout(make_parameters<Real>(cfg)))
    throw ShapeMismatch("parameter set does not match the network configuration");
  const int n_active = static_cast<int>(std::count(active.begin(), active.end(), true));
  if (n_active == 0) throw NoActiveViews("at least one view must be active");
  const int h_g = tables[0].h_g(), w_g = tables[0].w_g();
  for (const auto& t : tables)
    if (t.h_g() != h_g || t.w_g() != w_g) throw ShapeMismatch("tables disagree on grid shape");

  ForwardResult<Real> r;
  auto& c = r.cache;
  c.params = params;
  c.active = active;
  c.tables.assign(tables.begin(), tables.end());
  c.n_active = n_active;
  c.with_aux = with_aux;
  c.input.resize(N);
  c.ext1.resize(N);
  c.features.resize(N);
  c.aux_hidden.resize(N);
  c.aux_out.resize(N);
  r.aux.resize(N);

  const int C = cfg.c_feat;
  const std::size_t cells = static_cast<std::size_t>(h_g) * w_g;
  std::vector<Tensor<Real>> bev(N);
  for (std::size_t v = 0; v < N; ++v) {
    if (!active[v]) continue;
    const auto& img = views[v];
    if (img.rank() != 3 || img.dim(0) != kImageChannels)
      throw ShapeMismatch("view image must be 3 x H x W, got " + shape_str(img.shape()));
    const ConvSpec s1 = layer_spec(cfg, Layer::Ext1), s2 = layer_spec(cfg, Layer::Ext2);
    c.input[v] = img;
    c.ext1[v] = conv2d_forward(s1, img, params.weight(Layer::Ext1), params.bias(Layer::Ext1));
    relu_inplace(c.ext1[v]);
    c.features[v] =
        conv2d_forward(s2, c.ext1[v], params.weight(Layer::Ext2), params.bias(Layer::Ext2));
    relu_inplace(c.features[v]);
    if (c.features[v].dim(1) != tables[v].h_f() || c.features[v].dim(2) != tables[v].w_f())
      throw ShapeMismatch("feature map " + shape_str(c.features[v].shape()) +
                          " does not match projection table of view " + std::to_string(v));
    bev[v] = warp_to_bev(c.features[v], tables[v]);
    if (with_aux) {
      c.aux_hidden[v] = conv2d_forward(layer_spec(cfg, Layer::Aux1), c.features[v],
                                       params.weight(Layer::Aux1), params.bias(Layer::Aux1));
      relu_inplace(c.aux_hidden[v]);
      c.aux_out[v] = detail::sigmoid_output(conv2d_forward(layer_spec(cfg, Layer::Aux2),
                                                           c.aux_hidden[v],
                                                           params.weight(Layer::Aux2),
                                                           params.bias(Layer::Aux2)));
      r.aux[v] = c.aux_out[v];
    }
  }

  c.bev_in = Tensor<Real>({C, h_g, w_g});
  std::vector<Real> vals(N);
  const Real denom = static_cast<Real>(n_active);
  for (std::size_t e = 0; e < static_cast<std::size_t>(C) * cells; ++e) {
    int n = 0;
    for (std::size_t v = 0; v < N; ++v)
      if (active[v]) vals[static_cast<std::size_t>(n++)] = bev[v][e];
    c.bev_in[e] = detail::canonical_sum(vals.data(), n) / denom;
  }

  c.bev1 = conv2d_forward(layer_spec(cfg, Layer::Bev1), c.bev_in, params.weight(Layer::Bev1),
                          params.bias(Layer::Bev1));
  relu_inplace(c.bev1);
  c.bev2 = conv2d_forward(layer_spec(cfg, Layer::Bev2), c.bev1, params.weight(Layer::Bev2),
                          params.bias(Layer::Bev2));
  relu_inplace(c.bev2);
  Tensor<Real> logits = conv2d_forward(layer_spec(cfg, Layer::Bev3), c.bev2,
                                       params.weight(Layer::Bev3), params.bias(Layer::Bev3));
  logistic_inplace(logits);
  r.occupancy = Tensor<Real>({h_g, w_g}, std::move(logits.vec()));
  c.occupancy = r.occupancy;
  return r;
}

/// Reverse pass. grad_output is dL/d(occupancy); aux_grads, when given,
/// holds dL/d(aux output) per view (empty tensors for views without a term).
template <typename Real>
ParameterSet<Real> backward(const NetConfig& cfg, const ForwardCache<Real>& c,
                            const Tensor<Real>& grad_output,
                            const std::vector<Tensor<Real>>* aux_grads = nullptr) {
  const std::size_t N = c.active.size();
  if (c.tables.size() != N || c.features.size() != N || !c.occupancy.size())
    throw CacheMismatch("forward cache is incomplete");
  if (!c.params.same_layout(make_parameters<Real>(cfg)))
    throw CacheMismatch("cache was produced with a different network configuration");
  if (grad_output.shape() != c.occupancy.shape())
    throw CacheMismatch("upstream gradient " + shape_str(grad_output.shape()) +
                        " does not match cached output " + shape_str(c.occupancy.shape()));
  if (aux_grads) {
    if (aux_grads->size() != N) throw CacheMismatch("aux gradient count differs from view count");
    for (std::size_t v = 0; v < N; ++v) {
      const auto& g = (*aux_grads)[v];
      if (g.empty()) continue;
      if (!c.with_aux || !c.active[v]) throw CacheMismatch("aux gradient for a view without aux output");
      if (g.shape() != c.aux_out[v].shape()) throw CacheMismatch("aux gradient shape mismatch");
    }
  }

  const auto& P = c.params;
  ParameterSet<Real> grads = P.zeros_like();
  const int h_g = c.occupancy.dim(0), w_g = c.occupancy.dim(1);

  Tensor<Real> g_logit({1, h_g, w_g});
  for (std::size_t k = 0; k < g_logit.size(); ++k) {
    const Real y = c.occupancy[k];
    g_logit[k] = grad_output[k] * y * (Real{1} - y);
  }
  Tensor<Real> g_bev2, g_bev1, g_in;
  conv2d_backward(layer_spec(cfg, Layer::Bev3), c.bev2, P.weight(Layer::Bev3), g_logit,
                  grads.weight(Layer::Bev3), grads.bias(Layer::Bev3), &g_bev2);
  relu_backward_inplace(g_bev2, c.bev2);
  conv2d_backward(layer_spec(cfg, Layer::Bev2), c.bev1, P.weight(Layer::Bev2), g_bev2,
                  grads.weight(Layer::Bev2), grads.bias(Layer::Bev2), &g_bev1);
  relu_backward_inplace(g_bev1, c.bev1);
  conv2d_backward(layer_spec(cfg, Layer::Bev1), c.bev_in, P.weight(Layer::Bev1), g_bev1,
                  grads.weight(Layer::Bev1), grads.bias(Layer::Bev1), &g_in);
  const Real inv = Real{1} / static_cast<Real>(c.n_active);
  for (auto& v : g_in.vec()) v *= inv;

  for (std::size_t v = 0; v < N; ++v) {
    if (!c.active[v]) continue;
    Tensor<Real> g_feat = warp_backward(g_in, c.tables[v]);
    if (aux_grads && !(*aux_grads)[v].empty()) {
      const auto& ga = (*aux_grads)[v];
      Tensor<Real> g_alogit(ga.shape());
      for (std::size_t k = 0; k < ga.size(); ++k) {
        const Real y = c.aux_out[v][k];
        g_alogit[k] = ga[k] * y * (Real{1} - y);
      }
      Tensor<Real> g_ah, g_feat_aux;
      conv2d_backward(layer_spec(cfg, Layer::Aux2), c.aux_hidden[v], P.weight(Layer::Aux2),
                      g_alogit, grads.weight(Layer::Aux2), grads.bias(Layer::Aux2), &g_ah);
      relu_backward_inplace(g_ah, c.aux_hidden[v]);
      conv2d_backward(layer_spec(cfg, Layer::Aux1), c.features[v], P.weight(Layer::Aux1), g_ah,
                      grads.weight(Layer::Aux1), grads.bias(Layer::Aux1), &g_feat_aux);
      for (std::size_t k = 0; k < g_feat.size(); ++k) g_feat[k] += g_feat_aux[k];
    }
    relu_backward_inplace(g_feat, c.features[v]);
    Tensor<Real> g_ext1;
    conv2d_backward(layer_spec(cfg, Layer::Ext2), c.ext1[v], P.weight(Layer::Ext2), g_feat,
                    grads.weight(Layer::Ext2), grads.bias(Layer::Ext2), &g_ext1);
    relu_backward_inplace(g_ext1, c.ext1[v]);
    conv2d_backward(layer_spec(cfg, Layer::Ext1), c.input[v], P.weight(Layer::Ext1), g_ext1,
                    grads.weight(Layer::Ext1), grads.bias(Layer::Ext1),
                    static_cast<Tensor<Real>*>(nullptr));
  }
  return grads;
}

/// One projection table per camera at this network's feature resolution.
inline std::vector<ProjectionTable> build_tables(const NetConfig& cfg,
                                                 const std::vector<CameraCalibration>& cameras,
                                                 const BevGrid& grid) {
  std::vector<ProjectionTable> tables;
  for (const auto& cam : cameras)
    tables.push_back(build_projection_table(cam, grid, cfg.feature_h(cam.image_h()),
                                            cfg.feature_w(cam.image_w()), NetConfig::feature_scale()));
  return tables;
}

// ---------------------------------------------------------------------------
// Checkpoints: "MVP1", u32 count, then per tensor u16 name length, name,
// u8 rank, u32 dims, float32 data (little-endian throughout).

inline std::vector<std::uint8_t> encode_checkpoint(const ParameterSet<float>& p) {
  std::vector<std::uint8_t> out{'M', 'V', 'P', '1'};
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.size()));
  for (std::size_t k = 0; k < p.size(); ++k) {
    const auto& name = p.names[k];
    if (name.size() > 0xffff) throw InvalidArgument("parameter name too long");
    io::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const auto& t = p.tensors[k];
    io::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape()) io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : t.vec()) io::put_le<float>(out, v);
  }
  return out;
}

inline ParameterSet<float> decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                                             const std::string& source) {
  io::ByteReader r(bytes, source);
  if (r.bytes(4) != "MVP1") r.fail("bad magic (expected MVP1)");
  const auto count = r.get<std::uint32_t>();
  ParameterSet<float> p;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = r.get<std::uint16_t>();
    p.names.push_back(r.bytes(len));
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) {
      const auto v = r.get<std::uint32_t>();
      if (v > (1u << 24)) r.fail("implausible tensor dimension");
      d = static_cast<int>(v);
    }
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = r.get<float>();
    p.tensors.emplace_back(shape, std::move(data));
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return p;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& p) {
  io::write_bytes(path, encode_checkpoint(p));
}

inline ParameterSet<float> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_bytes(path), path.string());
}

}  // namespace mvbev
