#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "mvbev/losses.hpp"
#include "mvbev/optim.hpp"
#include "mvbev/tinynet.hpp"

using namespace mvbev;

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Two 8x8 cameras over a 4 x 6 grid of half-meter cells.
struct Tiny {
  NetConfig net;
  BevGrid grid{0.0, 0.0, 0.5, 4, 6};
  std::vector<CameraCalibration> cams{
      CameraCalibration::look_at({1, -2, 2}, {1, 1.5, 0}, 6, 6, 4, 4, 8, 8),
      CameraCalibration::look_at({-2, 1.5, 2.5}, {1, 1.5, 0}, 6, 6, 4, 4, 8, 8)};
  std::vector<ProjectionTable> tables;
  std::vector<Tensor<double>> views;
  ParameterSet<double> params;

  explicit Tiny(std::uint64_t seed = 1) {
    net.c_feat = 3;
    tables = build_tables(net, cams, grid);
    Rng rng = derive_rng(seed, {0});
    for (int v = 0; v < 2; ++v) {
      Tensor<double> im({3, 8, 8});
      for (auto& x : im.vec()) x = uniform(rng, 0.0, 1.0);
      views.push_back(im);
    }
    params = init_parameters<double>(net, seed);
    for (auto& t : params.tensors)
      for (auto& x : t.vec()) x += uniform(rng, -0.1, 0.1);
  }

  ForwardResult<double> run(const ParameterSet<double>& p, bool aux = false) const {
    return forward<double>(net, p, std::span<const Tensor<double>>(views), tables, {}, aux);
  }
};

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

}  // namespace

TEST(Forward, OutputIsStrictlyInsideUnitInterval) {
  Tiny t;
  const auto r = t.run(t.params, true);
  EXPECT_EQ(r.occupancy.shape(), (Shape{4, 6}));
  for (double v : r.occupancy.vec()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  for (const auto& a : r.aux) EXPECT_EQ(a.shape(), (Shape{2, 2, 2}));
}

TEST(Forward, ViewOrderDoesNotChangeOutput) {
  testutil::SmallWorld w;
  NetConfig net;
  net.c_feat = 4;
  auto tables = build_tables(net, w.rig.cameras, w.grid);
  Rng rng = derive_rng(2, {0});
  const auto frame = sample_frame(rng, w.scene, w.rig, w.style, w.grid);
  auto views = frame.views;
  const auto params = init_parameters<float>(net, 3);
  const auto a = forward<float>(net, params, std::span<const Tensor<float>>(views), tables);
  std::reverse(views.begin(), views.end());
  std::reverse(tables.begin(), tables.end());
  std::swap(views[0], views[2]);
  std::swap(tables[0], tables[2]);
  const auto b = forward<float>(net, params, std::span<const Tensor<float>>(views), tables);
  EXPECT_EQ(a.occupancy, b.occupancy);
}

TEST(Forward, BlindViewOnlyChangesTheDivisor) {
  Tiny t;
  std::vector<Tensor<double>> two{t.views[0], t.views[1]};
  const ProjectionTable blind(t.grid.h_g, t.grid.w_g, t.tables[0].h_f(), t.tables[0].w_f());
  const std::vector<ProjectionTable> with_blind{t.tables[0], blind};
  const std::vector<ProjectionTable> single{t.tables[0]};
  const std::vector<Tensor<double>> one{t.views[0]};
  const auto a = forward<double>(t.net, t.params, std::span<const Tensor<double>>(two), with_blind);
  const auto b = forward<double>(t.net, t.params, std::span<const Tensor<double>>(one), single);
  ASSERT_EQ(a.cache.bev_in.shape(), b.cache.bev_in.shape());
  for (std::size_t k = 0; k < a.cache.bev_in.size(); ++k)
    EXPECT_EQ(a.cache.bev_in[k], b.cache.bev_in[k] / 2.0);
}

TEST(Forward, InactiveViewIsIgnored) {
  Tiny t;
  const auto masked = forward<double>(t.net, t.params, std::span<const Tensor<double>>(t.views),
                                      t.tables, {true, false});
  const std::vector<Tensor<double>> one{t.views[0]};
  const std::vector<ProjectionTable> single{t.tables[0]};
  const auto alone = forward<double>(t.net, t.params, std::span<const Tensor<double>>(one), single);
  EXPECT_EQ(masked.occupancy, alone.occupancy);
  EXPECT_THROW(forward<double>(t.net, t.params, std::span<const Tensor<double>>(t.views), t.tables,
                               {false, false}),
               NoActiveViews);
}

TEST(Forward, ZeroWeightsGiveLogisticOfBias) {
  Tiny t;
  auto p = make_parameters<double>(t.net);
  p.bias(Layer::Bev1).fill(0.7);
  p.bias(Layer::Bev3).fill(-1.3);
  const auto r = t.run(p);
  for (double v : r.occupancy.vec()) EXPECT_DOUBLE_EQ(v, logistic(-1.3));
}

TEST(Forward, AcceptsAnyViewCount) {
  testutil::SmallWorld w;
  NetConfig net;
  net.c_feat = 4;
  const auto tables = build_tables(net, w.rig.cameras, w.grid);
  Rng rng = derive_rng(4, {0});
  const auto frame = sample_frame(rng, w.scene, w.rig, w.style, w.grid);
  const auto params = init_parameters<float>(net, 5);
  for (std::size_t n : {1u, 2u, 4u}) {
    const std::vector<Tensor<float>> views(frame.views.begin(), frame.views.begin() + n);
    const std::vector<ProjectionTable> tabs(tables.begin(), tables.begin() + n);
    const auto r = forward<float>(net, params, std::span<const Tensor<float>>(views), tabs);
    EXPECT_EQ(r.occupancy.shape(), (Shape{30, 30})) << n << " views";
  }
}

TEST(Forward, RejectsMismatchedInputs) {
  Tiny t;
  const std::vector<ProjectionTable> one{t.tables[0]};
  EXPECT_THROW(forward<double>(t.net, t.params, std::span<const Tensor<double>>(t.views), one),
               ShapeMismatch);
  NetConfig other = t.net;
  other.c_feat = 4;
  EXPECT_THROW(forward<double>(other, t.params, std::span<const Tensor<double>>(t.views), t.tables),
               ShapeMismatch);
}

TEST(GaussianTarget, EmptyIsZero) {
  const BevGrid grid{0, 0, 0.1, 5, 7};
  const auto m = gaussian_soft_target<float>({}, 2.0, grid);
  for (float v : m.vec()) EXPECT_EQ(v, 0.0f);
}

TEST(GaussianTarget, SinglePeakFollowsDefinition) {
  const BevGrid grid{0, 0, 0.1, 20, 20};
  const std::vector<Cell> pos{{10, 10}};
  const double sigma = 2.0;
  const auto m = gaussian_soft_target<double>(pos, sigma, grid);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) {
      const double d2 = (i - 10) * (i - 10) + (j - 10) * (j - 10);
      const double expected = d2 <= 36 ? std::exp(-d2 / (2 * sigma * sigma)) : 0.0;
      EXPECT_DOUBLE_EQ(m.at(i, j), expected) << i << "," << j;
    }
}

TEST(GaussianTarget, OverlapTakesMaximum) {
  const BevGrid grid{0, 0, 0.1, 10, 10};
  const std::vector<Cell> pos{{4, 4}, {4, 5}};
  const auto m = gaussian_soft_target<double>(pos, 2.0, grid);
  EXPECT_DOUBLE_EQ(m.at(4, 4), 1.0);
  EXPECT_DOUBLE_EQ(m.at(4, 5), 1.0);
  EXPECT_DOUBLE_EQ(m.at(3, 4), std::max(std::exp(-1.0 / 8), std::exp(-2.0 / 8)));
  EXPECT_THROW(gaussian_soft_target<double>(std::vector<Cell>{{10, 0}}, 2.0, grid), PositionOutOfGrid);
}

TEST(MseLoss, HandValues) {
  const Tensor<double> zero({2, 2}), half({2, 2}, 0.5);
  const auto r = mse_loss(zero, half);
  EXPECT_DOUBLE_EQ(r.loss, 1.0);
  for (double g : r.grad.vec()) EXPECT_DOUBLE_EQ(g, 1.0);
  const auto same = mse_loss(half, half);
  EXPECT_EQ(same.loss, 0.0);
  EXPECT_THROW(mse_loss(Tensor<double>({2, 3}), half), ShapeMismatch);
}

TEST(MseLoss, GradientMatchesFiniteDifferences) {
  Rng rng = derive_rng(7, {0});
  Tensor<double> target({3, 4}), pred({3, 4});
  for (auto& v : target.vec()) v = uniform(rng, 0.0, 1.0);
  for (auto& v : pred.vec()) v = uniform(rng, 0.0, 1.0);
  const auto r = mse_loss(target, pred);
  const double h = 1e-6;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    auto plus = pred, minus = pred;
    plus[k] += h;
    minus[k] -= h;
    const double fd = (mse_loss(target, plus).loss - mse_loss(target, minus).loss) / (2 * h);
    EXPECT_LT(rel_err(r.grad[k], fd), 1e-5);
  }
}

TEST(PerspectiveLoss, NoPositionsPenalisesSquaredOutput) {
  Tiny t;
  const auto r = t.run(t.params, true);
  const auto p = perspective_loss(r.aux, {}, t.cams, t.grid, 1.0, 1.8, t.net.feature_scale());
  double expected = 0.0;
  for (const auto& a : r.aux)
    for (double v : a.vec()) expected += v * v / 2.0;
  EXPECT_NEAR(p.loss, expected, 1e-12);
}

TEST(PerspectiveLoss, PerfectPredictionIsFree) {
  Tiny t;
  const std::vector<Cell> pos{{1, 2}};
  const auto r = t.run(t.params, true);
  const auto p = perspective_loss(r.aux, pos, t.cams, t.grid, 1.0, 1.8, t.net.feature_scale());
  std::vector<Tensor<double>> perfect;
  for (std::size_t v = 0; v < 2; ++v) {
    Tensor<double> m({2, 2, 2});
    for (std::size_t k = 0; k < 4; ++k) {
      m[k] = p.head_targets[v][k];
      m[4 + k] = p.foot_targets[v][k];
    }
    perfect.push_back(m);
  }
  EXPECT_EQ(perspective_loss(perfect, pos, t.cams, t.grid, 1.0, 1.8, t.net.feature_scale()).loss, 0.0);
}

TEST(PerspectiveLoss, GradientMatchesFiniteDifferences) {
  Tiny t;
  const std::vector<Cell> pos{{1, 2}, {3, 4}};
  Rng rng = derive_rng(7, {1});
  std::vector<Tensor<double>> maps;
  for (int v = 0; v < 2; ++v) {
    Tensor<double> m({2, 2, 2});
    for (auto& x : m.vec()) x = uniform(rng, 0.0, 1.0);
    maps.push_back(m);
  }
  auto eval = [&](const std::vector<Tensor<double>>& m) {
    return perspective_loss(m, pos, t.cams, t.grid, 1.0, 1.8, t.net.feature_scale());
  };
  const auto r = eval(maps);
  const double h = 1e-6;
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t k = 0; k < maps[v].size(); ++k) {
      auto plus = maps, minus = maps;
      plus[v][k] += h;
      minus[v][k] -= h;
      const double fd = (eval(plus).loss - eval(minus).loss) / (2 * h);
      EXPECT_LT(rel_err(r.grads[v][k], fd), 1e-5);
    }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Tiny t;
  const auto r = t.run(t.params);
  const auto g = backward(t.net, r.cache, Tensor<double>({4, 6}));
  for (const auto& tensor : g.tensors)
    for (double v : tensor.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, IsLinearInUpstreamGradient) {
  Tiny t;
  const auto r = t.run(t.params);
  Rng rng = derive_rng(7, {2});
  Tensor<double> up({4, 6});
  for (auto& v : up.vec()) v = uniform(rng, -1.0, 1.0);
  auto up2 = up;
  for (auto& v : up2.vec()) v *= 2;
  const auto g1 = backward(t.net, r.cache, up), g2 = backward(t.net, r.cache, up2);
  for (std::size_t k = 0; k < g1.size(); ++k)
    for (std::size_t e = 0; e < g1.tensors[k].size(); ++e)
      EXPECT_EQ(g2.tensors[k][e], 2 * g1.tensors[k][e]);
}

TEST(Backward, MatchesFiniteDifferencesOnSampledParameters) {
  Tiny t(4);
  const std::vector<Cell> pos{{0, 1}, {2, 3}};
  const auto target = gaussian_soft_target<double>(pos, 1.0, t.grid);
  auto loss = [&](const ParameterSet<double>& p, ParameterSet<double>* grads) {
    const auto r = t.run(p, true);
    const auto bev = mse_loss(target, r.occupancy);
    const auto persp = perspective_loss(r.aux, pos, t.cams, t.grid, 1.0, 1.8, t.net.feature_scale());
    if (grads) *grads = backward(t.net, r.cache, bev.grad, &persp.grads);
    return bev.loss + persp.loss;
  };
  ParameterSet<double> grads;
  loss(t.params, &grads);
  Rng rng = derive_rng(7, {3});
  const double h = 1e-6;
  for (std::size_t tensor = 0; tensor < t.params.size(); ++tensor)
    for (int sample = 0; sample < 3; ++sample) {
      const auto k = static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<int>(t.params.tensors[tensor].size()) - 1));
      auto plus = t.params, minus = t.params;
      plus.tensors[tensor][k] += h;
      minus.tensors[tensor][k] -= h;
      const double fd = (loss(plus, nullptr) - loss(minus, nullptr)) / (2 * h);
      EXPECT_LT(rel_err(grads.tensors[tensor][k], fd), 1e-4) << t.params.names[tensor] << "[" << k << "]";
    }
}

TEST(Backward, RejectsMismatchedCache) {
  Tiny t;
  const auto r = t.run(t.params);
  EXPECT_THROW(backward(t.net, r.cache, Tensor<double>({6, 4})), CacheMismatch);
  NetConfig other = t.net;
  other.c_feat = 5;
  EXPECT_THROW(backward(other, r.cache, Tensor<double>({4, 6})), CacheMismatch);
  const std::vector<Tensor<double>> aux(2, Tensor<double>({2, 2, 2}));
  EXPECT_THROW(backward(t.net, r.cache, Tensor<double>({4, 6}), &aux), CacheMismatch);
}

namespace {
ParameterSet<double> scalar(double v) {
  ParameterSet<double> p;
  p.names = {"w"};
  p.tensors.emplace_back(Shape{1}, v);
  return p;
}
}  // namespace

TEST(Sgd, TwoScalarStepsByHand) {
  auto p = scalar(1.0);
  const auto g = scalar(1.0);
  ParameterSet<double> vel;
  const SgdConfig cfg{0.5, 0.0};
  sgd_step(p, g, 0.1, cfg, vel);
  sgd_step(p, g, 0.1, cfg, vel);
  EXPECT_DOUBLE_EQ(p.tensors[0][0], 0.75);
  EXPECT_DOUBLE_EQ(vel.tensors[0][0], 1.5);
}

TEST(Sgd, ZeroLearningRateStillUpdatesVelocity) {
  auto p = scalar(2.0);
  ParameterSet<double> vel;
  sgd_step(p, scalar(3.0), 0.0, SgdConfig{}, vel);
  EXPECT_EQ(p.tensors[0][0], 2.0);
  EXPECT_DOUBLE_EQ(vel.tensors[0][0], 3.0 + 5e-4 * 2.0);
  auto q = scalar(2.0);
  ParameterSet<double> v2;
  sgd_step(q, scalar(0.0), 0.5, SgdConfig{0.5, 0.0}, v2);
  EXPECT_EQ(q.tensors[0][0], 2.0);
}

TEST(Sgd, ClipRescalesLargeGradients) {
  ParameterSet<double> g;
  g.names = {"a", "b"};
  g.tensors.emplace_back(Shape{1}, 3.0);
  g.tensors.emplace_back(Shape{1}, 4.0);
  EXPECT_DOUBLE_EQ(grad_norm(g), 5.0);
  auto p = g.zeros_like();
  ParameterSet<double> vel;
  sgd_step(p, g, 1.0, SgdConfig{0.0, 0.0, 1.0}, vel);
  EXPECT_DOUBLE_EQ(p.tensors[0][0], -0.6);
  EXPECT_DOUBLE_EQ(p.tensors[1][0], -0.8);
  auto q = g.zeros_like();
  ParameterSet<double> v2;
  sgd_step(q, g, 1.0, SgdConfig{0.0, 0.0, 10.0}, v2);
  EXPECT_DOUBLE_EQ(q.tensors[1][0], -4.0);
}

TEST(Sgd, LayoutMismatchThrows) {
  auto p = scalar(1.0);
  ParameterSet<double> vel;
  EXPECT_THROW(sgd_step(p, ParameterSet<double>{}, 0.1, SgdConfig{}, vel), ShapeMismatch);
}

TEST(OneCycle, EndpointsAndShape) {
  const double max_lr = 0.1;
  EXPECT_DOUBLE_EQ(one_cycle_lr(0, 100, max_lr), max_lr / 25);
  EXPECT_EQ(one_cycle_lr(30, 100, max_lr), max_lr);
  EXPECT_NEAR(one_cycle_lr(99, 100, max_lr), max_lr / 25 / 1e4, 1e-15);
  for (int s = 1; s <= 30; ++s) EXPECT_GT(one_cycle_lr(s, 100, max_lr), one_cycle_lr(s - 1, 100, max_lr));
  for (int s = 31; s < 100; ++s) EXPECT_LT(one_cycle_lr(s, 100, max_lr), one_cycle_lr(s - 1, 100, max_lr));
  EXPECT_THROW(one_cycle_lr(100, 100, max_lr), StepOutOfRange);
  EXPECT_THROW(one_cycle_lr(-1, 100, max_lr), StepOutOfRange);
}

TEST(Checkpoint, RoundTripsBitwise) {
  NetConfig net;
  net.c_feat = 4;
  const auto p = init_parameters<float>(net, 12);
  testutil::TempDir dir("ckpt");
  save_checkpoint(dir.path / "p.mvp", p);
  EXPECT_EQ(load_checkpoint(dir.path / "p.mvp"), p);
  auto bytes = encode_checkpoint(p);
  bytes.pop_back();
  EXPECT_THROW(decode_checkpoint(bytes, "truncated"), CorruptDataset);
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes, "magic"), CorruptDataset);
}

TEST(Init, SameSeedSameParameters) {
  NetConfig net;
  EXPECT_EQ(init_parameters<float>(net, 3), init_parameters<float>(net, 3));
  EXPECT_NE(init_parameters<float>(net, 3), init_parameters<float>(net, 4));
  EXPECT_EQ(init_parameters<float>(net, 3).bias(Layer::Bev3)[0], -3.0f);
}
