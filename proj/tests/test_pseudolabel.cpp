#include <gtest/gtest.h>

#include "mvbev/losses.hpp"
#include "oracles.hpp"

using namespace mvbev;

namespace {
std::vector<int> above(const Tensor<float>& row, double tau) {
  std::vector<int> x;
  for (int j = 0; j < row.dim(1); ++j)
    if (row.at(0, j) > tau) x.push_back(j);
  return x;
}
}  // namespace

// The narrative example: six candidates at x = 6..11 exceed tau = 0.4, x = 8
// wins, 6, 7, 9, 10 fall within d = 2, then x = 11; a lower tau adds x = 5.
TEST(Vanilla, WorkedRowExample) {
  const auto row = oracle::worked_row();
  EXPECT_EQ(above(row, 0.4), (std::vector<int>{6, 7, 8, 9, 10, 11}));
  EXPECT_EQ(oracle::row_positions(vanilla_nms(row, 0.4, 2.0)), (std::vector<int>{8, 11}));
  EXPECT_EQ(oracle::row_positions(vanilla_nms(row, 0.3, 2.0)), (std::vector<int>{8, 11, 5}));
  EXPECT_EQ(oracle::as_set(oracle::vanilla(row, 0.3, 2.0)), oracle::cells_of(vanilla_nms(row, 0.3, 2.0)));
}

TEST(Vanilla, NothingAboveThreshold) {
  const Tensor<float> m({8, 8}, 0.25f);
  EXPECT_TRUE(vanilla_nms(m, 0.3, 3.0).empty());
  EXPECT_TRUE(vanilla_nms(Tensor<float>({0, 0}), 0.1, 3.0).empty());
  EXPECT_THROW(vanilla_nms(Tensor<float>({1, 2, 3}), 0.1, 3.0), ShapeMismatch);
}

TEST(LocalMax, WorkedRowExample) {
  const auto row = oracle::worked_row();
  EXPECT_EQ(oracle::row_positions(local_max(row, 0.4, 1)), (std::vector<int>{8, 11}));
  EXPECT_EQ(oracle::row_positions(local_max(row, 0.4, 2)), (std::vector<int>{8}));
}

TEST(LocalMax, ConstantMapWithinOneNeighbourhoodYieldsOrigin) {
  const Tensor<float> m({3, 3}, 0.6f);
  const auto d = local_max(m, 0.5, 2);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].cell, (Cell{0, 0}));
  EXPECT_THROW(local_max(m, 0.5, 0), InvalidArgument);
}

// On a larger plateau, suppression keeps one cell per (k_d + 1) lattice step.
TEST(LocalMax, LargeConstantMapGivesLattice) {
  const Tensor<float> m({9, 7}, 0.6f);
  const auto d = local_max(m, 0.5, 2);
  std::set<Cell> expected;
  for (int i = 0; i < 9; i += 3)
    for (int j = 0; j < 7; j += 3) expected.insert({i, j});
  EXPECT_EQ(oracle::cells_of(d), expected);
  EXPECT_EQ(d.front().cell, (Cell{0, 0}));
}

TEST(Postprocess, MatchesBruteForceOracles) {
  Rng rng = derive_rng(17, {0});
  for (int trial = 0; trial < 150; ++trial) {
    const auto map = oracle::random_map(rng, 16, 16, trial % 2 == 0);
    for (int k_d : {1, 2, 3})
      for (double tau : {0.1, 0.3, 0.5}) {
        EXPECT_EQ(oracle::cells_of(vanilla_nms(map, tau, k_d)), oracle::as_set(oracle::vanilla(map, tau, k_d)));
        EXPECT_EQ(oracle::cells_of(local_max(map, tau, k_d)), oracle::as_set(oracle::local_max(map, tau, k_d)));
      }
  }
}

TEST(Postprocess, MinimumDistanceAndDominance) {
  Rng rng = derive_rng(17, {1});
  for (int trial = 0; trial < 100; ++trial) {
    const auto map = oracle::random_map(rng, 20, 20, trial % 2 == 1);
    const int k_d = 1 + trial % 3;
    const double d = 1.5 + trial % 4;
    const auto v = vanilla_nms(map, 0.2, d);
    for (std::size_t a = 0; a < v.size(); ++a)
      for (std::size_t b = a + 1; b < v.size(); ++b) EXPECT_GT(cell_distance(v[a].cell, v[b].cell), d);
    const auto l = local_max(map, 0.2, k_d);
    for (std::size_t a = 0; a < l.size(); ++a) {
      EXPECT_GT(l[a].score, 0.2);
      for (int i = l[a].cell.i - k_d; i <= l[a].cell.i + k_d; ++i)
        for (int j = l[a].cell.j - k_d; j <= l[a].cell.j + k_d; ++j)
          if (i >= 0 && i < 20 && j >= 0 && j < 20) EXPECT_GE(l[a].score, map.at(i, j));
      for (std::size_t b = a + 1; b < l.size(); ++b)
        EXPECT_GT(std::max(std::abs(l[a].cell.i - l[b].cell.i), std::abs(l[a].cell.j - l[b].cell.j)), k_d);
    }
  }
}

TEST(Postprocess, RaisingTauOnlyRemovesCandidates) {
  Rng rng = derive_rng(17, {2});
  for (int trial = 0; trial < 50; ++trial) {
    const auto map = oracle::random_map(rng, 12, 12, true);
    for (double lo : {0.1, 0.3})
      for (double hi : {0.4, 0.6}) {
        const auto c_lo = oracle::cells_of(local_max_candidates(map, lo, 2));
        for (const auto& c : local_max_candidates(map, hi, 2)) EXPECT_TRUE(c_lo.count(c.cell));
        std::size_t n_lo = 0, n_hi = 0;
        for (float v : map.vec()) {
          n_lo += v > lo;
          n_hi += v > hi;
        }
        EXPECT_LE(n_hi, n_lo);
        EXPECT_LE(vanilla_nms(map, hi, 2.0).size(), vanilla_nms(map, lo, 2.0).size() + n_lo);
      }
  }
}

TEST(PseudoLabel, SoftTargetRoundTrip) {
  const BevGrid grid{0, 0, 0.1, 40, 40};
  const int k_d = 3;
  const std::vector<Cell> cells{{5, 5}, {5, 20}, {20, 12}, {33, 33}, {30, 3}};
  const auto target = gaussian_soft_target<float>(cells, 2.0, grid);
  const auto dets = local_max(target, 0.5, k_d);
  EXPECT_EQ(oracle::as_set(to_pseudo_label(dets)), oracle::as_set(cells));
  EXPECT_TRUE(to_pseudo_label({}).empty());
  const DetectionSet ordered{{{3, 1}, 0.9}, {{0, 2}, 0.8}};
  EXPECT_EQ(to_pseudo_label(ordered), (std::vector<Cell>{{3, 1}, {0, 2}}));
}

TEST(PseudoLabel, JsonLinesRoundTrip) {
  const DetectionSet dets{{{3, 1}, 0.875}, {{0, 2}, 0.5}, {{7, 7}, 0.3125}};
  EXPECT_EQ(detections_from_jsonl(detections_to_jsonl(dets)), dets);
  EXPECT_TRUE(detections_from_jsonl("").empty());
}

TEST(PseudoLabel, MethodNamesParse) {
  EXPECT_EQ(parse_method("vanilla"), PostprocessMethod::Vanilla);
  EXPECT_EQ(parse_method(method_name(PostprocessMethod::LocalMax)), PostprocessMethod::LocalMax);
  EXPECT_THROW(parse_method("nms"), InvalidArgument);
}
