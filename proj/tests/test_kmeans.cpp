#include "aeye/kmeans.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <random>

using namespace aeye;

namespace {

std::vector<Point2> random_instance(std::mt19937_64 &rng, std::size_t n, bool with_duplicates) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Point2> pts(n);
  for (auto &p : pts) {
    p = {u(rng), u(rng)};
  }
  if (with_duplicates && n > 3) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < n / 3; ++i) {
      pts[pick(rng)] = pts[pick(rng)];
    }
  }
  return pts;
}

bool monotone(const std::vector<double> &h) {
  for (std::size_t i = 1; i < h.size(); ++i) {
    if (h[i] > h[i - 1] * (1.0 + 1e-12)) {
      return false;
    }
  }
  return true;
}

} // namespace

TEST(ConstrainedKMeans, MatchesReferenceLloydWithoutFixedCenters) {
  std::mt19937_64 rng(20240611);
  std::uniform_int_distribution<std::size_t> n_dist(1, 200);
  std::uniform_int_distribution<std::size_t> k_dist(1, 8);
  const KMeansConfig cfg;
  for (int inst = 0; inst < 200; ++inst) {
    const auto n = n_dist(rng);
    const auto k = k_dist(rng);
    const auto pts = random_instance(rng, n, inst % 4 == 0);
    const std::uint64_t seed = rng();
    const auto got = kmeans(pts, k, cfg, seed);
    const auto want = oracle::reference_lloyd(pts, k, cfg.max_iterations, cfg.convergence_eps, seed);
    ASSERT_EQ(got.free_centers.size(), want.centers.size()) << "instance " << inst;
    for (std::size_t c = 0; c < want.centers.size(); ++c) {
      EXPECT_NEAR(got.free_centers[c].x, want.centers[c].x, 1e-9) << "instance " << inst;
      EXPECT_NEAR(got.free_centers[c].y, want.centers[c].y, 1e-9) << "instance " << inst;
    }
    ASSERT_EQ(got.objective_history.size(), want.objectives.size()) << "instance " << inst;
    EXPECT_NEAR(got.objective_history.back(), want.objectives.back(), 1e-9);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      EXPECT_EQ(static_cast<int>(got.assignments[i]), want.labels[i]);
    }
  }
}

TEST(ConstrainedKMeans, FixedCentersNeverMove) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> n_dist(1, 200);
  std::uniform_int_distribution<std::size_t> f_dist(1, 6);
  std::uniform_int_distribution<std::size_t> extra_dist(0, 6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int inst = 0; inst < 200; ++inst) {
    const auto pts = random_instance(rng, n_dist(rng), inst % 3 == 0);
    std::vector<Point2> fixed(f_dist(rng));
    for (std::size_t i = 0; i < fixed.size(); ++i) {
      // Half the time pin a center on a data point.
      fixed[i] = (i % 2 == 0) ? pts[i % pts.size()] : Point2{u(rng), u(rng)};
    }
    const auto k_total = fixed.size() + extra_dist(rng);
    const auto r = constrained_kmeans(pts, fixed, k_total, {}, rng());
    ASSERT_EQ(r.fixed_centers.size(), fixed.size());
    for (std::size_t i = 0; i < fixed.size(); ++i) {
      EXPECT_EQ(std::memcmp(&r.fixed_centers[i], &fixed[i], sizeof(Point2)), 0) << "instance " << inst;
    }
    EXPECT_LE(r.center_count(), k_total);
    EXPECT_TRUE(monotone(r.objective_history)) << "instance " << inst;
  }
}

TEST(ConstrainedKMeans, ObjectiveNeverIncreases) {
  std::mt19937_64 rng(5);
  for (int inst = 0; inst < 100; ++inst) {
    const auto pts = random_instance(rng, 150, inst % 2 == 0);
    const auto r = kmeans(pts, 8, {}, rng());
    ASSERT_GE(r.objective_history.size(), 2u);
    EXPECT_TRUE(monotone(r.objective_history)) << "instance " << inst;
  }
}

TEST(ConstrainedKMeans, AssignmentsMatchNearestReturnedCenter) {
  std::mt19937_64 rng(11);
  const auto pts = random_instance(rng, 120, false);
  const std::vector<Point2> fixed{{0.1, 0.1}, {0.9, 0.9}};
  const auto r = constrained_kmeans(pts, fixed, 6, {}, 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < r.center_count(); ++c) {
      best = std::min(best, squared_distance(pts[i], r.center(c)));
    }
    EXPECT_EQ(squared_distance(pts[i], r.center(r.assignments[i])), best);
  }
}

TEST(ConstrainedKMeans, ThreeTripletsReachTheGlobalOptimum) {
  const std::vector<Point2> pts{{0.10, 0.10}, {0.12, 0.11}, {0.09, 0.13}, {0.50, 0.90}, {0.52, 0.88},
                                {0.49, 0.87}, {0.90, 0.20}, {0.88, 0.22}, {0.91, 0.19}};
  const auto best = oracle::brute_force_constrained_kmeans(pts, {}, 3);
  double best_found = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    const auto r = kmeans(pts, 3, {}, seed);
    EXPECT_GE(r.objective_history.back(), best.objective - 1e-12);
    best_found = std::min(best_found, r.objective_history.back());
    if (seed < 8) {
      // k-means++ on well separated triplets always lands one seed per triplet.
      EXPECT_NEAR(r.objective_history.back(), best.objective, 1e-12) << "seed " << seed;
    }
  }
  EXPECT_NEAR(best_found, best.objective, 1e-12);
}

TEST(ConstrainedKMeans, ConstrainedOptimumWithOneFixedCenter) {
  const std::vector<Point2> pts{{0.10, 0.10}, {0.12, 0.11}, {0.09, 0.13}, {0.50, 0.90}, {0.52, 0.88},
                                {0.49, 0.87}, {0.90, 0.20}, {0.88, 0.22}, {0.91, 0.19}};
  const std::vector<Point2> fixed{{0.12, 0.11}};
  const auto best = oracle::brute_force_constrained_kmeans(pts, fixed, 2);
  double best_found = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    const auto r = constrained_kmeans(pts, fixed, 3, {}, seed);
    ASSERT_EQ(r.free_centers.size(), 2u);
    EXPECT_GE(r.objective_history.back(), best.objective - 1e-12);
    best_found = std::min(best_found, r.objective_history.back());
  }
  EXPECT_NEAR(best_found, best.objective, 1e-12);
}

TEST(ConstrainedKMeans, CoincidentPointsLimitFreeCenters) {
  const std::vector<Point2> same(10, Point2{0.3, 0.3});
  const auto r = kmeans(same, 5, {}, 1);
  EXPECT_EQ(r.free_centers.size(), 1u);
  EXPECT_NEAR(r.objective_history.back(), 0.0, 1e-20);

  const std::vector<Point2> on_fixed(6, Point2{0.7, 0.2});
  const std::vector<Point2> fixed{{0.7, 0.2}};
  const auto r2 = constrained_kmeans(on_fixed, fixed, 4, {}, 1);
  EXPECT_TRUE(r2.free_centers.empty());
  for (auto a : r2.assignments) {
    EXPECT_EQ(a, 0u);
  }
}

TEST(ConstrainedKMeans, SeedDeterminism) {
  std::mt19937_64 rng(9);
  const auto pts = random_instance(rng, 100, false);
  const auto a = kmeans(pts, 6, {}, 1234);
  const auto b = kmeans(pts, 6, {}, 1234);
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_EQ(a.objective_history, b.objective_history);
}

TEST(ConstrainedKMeans, ContractViolations) {
  const std::vector<Point2> pts{{0.1, 0.1}, {0.2, 0.2}};
  const std::vector<Point2> fixed{{0.1, 0.1}, {0.2, 0.2}, {0.3, 0.3}};
  try {
    constrained_kmeans(pts, fixed, 2, {}, 0);
    FAIL() << "expected a contract violation";
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), Error::Kind::contract);
  }
  EXPECT_THROW(kmeans(std::span<const Point2>{}, 3, {}, 0), Error);
}
