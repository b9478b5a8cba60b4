#pragma once

/**
 * @file kmeans.hpp
 * @brief Lloyd's k-means in the plane with a set of immovable centers.
 *
 * The center list is `fixed ++ free`. Assignment considers every center,
 * the update step moves only free centers. Free centers are seeded with
 * k-means++ (D^2 sampling against fixed centers and the free centers chosen
 * so far). Seeding consumes one uniform draw per chosen center from a
 * mt19937_64, turned into [0,1) with aeye::uniform01, so results are
 * reproducible from the seed alone.
 */

#include "aeye/hashing.hpp"
#include "aeye/model.hpp"

#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace aeye {

struct KMeansConfig {
  int max_iterations = 50;
  /// Stop once no free center moves by this much or more (Euclidean).
  double convergence_eps = 1e-6;
};

struct ConstrainedKMeansResult {
  std::vector<Point2> fixed_centers;
  std::vector<Point2> free_centers;
  /// Index into fixed_centers ++ free_centers for every input point,
  /// consistent with the returned centers.
  std::vector<std::uint32_t> assignments;
  /// Total within-cluster squared distance after every assignment step.
  std::vector<double> objective_history;
  int iterations = 0;
  bool converged = false;

  std::size_t center_count() const noexcept { return fixed_centers.size() + free_centers.size(); }

  Point2 center(std::size_t c) const {
    return c < fixed_centers.size() ? fixed_centers[c] : free_centers[c - fixed_centers.size()];
  }
};

namespace detail {

/// Picks `count` new centers from `points` by D^2 sampling, with `seeded`
/// already in place. Stops early once every point coincides with a center.
inline std::vector<Point2> kmeanspp_seed(std::span<const Point2> points, std::span<const Point2> seeded,
                                         std::size_t count, std::mt19937_64 &rng) {
  std::vector<Point2> chosen;
  chosen.reserve(count);
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d2(points.size(), inf);
  auto absorb = [&](const Point2 &c) {
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double d = squared_distance(points[i], c);
      if (d < d2[i]) {
        d2[i] = d;
      }
    }
  };
  for (const auto &c : seeded) {
    absorb(c);
  }
  for (std::size_t s = 0; s < count; ++s) {
    std::size_t pick = 0;
    const double u = uniform01(rng);
    if (seeded.empty() && chosen.empty()) {
      pick = std::min(points.size() - 1, static_cast<std::size_t>(u * static_cast<double>(points.size())));
    } else {
      double total = 0.0;
      for (double d : d2) {
        total += d;
      }
      if (!(total > 0.0)) {
        break;
      }
      const double target = u * total;
      double cumulative = 0.0;
      std::size_t last_positive = points.size();
      pick = points.size();
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (d2[i] <= 0.0) {
          continue;
        }
        last_positive = i;
        cumulative += d2[i];
        if (cumulative > target) {
          pick = i;
          break;
        }
      }
      if (pick == points.size()) {
        pick = last_positive;
      }
    }
    chosen.push_back(points[pick]);
    absorb(points[pick]);
  }
  return chosen;
}

inline double assign_points(std::span<const Point2> points, const ConstrainedKMeansResult &state,
                            std::vector<std::uint32_t> &assignments) {
  const std::size_t centers = state.center_count();
  double objective = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_c = 0;
    for (std::size_t c = 0; c < centers; ++c) {
      const double d = squared_distance(points[i], state.center(c));
      if (d < best) {
        best = d;
        best_c = static_cast<std::uint32_t>(c);
      }
    }
    assignments[i] = best_c;
    objective += best;
  }
  return objective;
}

} // namespace detail

/// k-means over `points` with `fixed` centers pinned in place and up to
/// `k_total - fixed.size()` free centers.
///
/// The free center count is further limited to the number of points that do
/// not coincide with a fixed center, and seeding stops early when every
/// point already sits on a center. A free center whose cluster empties is
/// moved once to the point farthest from all centers; if it empties again it
/// is frozen in place for the rest of the run.
inline ConstrainedKMeansResult constrained_kmeans(std::span<const Point2> points, std::span<const Point2> fixed,
                                                  std::size_t k_total, const KMeansConfig &cfg,
                                                  std::uint64_t seed) {
  if (k_total < fixed.size()) {
    throw contract_violation("constrained_kmeans: k_total (" + std::to_string(k_total) +
                             ") < number of fixed centers (" + std::to_string(fixed.size()) + ")");
  }
  if (points.empty()) {
    throw contract_violation("constrained_kmeans: no points");
  }

  ConstrainedKMeansResult r;
  r.fixed_centers.assign(fixed.begin(), fixed.end());

  std::size_t not_on_fixed = 0;
  for (const auto &p : points) {
    bool on_fixed = false;
    for (const auto &c : fixed) {
      if (p == c) {
        on_fixed = true;
        break;
      }
    }
    not_on_fixed += on_fixed ? 0 : 1;
  }
  const std::size_t free_count = std::min(k_total - fixed.size(), not_on_fixed);

  std::mt19937_64 rng(seed);
  r.free_centers = detail::kmeanspp_seed(points, fixed, free_count, rng);
  r.assignments.assign(points.size(), 0);

  const std::size_t nfixed = fixed.size();
  const std::size_t nfree = r.free_centers.size();
  std::vector<char> reseeded(nfree, 0);
  std::vector<char> frozen(nfree, 0);
  std::vector<double> sum_x(nfree);
  std::vector<double> sum_y(nfree);
  std::vector<std::size_t> count(nfree);

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    const double objective = detail::assign_points(points, r, r.assignments);
    assert(r.objective_history.empty() ||
           objective <= r.objective_history.back() * (1.0 + 1e-12) + 1e-300);
    r.objective_history.push_back(objective);
    r.iterations = iter + 1;
    if (nfree == 0) {
      r.converged = true;
      return r;
    }

    std::fill(sum_x.begin(), sum_x.end(), 0.0);
    std::fill(sum_y.begin(), sum_y.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto c = r.assignments[i];
      if (c >= nfixed) {
        sum_x[c - nfixed] += points[i].x;
        sum_y[c - nfixed] += points[i].y;
        ++count[c - nfixed];
      }
    }

    double max_move = 0.0;
    for (std::size_t j = 0; j < nfree; ++j) {
      Point2 next = r.free_centers[j];
      if (frozen[j]) {
        continue;
      }
      if (count[j] > 0) {
        next = {sum_x[j] / static_cast<double>(count[j]), sum_y[j] / static_cast<double>(count[j])};
      } else if (!reseeded[j]) {
        reseeded[j] = 1;
        double farthest = -1.0;
        for (const auto &p : points) {
          double nearest = std::numeric_limits<double>::infinity();
          for (std::size_t c = 0; c < r.center_count(); ++c) {
            nearest = std::min(nearest, squared_distance(p, r.center(c)));
          }
          if (nearest > farthest) {
            farthest = nearest;
            next = p;
          }
        }
      } else {
        frozen[j] = 1;
      }
      max_move = std::max(max_move, std::sqrt(squared_distance(next, r.free_centers[j])));
      r.free_centers[j] = next;
    }

    if (max_move < cfg.convergence_eps) {
      r.converged = true;
      break;
    }
  }

  // Leave assignments consistent with the final centers.
  const double objective = detail::assign_points(points, r, r.assignments);
  r.objective_history.push_back(objective);
  return r;
}

/// Plain k-means++ / Lloyd, i.e. the constrained variant without fixed centers.
inline ConstrainedKMeansResult kmeans(std::span<const Point2> points, std::size_t k, const KMeansConfig &cfg,
                                      std::uint64_t seed) {
  return constrained_kmeans(points, {}, k, cfg, seed);
}

} // namespace aeye
