#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "opseg/rng.hpp"

namespace opseg {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

/// Normalize to unit length; zero vectors are rejected.
inline std::vector<double> normalized(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n))
    throw std::invalid_argument("cannot normalize a zero or non-finite vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

/// Cosine distance 1 - <a,b> for unit vectors.
inline double cos_distance(std::span<const double> a, std::span<const double> b) {
  return 1.0 - dot(a, b);
}

struct KMeansResult {
  std::vector<std::uint32_t> assignments;      // per input point
  std::vector<std::vector<double>> centroids;  // k unit vectors
  std::vector<double> objective_history;       // after each assignment pass
  std::uint32_t iterations = 0;
  bool degenerate = false;  // fewer distinct points than clusters
};

/// k-means on the unit sphere under cosine distance: k-means++ seeding,
/// Lloyd iterations with centroid re-normalization, empty clusters re-seeded
/// from the point farthest from its centroid. Stops when assignments are
/// stable or after max_iterations. Fully deterministic for a given seed.
inline KMeansResult spherical_kmeans(
    const std::vector<std::vector<double>>& input_points, std::uint32_t k,
    std::uint64_t seed, std::uint32_t max_iterations = 100) {
  if (input_points.empty())
    throw std::invalid_argument("spherical_kmeans: no points");
  if (k == 0) throw std::invalid_argument("spherical_kmeans: k must be >= 1");
  const std::size_t n = input_points.size();
  const std::size_t dim = input_points[0].size();

  std::vector<std::vector<double>> points;
  points.reserve(n);
  for (const auto& p : input_points) {
    if (p.size() != dim)
      throw std::invalid_argument("spherical_kmeans: inconsistent dimensions");
    points.push_back(normalized(p));
  }

  std::mt19937_64 rng(seed);
  KMeansResult result;
  result.centroids.reserve(k);

  // k-means++ seeding, weighting by squared cosine distance to the nearest
  // chosen seed.
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  {
    const std::size_t first = uniform_index(rng, n);
    result.centroids.push_back(points[first]);
    for (std::size_t i = 0; i < n; ++i)
      min_dist[i] = std::max(0.0, cos_distance(points[i], points[first]));
  }
  std::vector<double> weights(n);
  while (result.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      weights[i] = min_dist[i] * min_dist[i];
      total += weights[i];
    }
    std::size_t pick;
    if (total > 0.0) {
      pick = weighted_pick(weights, rng);
    } else {
      // All points coincide with existing seeds; k exceeds the distinct
      // point count. Fill the remaining slots with copies and flag it.
      result.degenerate = true;
      pick = uniform_index(rng, n);
    }
    result.centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i)
      min_dist[i] =
          std::min(min_dist[i], std::max(0.0, cos_distance(points[i], points[pick])));
  }

  result.assignments.assign(n, 0);
  std::vector<double> point_dist(n, 0.0);

  auto assign = [&]() {
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      std::uint32_t best_c = 0;
      for (std::uint32_t c = 0; c < k; ++c) {
        const double d = dot(points[i], result.centroids[c]);
        if (d > best) {
          best = d;
          best_c = c;
        }
      }
      if (result.assignments[i] != best_c) {
        result.assignments[i] = best_c;
        changed = true;
      }
      point_dist[i] = 1.0 - best;
      objective += point_dist[i];
    }
    result.objective_history.push_back(objective);
    return changed;
  };

  assign();
  for (std::uint32_t iter = 0; iter < max_iterations; ++iter) {
    // Update step: centroid = normalized mean of members.
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t c = result.assignments[i];
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) sums[c][d] += points[i][d];
    }
    for (std::uint32_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed from the farthest point; if every point already sits on
        // its centroid there is nothing to steal.
        std::size_t far = n;
        double far_dist = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          if (point_dist[i] > far_dist) {
            far_dist = point_dist[i];
            far = i;
          }
        if (far == n) {
          result.degenerate = true;
          continue;
        }
        result.centroids[c] = points[far];
        point_dist[far] = 0.0;  // keep later empty clusters off this point
        continue;
      }
      const double norm = l2_norm(sums[c]);
      if (norm > 0.0) {
        for (std::size_t d = 0; d < dim; ++d) result.centroids[c][d] = sums[c][d] / norm;
      }
      // A cancelled (zero) mean keeps the previous centroid.
    }

    result.iterations = iter + 1;
    const bool changed = assign();

    const std::size_t h = result.objective_history.size();
    if (result.objective_history[h - 1] > result.objective_history[h - 2] + 1e-9)
      throw std::logic_error("spherical_kmeans: objective increased");
    if (!changed) break;
  }
  return result;
}

}  // namespace opseg
