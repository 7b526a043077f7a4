#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "foa/error.hpp"
#include "foa/matrix.hpp"
#include "foa/rng.hpp"

namespace foa {

struct ClusterResult {
  Matrix centers;                       // n x d
  std::vector<std::size_t> assignment;  // length m, center index per point
  std::size_t iterations_used = 0;
  std::vector<double> objective_trace;  // Lloyd objective after each iteration

  std::size_t cluster_count() const { return centers.rows(); }
};

inline constexpr std::size_t kKmeansMaxIterations = 50;

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

inline Matrix cluster_means(const Matrix& points, const std::vector<std::size_t>& assignment,
                            std::size_t n) {
  Matrix c(n, points.cols());
  std::vector<std::size_t> count(n, 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    axpy(1.0, points.row(i), c.row(assignment[i]));
    ++count[assignment[i]];
  }
  for (std::size_t j = 0; j < n; ++j)
    if (count[j] > 0)
      for (double& x : c.row(j)) x /= static_cast<double>(count[j]);
  return c;
}

inline double lloyd_objective(const Matrix& points, const Matrix& centers,
                              const std::vector<std::size_t>& assignment) {
  double s = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i)
    s += sq_dist(points.row(i), centers.row(assignment[i]));
  return s;
}

inline Matrix kmeanspp_init(const Matrix& points, std::size_t n, Rng& rng) {
  const std::size_t m = points.rows();
  Matrix centers(n, points.cols());
  std::vector<double> d2(m, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(m, false);
  std::size_t pick = rng.below(m);
  for (std::size_t j = 0; j < n; ++j) {
    if (j > 0) {
      double total = 0.0;
      for (std::size_t i = 0; i < m; ++i) total += d2[i];
      if (total > 0.0) {
        const double r = rng.uniform() * total;
        double acc = 0.0;
        pick = m;
        for (std::size_t i = 0; i < m; ++i) {
          acc += d2[i];
          if (d2[i] > 0.0 && acc > r) {
            pick = i;
            break;
          }
        }
        if (pick == m)  // rounding at the top of the cumulative sum
          for (std::size_t i = m; i-- > 0;)
            if (d2[i] > 0.0) {
              pick = i;
              break;
            }
      } else {
        // Every point coincides with a chosen center; take the first unused row.
        pick = 0;
        while (taken[pick]) ++pick;
      }
    }
    taken[pick] = true;
    std::copy(points.row(pick).begin(), points.row(pick).end(), centers.row(j).begin());
    for (std::size_t i = 0; i < m; ++i)
      d2[i] = std::min(d2[i], sq_dist(points.row(i), centers.row(j)));
  }
  return centers;
}

// Nearest center, ties to the lowest index.
inline std::vector<std::size_t> assign_points(const Matrix& points, const Matrix& centers) {
  std::vector<std::size_t> a(points.rows(), 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < centers.rows(); ++j) {
      const double dd = sq_dist(points.row(i), centers.row(j));
      if (dd < best) {
        best = dd;
        a[i] = j;
      }
    }
  }
  return a;
}

// Each empty cluster takes the point farthest from its current center, drawn
// from clusters that keep at least one member.
inline void repair_empty(const Matrix& points, const Matrix& centers,
                         std::vector<std::size_t>& assignment) {
  const std::size_t n = centers.rows();
  std::vector<std::size_t> count(n, 0);
  for (std::size_t a : assignment) ++count[a];
  for (std::size_t j = 0; j < n; ++j) {
    if (count[j] > 0) continue;
    double worst = -1.0;
    std::size_t idx = 0;
    for (std::size_t i = 0; i < points.rows(); ++i) {
      if (count[assignment[i]] < 2) continue;
      const double dd = sq_dist(points.row(i), centers.row(assignment[i]));
      if (dd > worst) {
        worst = dd;
        idx = i;
      }
    }
    --count[assignment[idx]];
    assignment[idx] = j;
    count[j] = 1;
  }
}

}  // namespace detail

/// Lloyd's k-means with k-means++ seeding. Returned centers are exactly the
/// means of the returned assignment.
inline ClusterResult kmeans(const Matrix& points, std::size_t n, Rng rng) {
  require(n >= 1, ErrorCode::TooFewPoints, "k-means needs n >= 1");
  require(points.rows() >= n, ErrorCode::TooFewPoints,
          "k-means needs at least n points (" + std::to_string(points.rows()) + " < " +
              std::to_string(n) + ")");
  require(points.all_finite(), ErrorCode::NonFiniteLoss, "k-means input is not finite");

  ClusterResult res;
  res.centers = detail::kmeanspp_init(points, n, rng);
  std::vector<std::size_t> prev;
  for (std::size_t it = 0; it < kKmeansMaxIterations; ++it) {
    auto assign = detail::assign_points(points, res.centers);
    detail::repair_empty(points, res.centers, assign);
    res.centers = detail::cluster_means(points, assign, n);
    res.objective_trace.push_back(detail::lloyd_objective(points, res.centers, assign));
    res.iterations_used = it + 1;
    const bool fixed = assign == prev;
    prev = std::move(assign);
    if (fixed) break;
  }
  res.assignment = std::move(prev);
  return res;
}

/// Straight-through gradient of the centers: each member row receives
/// d_centers[j] / |cluster j|.
inline Matrix kmeans_vjp(const Matrix& points, const ClusterResult& result,
                         const Matrix& d_centers) {
  const std::size_t n = result.cluster_count();
  require(result.assignment.size() == points.rows(), ErrorCode::ShapeMismatch,
          "assignment length does not match the point count");
  require(d_centers.rows() == n && d_centers.cols() == points.cols(), ErrorCode::ShapeMismatch,
          "d_centers shape does not match the centers");
  std::vector<std::size_t> count(n, 0);
  for (std::size_t a : result.assignment) {
    require(a < n, ErrorCode::ShapeMismatch, "assignment index out of range");
    ++count[a];
  }
  Matrix g(points.rows(), points.cols());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const std::size_t j = result.assignment[i];
    axpy(1.0 / static_cast<double>(count[j]), d_centers.row(j), g.row(i));
  }
  return g;
}

}  // namespace foa
