#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "hacd/error.hpp"
#include "hacd/rng.hpp"
#include "hacd/sparse.hpp"

namespace hacd {

struct KMeansResult {
  std::vector<int> labels;
  std::vector<double> centroids;  // k x d row-major
  double inertia = 0.0;
};

namespace detail {

// Squared distances of every sparse row to every dense centroid, via
// |x|^2 - 2 x.c + |c|^2 (clamped at 0).
inline void kmeans_distances(const SparseMatrix& x, const std::vector<double>& row_norms,
                             const std::vector<double>& centroids, std::size_t k, std::vector<double>& dist) {
  const std::size_t d = x.cols();
  std::vector<double> cnorm(k, 0.0);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t f = 0; f < d; ++f) cnorm[c] += centroids[c * d + f] * centroids[c * d + f];
  dist.assign(x.rows() * k, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto cols = x.row_cols(i);
    auto vals = x.row_values(i);
    for (std::size_t c = 0; c < k; ++c) {
      double dot = 0.0;
      for (std::size_t q = 0; q < cols.size(); ++q) dot += vals[q] * centroids[c * d + cols[q]];
      dist[i * k + c] = std::max(0.0, row_norms[i] - 2.0 * dot + cnorm[c]);
    }
  }
}

inline KMeansResult kmeans_once(const SparseMatrix& x, const std::vector<double>& row_norms, std::size_t k, Rng& rng,
                                std::size_t max_iter) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> cent(k * d, 0.0);
  auto set_centroid = [&](std::size_t c, std::size_t i) {
    std::fill(cent.begin() + static_cast<std::ptrdiff_t>(c * d), cent.begin() + static_cast<std::ptrdiff_t>((c + 1) * d), 0.0);
    auto cols = x.row_cols(i);
    auto vals = x.row_values(i);
    for (std::size_t q = 0; q < cols.size(); ++q) cent[c * d + cols[q]] = vals[q];
  };

  // k-means++ seeding.
  set_centroid(0, rng.below(n));
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<double> dist;
  for (std::size_t c = 1; c < k; ++c) {
    detail::kmeans_distances(x, row_norms, cent, c, dist);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::numeric_limits<double>::infinity();
      for (std::size_t q = 0; q < c; ++q) best[i] = std::min(best[i], dist[i * c + q]);
      total += best[i];
    }
    std::size_t pick = rng.below(n);
    if (total > 0.0) {
      double r = rng.uniform() * total, run = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        run += best[i];
        if (run > r) {
          pick = i;
          break;
        }
      }
    }
    set_centroid(c, pick);
  }

  KMeansResult res;
  res.labels.assign(n, -1);
  for (std::size_t it = 0; it < max_iter; ++it) {
    detail::kmeans_distances(x, row_norms, cent, k, dist);
    bool changed = false;
    res.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int arg = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (dist[i * k + c] < dist[i * k + static_cast<std::size_t>(arg)]) arg = static_cast<int>(c);
      res.inertia += dist[i * k + static_cast<std::size_t>(arg)];
      if (arg != res.labels[i]) {
        res.labels[i] = arg;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<double> count(k, 0.0);
    std::fill(cent.begin(), cent.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto c = static_cast<std::size_t>(res.labels[i]);
      count[c] += 1.0;
      auto cols = x.row_cols(i);
      auto vals = x.row_values(i);
      for (std::size_t q = 0; q < cols.size(); ++q) cent[c * d + cols[q]] += vals[q];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] == 0.0) {
        // Empty cluster: reseed at the point farthest from its centroid.
        std::size_t far = 0;
        double fd = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          double di = dist[i * k + static_cast<std::size_t>(res.labels[i])];
          if (di > fd) {
            fd = di;
            far = i;
          }
        }
        set_centroid(c, far);
        continue;
      }
      for (std::size_t f = 0; f < d; ++f) cent[c * d + f] /= count[c];
    }
  }
  res.centroids = std::move(cent);
  return res;
}

}  // namespace detail

/// Lloyd's k-means with k-means++ seeding over sparse rows; the restart with
/// the lowest inertia wins.
inline KMeansResult kmeans(const SparseMatrix& x, std::size_t k, Rng& rng, std::size_t restarts = 10,
                           std::size_t max_iter = 100) {
  if (k < 1 || k > x.rows()) throw ConfigError("kmeans: need 1 <= k <= n");
  std::vector<double> row_norms(x.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (double v : x.row_values(i)) row_norms[i] += v * v;
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    auto res = detail::kmeans_once(x, row_norms, k, rng, max_iter);
    if (res.inertia < best.inertia) best = std::move(res);
  }
  return best;
}

}  // namespace hacd
