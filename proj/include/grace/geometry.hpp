#pragma once

// Point-set primitives: farthest point sampling, ball query, k-nearest
// neighbours. All selection rules break ties on coordinates, never on
// storage order, so results depend only on the geometry of the input.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "grace/autograd.hpp"

namespace grace::geometry {

/// Lexicographic (x, y, z) ordering of two rows of an (N x 3) matrix.
inline bool lex_less(const Matrix& pts, Index a, Index b) {
  for (int c = 0; c < 3; ++c) {
    if (pts(a, c) < pts(b, c)) return true;
    if (pts(b, c) < pts(a, c)) return false;
  }
  return false;
}

inline double squared_distance(const Matrix& a, Index i, const Matrix& b, Index j) {
  const double dx = a(i, 0) - b(j, 0);
  const double dy = a(i, 1) - b(j, 1);
  const double dz = a(i, 2) - b(j, 2);
  return dx * dx + dy * dy + dz * dz;
}

/// Iterative max-min sampling of k indices from (N x 3) points.
///
/// Seeds at the lexicographically smallest point; each later pick maximizes
/// the distance to the selected set, ties resolved lexicographically.
inline std::vector<Index> farthest_point_sample(const Matrix& points, Index k) {
  const Index n = points.rows();
  if (k > n) throw std::invalid_argument("farthest_point_sample: k exceeds point count");
  if (k <= 0) return {};

  Index seed = 0;
  for (Index i = 1; i < n; ++i)
    if (lex_less(points, i, seed)) seed = i;

  std::vector<Index> picked{seed};
  picked.reserve(static_cast<std::size_t>(k));
  std::vector<char> selected(static_cast<std::size_t>(n), 0);
  selected[static_cast<std::size_t>(seed)] = 1;
  std::vector<double> min_d(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());

  Index last = seed;
  while (static_cast<Index>(picked.size()) < k) {
    Index best = -1;
    double best_d = -1;
    for (Index i = 0; i < n; ++i) {
      if (selected[static_cast<std::size_t>(i)]) continue;
      double& m = min_d[static_cast<std::size_t>(i)];
      m = std::min(m, squared_distance(points, i, points, last));
      if (best < 0 || m > best_d || (m == best_d && lex_less(points, i, best))) {
        best = i;
        best_d = m;
      }
    }
    selected[static_cast<std::size_t>(best)] = 1;
    picked.push_back(best);
    last = best;
  }
  return picked;
}

namespace detail {

struct Candidate {
  double d2;
  Index index;
};

inline auto candidate_order(const Matrix& pts) {
  return [&pts](const Candidate& a, const Candidate& b) {
    if (a.d2 != b.d2) return a.d2 < b.d2;
    if (lex_less(pts, a.index, b.index)) return true;
    if (lex_less(pts, b.index, a.index)) return false;
    return a.index < b.index;
  };
}

}  // namespace detail

/// Up to k neighbours of each center within `radius`, nearest first. Short
/// neighbourhoods are padded with their nearest member; an empty ball falls
/// back to the single nearest point. Returns M*k indices, center-major.
inline std::vector<Index> ball_query(const Matrix& centers, const Matrix& points, double radius, Index k) {
  if (k <= 0) throw std::invalid_argument("ball_query: k must be positive");
  if (points.rows() == 0) throw std::invalid_argument("ball_query: empty point set");
  const double r2 = radius * radius;
  const auto order = detail::candidate_order(points);
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(centers.rows() * k));
  std::vector<detail::Candidate> cand;
  for (Index c = 0; c < centers.rows(); ++c) {
    cand.clear();
    detail::Candidate nearest{std::numeric_limits<double>::infinity(), -1};
    for (Index i = 0; i < points.rows(); ++i) {
      const double d2 = squared_distance(centers, c, points, i);
      if (d2 <= r2) cand.push_back({d2, i});
      if (nearest.index < 0 || order({d2, i}, nearest)) nearest = {d2, i};
    }
    if (cand.empty()) cand.push_back(nearest);
    const auto take = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(k));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(), order);
    for (std::size_t j = 0; j < static_cast<std::size_t>(k); ++j)
      out.push_back(cand[j < take ? j : 0].index);
  }
  return out;
}

struct Neighbors {
  std::vector<Index> index;   // queries * k, query-major
  std::vector<double> dist2;  // matching squared distances
  Index k = 0;
};

/// k nearest sources for every query row, nearest first.
inline Neighbors knn(const Matrix& queries, const Matrix& sources, Index k) {
  if (k <= 0 || k > sources.rows()) throw std::invalid_argument("knn: k out of range");
  const auto order = detail::candidate_order(sources);
  Neighbors nb;
  nb.k = k;
  nb.index.reserve(static_cast<std::size_t>(queries.rows() * k));
  nb.dist2.reserve(nb.index.capacity());
  std::vector<detail::Candidate> cand(static_cast<std::size_t>(sources.rows()));
  for (Index q = 0; q < queries.rows(); ++q) {
    for (Index i = 0; i < sources.rows(); ++i)
      cand[static_cast<std::size_t>(i)] = {squared_distance(queries, q, sources, i), i};
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), order);
    for (Index j = 0; j < k; ++j) {
      nb.index.push_back(cand[static_cast<std::size_t>(j)].index);
      nb.dist2.push_back(cand[static_cast<std::size_t>(j)].d2);
    }
  }
  return nb;
}

inline constexpr double kIdwEpsilon = 1e-8;

/// Inverse-distance interpolation operator from `sources` to `targets`
/// using the 3 nearest sources (fewer when the source set is smaller),
/// weights 1/(d^2 + eps) normalized. Returned as a sparse
/// (sources x targets) matrix so features (C x sources) map by right
/// multiplication.
inline SparseMatrix idw_operator(const Matrix& targets, const Matrix& sources, Index neighbors = 3) {
  const Index k = std::min<Index>(neighbors, sources.rows());
  const Neighbors nb = knn(targets, sources, k);
  std::vector<Eigen::Triplet<Scalar>> trip;
  trip.reserve(static_cast<std::size_t>(targets.rows() * k));
  for (Index t = 0; t < targets.rows(); ++t) {
    double total = 0;
    for (Index j = 0; j < k; ++j) total += 1.0 / (nb.dist2[static_cast<std::size_t>(t * k + j)] + kIdwEpsilon);
    for (Index j = 0; j < k; ++j) {
      const auto at = static_cast<std::size_t>(t * k + j);
      trip.emplace_back(nb.index[at], t, (1.0 / (nb.dist2[at] + kIdwEpsilon)) / total);
    }
  }
  SparseMatrix op(sources.rows(), targets.rows());
  op.setFromTriplets(trip.begin(), trip.end());
  return op;
}

}  // namespace grace::geometry
