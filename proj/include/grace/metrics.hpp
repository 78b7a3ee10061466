#pragma once

// Evaluation metrics: vertex-level detection scores and geodesic contact
// errors on a mesh (or k-NN) edge graph.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <queue>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "grace/geometry.hpp"
#include "grace/types.hpp"

namespace grace::metrics {

inline constexpr double kMetersToCm = 100.0;
inline constexpr Index kKnnTopologyNeighbors = 6;
inline constexpr double kUnreachable = std::numeric_limits<double>::infinity();

enum class TopologyKind : std::uint8_t { kMesh, kKnn };

inline const char* to_string(TopologyKind k) { return k == TopologyKind::kMesh ? "mesh" : "knn"; }

/// Undirected weighted edge graph in compressed adjacency form. Weights are
/// Euclidean edge lengths in meters. Immutable once built.
class GeodesicIndex {
 public:
  GeodesicIndex() = default;

  static GeodesicIndex from_edges(Index n, std::vector<std::pair<Index, Index>> edges, const Matrix& points,
                                  TopologyKind kind) {
    for (auto& [a, b] : edges) {
      if (a < 0 || b < 0 || a >= n || b >= n) throw std::invalid_argument("GeodesicIndex: edge index out of range");
      if (a > b) std::swap(a, b);
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    GeodesicIndex g;
    g.kind_ = kind;
    g.offsets_.assign(static_cast<std::size_t>(n + 1), 0);
    for (const auto& [a, b] : edges) {
      if (a == b) continue;
      ++g.offsets_[static_cast<std::size_t>(a + 1)];
      ++g.offsets_[static_cast<std::size_t>(b + 1)];
    }
    for (std::size_t i = 1; i < g.offsets_.size(); ++i) g.offsets_[i] += g.offsets_[i - 1];
    g.targets_.resize(static_cast<std::size_t>(g.offsets_.back()));
    g.weights_.resize(g.targets_.size());
    std::vector<Index> fill(g.offsets_.begin(), g.offsets_.end() - 1);
    for (const auto& [a, b] : edges) {
      if (a == b) continue;
      const double w = (points.row(a) - points.row(b)).norm();
      auto put = [&](Index from, Index to) {
        const auto at = static_cast<std::size_t>(fill[static_cast<std::size_t>(from)]++);
        g.targets_[at] = to;
        g.weights_[at] = w;
      };
      put(a, b);
      put(b, a);
    }
    return g;
  }

  static GeodesicIndex from_mesh(const Matrix& points, const MeshTopology& topo) {
    std::vector<std::pair<Index, Index>> edges;
    edges.reserve(topo.faces.size() * 3);
    for (const auto& f : topo.faces)
      for (int e = 0; e < 3; ++e)
        edges.emplace_back(f[static_cast<std::size_t>(e)], f[static_cast<std::size_t>((e + 1) % 3)]);
    return from_edges(points.rows(), std::move(edges), points, TopologyKind::kMesh);
  }

  /// Symmetrized k-nearest-neighbour graph, used when no faces exist.
  static GeodesicIndex from_knn(const Matrix& points, Index k = kKnnTopologyNeighbors) {
    const Index kk = std::min<Index>(k + 1, points.rows());
    const auto nb = geometry::knn(points, points, kk);
    std::vector<std::pair<Index, Index>> edges;
    edges.reserve(nb.index.size());
    for (Index i = 0; i < points.rows(); ++i)
      for (Index j = 0; j < kk; ++j) {
        const Index other = nb.index[static_cast<std::size_t>(i * kk + j)];
        if (other != i) edges.emplace_back(i, other);
      }
    return from_edges(points.rows(), std::move(edges), points, TopologyKind::kKnn);
  }

  Index size() const { return offsets_.empty() ? 0 : static_cast<Index>(offsets_.size()) - 1; }
  TopologyKind kind() const { return kind_; }

  /// Multi-source shortest-path distance along edges, in centimeters.
  /// Unreachable vertices get +infinity.
  std::vector<double> distances_cm(std::span<const Index> sources) const {
    if (sources.empty()) throw std::invalid_argument("geodesic_distances: empty source set");
    const Index n = size();
    std::vector<double> dist(static_cast<std::size_t>(n), kUnreachable);
    using Item = std::pair<double, Index>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    for (Index s : sources) {
      if (s < 0 || s >= n) throw std::invalid_argument("geodesic_distances: source out of range");
      dist[static_cast<std::size_t>(s)] = 0;
      heap.emplace(0.0, s);
    }
    while (!heap.empty()) {
      const auto [d, u] = heap.top();
      heap.pop();
      if (d > dist[static_cast<std::size_t>(u)]) continue;
      for (Index e = offsets_[static_cast<std::size_t>(u)]; e < offsets_[static_cast<std::size_t>(u + 1)]; ++e) {
        const Index v = targets_[static_cast<std::size_t>(e)];
        const double nd = d + weights_[static_cast<std::size_t>(e)];
        if (nd < dist[static_cast<std::size_t>(v)]) {
          dist[static_cast<std::size_t>(v)] = nd;
          heap.emplace(nd, v);
        }
      }
    }
    for (auto& d : dist) d *= kMetersToCm;
    return dist;
  }

  /// Largest finite geodesic distance between any two vertices, in cm.
  double max_geodesic_cm() const {
    double best = 0;
    for (Index s = 0; s < size(); ++s) {
      const Index src[] = {s};
      for (double d : distances_cm(src))
        if (d != kUnreachable) best = std::max(best, d);
    }
    return best;
  }

  std::span<const Index> neighbors(Index v) const {
    const auto b = static_cast<std::size_t>(offsets_[static_cast<std::size_t>(v)]);
    const auto e = static_cast<std::size_t>(offsets_[static_cast<std::size_t>(v + 1)]);
    return {targets_.data() + b, e - b};
  }
  std::span<const double> neighbor_weights(Index v) const {
    const auto b = static_cast<std::size_t>(offsets_[static_cast<std::size_t>(v)]);
    const auto e = static_cast<std::size_t>(offsets_[static_cast<std::size_t>(v + 1)]);
    return {weights_.data() + b, e - b};
  }

 private:
  TopologyKind kind_ = TopologyKind::kMesh;
  std::vector<Index> offsets_;
  std::vector<Index> targets_;
  std::vector<double> weights_;
};

// ---------------------------------------------------------------------------
// Detection metrics

struct Detection {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

/// Vertex-level precision/recall/F1. Conventions: precision is 1 when
/// nothing is predicted, recall is 1 when the ground truth is empty, and
/// F1 is 0 when precision + recall is 0.
inline Detection detection_metrics(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("detection_metrics: length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool g = gt[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  Detection d;
  d.precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  d.recall = tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  d.f1 = d.precision + d.recall == 0 ? 0.0 : 2 * d.precision * d.recall / (d.precision + d.recall);
  return d;
}

// ---------------------------------------------------------------------------
// Geodesic errors

struct GeoErrors {
  double fp_cm = 0;   // legacy geo.err
  double fn_cm = 0;
  double sum_cm = 0;  // geo.sum
  std::size_t unreachable = 0;
  bool capped = false;
};

namespace detail {

// Mean distance from `errors` to the nearest member of `reference`.
inline double directed_error(const GeodesicIndex& index, const std::vector<Index>& errors,
                             const std::vector<Index>& reference, double& cap, bool& cap_known,
                             GeoErrors& diag) {
  if (errors.empty()) return 0.0;
  auto penalty = [&]() {
    if (!cap_known) {
      cap = index.max_geodesic_cm();
      cap_known = true;
    }
    diag.capped = true;
    return cap;
  };
  if (reference.empty()) return penalty();
  const auto dist = index.distances_cm(reference);
  double total = 0;
  for (Index v : errors) {
    double d = dist[static_cast<std::size_t>(v)];
    if (d == kUnreachable) {
      ++diag.unreachable;
      d = penalty();
    }
    total += d;
  }
  return total / static_cast<double>(errors.size());
}

}  // namespace detail

/// Bidirectional geodesic error. The FP term averages, over false-positive
/// vertices, the distance to the nearest ground-truth contact; the FN term
/// averages, over false negatives, the distance to the nearest predicted
/// contact. A term whose reference set is empty, or whose vertex is
/// unreachable, is charged the mesh's maximum geodesic distance.
inline GeoErrors geo_sum(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                         const GeodesicIndex& index) {
  if (pred.size() != gt.size()) throw std::invalid_argument("geo_sum: length mismatch");
  if (static_cast<Index>(pred.size()) != index.size()) throw std::invalid_argument("geo_sum: topology size mismatch");
  std::vector<Index> fp, fn, pred_set, gt_set;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool g = gt[i] != 0;
    const auto v = static_cast<Index>(i);
    if (p) pred_set.push_back(v);
    if (g) gt_set.push_back(v);
    if (p && !g) fp.push_back(v);
    if (!p && g) fn.push_back(v);
  }
  GeoErrors out;
  double cap = 0;
  bool cap_known = false;
  out.fp_cm = detail::directed_error(index, fp, gt_set, cap, cap_known, out);
  out.fn_cm = detail::directed_error(index, fn, pred_set, cap, cap_known, out);
  out.sum_cm = out.fp_cm + out.fn_cm;
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct SampleMetrics {
  std::string id;
  Index vertices = 0;
  TopologyKind topology = TopologyKind::kKnn;
  Detection detection;
  GeoErrors geo;
};

struct MetricsReport {
  std::vector<SampleMetrics> per_sample;
  Detection mean_detection;
  double mean_geo_err_fp = 0;
  double mean_geo_err_fn = 0;
  double mean_geo_sum = 0;

  void finalize() {
    const auto n = static_cast<double>(per_sample.size());
    mean_detection = {};
    mean_geo_err_fp = mean_geo_err_fn = mean_geo_sum = 0;
    if (per_sample.empty()) return;
    for (const auto& s : per_sample) {
      mean_detection.precision += s.detection.precision;
      mean_detection.recall += s.detection.recall;
      mean_detection.f1 += s.detection.f1;
      mean_geo_err_fp += s.geo.fp_cm;
      mean_geo_err_fn += s.geo.fn_cm;
      mean_geo_sum += s.geo.sum_cm;
    }
    mean_detection.precision /= n;
    mean_detection.recall /= n;
    mean_detection.f1 /= n;
    mean_geo_err_fp /= n;
    mean_geo_err_fn /= n;
    mean_geo_sum /= n;
  }

  bool any_knn() const {
    return std::any_of(per_sample.begin(), per_sample.end(),
                       [](const auto& s) { return s.topology == TopologyKind::kKnn; });
  }
};

/// Column order of the tabular report. The two legacy columns appear only
/// when requested.
inline std::vector<std::string> report_columns(bool legacy_geo_err) {
  std::vector<std::string> cols{"sample_id", "n_vertices", "topology", "precision", "recall", "f1"};
  if (legacy_geo_err) {
    cols.emplace_back("geo_err_cm");
    cols.emplace_back("geo_err_fn_cm");
  }
  cols.emplace_back("geo_sum_cm");
  cols.emplace_back("unreachable");
  return cols;
}

namespace detail {

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline std::vector<std::vector<std::string>> report_rows(const MetricsReport& r, bool legacy) {
  std::vector<std::vector<std::string>> rows;
  auto push = [&](const std::string& id, const std::string& n, const std::string& topo, const Detection& d,
                  double fp, double fn, double sum, const std::string& unreachable) {
    std::vector<std::string> row{id, n, topo, fixed(d.precision, 6), fixed(d.recall, 6), fixed(d.f1, 6)};
    if (legacy) {
      row.push_back(fixed(fp, 4));
      row.push_back(fixed(fn, 4));
    }
    row.push_back(fixed(sum, 4));
    row.push_back(unreachable);
    rows.push_back(std::move(row));
  };
  std::size_t unreachable = 0;
  for (const auto& s : r.per_sample) {
    push(s.id, std::to_string(s.vertices), to_string(s.topology), s.detection, s.geo.fp_cm, s.geo.fn_cm,
         s.geo.sum_cm, std::to_string(s.geo.unreachable));
    unreachable += s.geo.unreachable;
  }
  push("MEAN", std::to_string(r.per_sample.size()), r.any_knn() ? "knn" : "mesh", r.mean_detection,
       r.mean_geo_err_fp, r.mean_geo_err_fn, r.mean_geo_sum, std::to_string(unreachable));
  return rows;
}

}  // namespace detail

inline void write_csv(std::ostream& os, const MetricsReport& r, bool legacy_geo_err) {
  const auto cols = report_columns(legacy_geo_err);
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << "\n";
  for (const auto& row : detail::report_rows(r, legacy_geo_err)) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << "\n";
  }
}

inline void write_table(std::ostream& os, const MetricsReport& r, bool legacy_geo_err) {
  const auto cols = report_columns(legacy_geo_err);
  const auto rows = detail::report_rows(r, legacy_geo_err);
  std::vector<std::size_t> width(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) width[i] = cols[i].size();
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      os << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << (i == 0 ? std::left : std::right)
         << cells[i];
    os << "\n";
  };
  line(cols);
  std::size_t total = 0;
  for (auto w : width) total += w + 2;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i + 1 == rows.size()) os << std::string(total - 2, '-') << "\n";
    line(rows[i]);
  }
  if (r.any_knn()) os << "note: geodesics use a " << kKnnTopologyNeighbors << "-NN graph where faces are absent\n";
}

}  // namespace grace::metrics
