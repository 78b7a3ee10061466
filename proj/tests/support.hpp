#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <utility>
#include <random>
#include <string>
#include <vector>

#include "grace/grace.hpp"

namespace grace::testing {

/// Reduced architecture for fast tests: 32x32 images, stride 8, C = 16.
inline ModelConfig tiny_model(Index image = 32) {
  ModelConfig m;
  m.image_height = image;
  m.image_width = image;
  m.image.stage_channels = {8, 12, 16};
  m.image.out_channels = 16;
  m.points.levels = {{64, 0.2, 8, {16, 16}}, {16, 0.4, 8, {16, 16}}};
  m.hfem.part_hidden = {16};
  m.hfem.part_channels = 8;
  m.mffm.projection_dim = 8;
  m.mffm.global_width = 8;
  m.mffm.fusion_hidden = 16;
  m.mffm.fused_width = 16;
  m.decoder.level_channels = {16, 16};
  m.decoder.head_hidden = 8;
  return m;
}

inline synthetic::GenerateOptions sample_options(Index image, Index points) {
  synthetic::GenerateOptions o;
  o.image_height = image;
  o.image_width = image;
  o.n_points = points;
  return o;
}

inline synthetic::GeneratedSample make_sample(std::uint64_t seed, Index image = 32, Index points = 256) {
  return synthetic::generate_sample(synthetic::sample_seed(seed, 0), sample_options(image, points),
                                    "s" + std::to_string(seed));
}

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

/// Central-difference gradient of a scalar function of x.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h) {
  Matrix g(x.rows(), x.cols());
  Matrix xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double x0 = xp.data()[i];
    xp.data()[i] = x0 + h;
    const double fp = f(xp);
    xp.data()[i] = x0 - h;
    const double fm = f(xp);
    xp.data()[i] = x0;
    g.data()[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// Analytic gradient of a scalar op at x.
inline Matrix analytic_gradient(const std::function<ag::Var(const ag::Var&)>& f, const Matrix& x) {
  ag::Var v = ag::Var::parameter(x);
  ag::backward(f(v));
  return v.has_grad() ? v.grad() : Matrix::Zero(x.rows(), x.cols());
}

/// max |a - n| / max(1, |n|) elementwise.
inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
  double worst = 0;
  for (Index i = 0; i < numeric.size(); ++i) {
    const double n = numeric.data()[i];
    worst = std::max(worst, std::abs(analytic.data()[i] - n) / std::max(1.0, std::abs(n)));
  }
  return worst;
}

inline double gradient_error(const std::function<ag::Var(const ag::Var&)>& f, const Matrix& x, double h = 1e-5) {
  const Matrix a = analytic_gradient(f, x);
  const Matrix n = numeric_gradient([&](const Matrix& m) { return f(ag::Var::constant(m)).item(); }, x, h);
  return relative_error(a, n);
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("grace_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Jittered grid triangulation with about `n` vertices; a random subset of
/// faces is dropped so some meshes split into several components.
inline std::pair<Matrix, MeshTopology> random_mesh(Index n, std::mt19937_64& rng, double drop = 0.1) {
  const Index cols = std::max<Index>(2, static_cast<Index>(std::sqrt(static_cast<double>(n))));
  const Index rows = std::max<Index>(2, n / cols);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3), u01(0, 1);
  Matrix pts(rows * cols, 3);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      pts.row(r * cols + c) << 0.01 * (c + jitter(rng)), 0.01 * (r + jitter(rng)), 0.005 * jitter(rng);
  MeshTopology topo;
  auto id = [cols](Index r, Index c) { return static_cast<std::uint32_t>(r * cols + c); };
  for (Index r = 0; r + 1 < rows; ++r)
    for (Index c = 0; c + 1 < cols; ++c) {
      if (u01(rng) >= drop) topo.faces.push_back({id(r, c), id(r, c + 1), id(r + 1, c)});
      if (u01(rng) >= drop) topo.faces.push_back({id(r, c + 1), id(r + 1, c + 1), id(r + 1, c)});
    }
  return {pts, topo};
}

/// Single-source Dijkstra by repeated linear scans over a dense adjacency
/// list, in meters. Deliberately independent of the production code path.
inline std::vector<double> dijkstra_single(const Matrix& pts, const MeshTopology& topo, Index source) {
  const Index n = pts.rows();
  std::vector<std::vector<std::pair<Index, double>>> adj(static_cast<std::size_t>(n));
  for (const auto& f : topo.faces)
    for (int e = 0; e < 3; ++e) {
      const Index a = f[static_cast<std::size_t>(e)], b = f[static_cast<std::size_t>((e + 1) % 3)];
      const double w = (pts.row(a) - pts.row(b)).norm();
      adj[static_cast<std::size_t>(a)].emplace_back(b, w);
      adj[static_cast<std::size_t>(b)].emplace_back(a, w);
    }
  std::vector<double> dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::vector<char> done(static_cast<std::size_t>(n), 0);
  dist[static_cast<std::size_t>(source)] = 0;
  for (Index it = 0; it < n; ++it) {
    Index u = -1;
    for (Index v = 0; v < n; ++v)
      if (!done[static_cast<std::size_t>(v)] && (u < 0 || dist[static_cast<std::size_t>(v)] < dist[static_cast<std::size_t>(u)])) u = v;
    if (u < 0 || !std::isfinite(dist[static_cast<std::size_t>(u)])) break;
    done[static_cast<std::size_t>(u)] = 1;
    for (const auto& [v, w] : adj[static_cast<std::size_t>(u)])
      dist[static_cast<std::size_t>(v)] = std::min(dist[static_cast<std::size_t>(v)], dist[static_cast<std::size_t>(u)] + w);
  }
  return dist;
}

}  // namespace grace::testing
