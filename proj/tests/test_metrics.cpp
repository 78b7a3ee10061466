#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <sstream>

#include "support.hpp"

namespace grace {
namespace {

using metrics::GeodesicIndex;
using U8 = std::vector<std::uint8_t>;

GeodesicIndex path_graph() {
  Matrix pts(3, 3);
  pts << 0, 0, 0,
         1, 0, 0,
         2, 0, 0;
  return GeodesicIndex::from_edges(3, {{0, 1}, {1, 2}}, pts, metrics::TopologyKind::kMesh);
}

TEST(Geodesic, PathGraphHandDijkstra) {
  const Index src[] = {0};
  const auto d = path_graph().distances_cm(src);
  EXPECT_DOUBLE_EQ(d[2], 200.0);
  EXPECT_DOUBLE_EQ(d[1], 100.0);
}

TEST(Geodesic, AllSourcesGiveZero) {
  const Index src[] = {0, 1, 2};
  for (double v : path_graph().distances_cm(src)) EXPECT_EQ(v, 0.0);
}

TEST(Geodesic, EmptySourcesThrow) {
  EXPECT_THROW(path_graph().distances_cm({}), std::invalid_argument);
}

TEST(Geodesic, MultiSourceMatchesPerSourceMinimum) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const auto [pts, topo] = testing::random_mesh(200, rng);
    const auto index = GeodesicIndex::from_mesh(pts, topo);
    std::vector<Index> sources{3, 50, 120, 177};
    const auto got = index.distances_cm(sources);
    std::vector<double> want(static_cast<std::size_t>(pts.rows()), std::numeric_limits<double>::infinity());
    for (Index s : sources) {
      const auto d = testing::dijkstra_single(pts, topo, s);
      for (std::size_t i = 0; i < d.size(); ++i) want[i] = std::min(want[i], d[i]);
    }
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(got[i], want[i] * metrics::kMetersToCm);
  }
}

TEST(Geodesic, KnnGraphIsSymmetric) {
  std::mt19937_64 rng(2);
  const Matrix pts = testing::random_matrix(60, 3, rng);
  const auto g = GeodesicIndex::from_knn(pts);
  EXPECT_EQ(g.kind(), metrics::TopologyKind::kKnn);
  for (Index v = 0; v < g.size(); ++v)
    for (Index u : g.neighbors(v)) {
      const auto back = g.neighbors(u);
      EXPECT_NE(std::find(back.begin(), back.end(), v), back.end());
    }
}

TEST(Detection, Examples) {
  auto d = metrics::detection_metrics(U8{1, 1, 0, 0}, U8{1, 0, 1, 0});
  EXPECT_DOUBLE_EQ(d.precision, 0.5);
  EXPECT_DOUBLE_EQ(d.recall, 0.5);
  EXPECT_DOUBLE_EQ(d.f1, 0.5);

  d = metrics::detection_metrics(U8{0, 1, 1}, U8{0, 1, 1});
  EXPECT_EQ(d.precision, 1.0);
  EXPECT_EQ(d.recall, 1.0);
  EXPECT_EQ(d.f1, 1.0);

  d = metrics::detection_metrics(U8{0, 0, 0}, U8{0, 1, 1});
  EXPECT_EQ(d.precision, 1.0);
  EXPECT_EQ(d.recall, 0.0);
  EXPECT_EQ(d.f1, 0.0);
}

TEST(Detection, LengthMismatchThrows) {
  EXPECT_THROW(metrics::detection_metrics(U8{1}, U8{1, 0}), std::invalid_argument);
}

TEST(Detection, InvariantUnderCommonPermutation) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution b(0.4);
  for (int trial = 0; trial < 20; ++trial) {
    U8 p(50), g(50);
    for (auto& v : p) v = b(rng);
    for (auto& v : g) v = b(rng);
    std::vector<std::size_t> perm(50);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    U8 pp(50), gp(50);
    for (std::size_t i = 0; i < 50; ++i) {
      pp[i] = p[perm[i]];
      gp[i] = g[perm[i]];
    }
    const auto a = metrics::detection_metrics(p, g);
    const auto c = metrics::detection_metrics(pp, gp);
    EXPECT_EQ(a.precision, c.precision);
    EXPECT_EQ(a.recall, c.recall);
    EXPECT_EQ(a.f1, c.f1);
  }
}

TEST(GeoSum, PerfectPredictionIsZero) {
  const auto g = path_graph();
  const auto e = metrics::geo_sum(U8{1, 0, 1}, U8{1, 0, 1}, g);
  EXPECT_EQ(e.fp_cm, 0.0);
  EXPECT_EQ(e.fn_cm, 0.0);
  EXPECT_EQ(e.sum_cm, 0.0);
}

TEST(GeoSum, SingleAdjacentFalsePositive) {
  // Vertex 1 sits 3 cm from the contact vertex 0.
  Matrix pts(3, 3);
  pts << 0, 0, 0,
         0.03, 0, 0,
         0.5, 0.5, 0;
  MeshTopology topo;
  topo.faces.push_back({0, 1, 2});
  const auto g = GeodesicIndex::from_mesh(pts, topo);
  const auto e = metrics::geo_sum(U8{1, 1, 0}, U8{1, 0, 0}, g);
  EXPECT_NEAR(e.fp_cm, 3.0, 1e-12);
  EXPECT_EQ(e.fn_cm, 0.0);
  EXPECT_NEAR(e.sum_cm, 3.0, 1e-12);
  EXPECT_EQ(e.fp_cm, e.sum_cm);  // legacy geo.err when FN is empty
}

TEST(GeoSum, SwapSymmetry) {
  std::mt19937_64 rng(4);
  const auto [pts, topo] = testing::random_mesh(120, rng, 0.0);
  const auto g = GeodesicIndex::from_mesh(pts, topo);
  std::bernoulli_distribution b(0.2);
  for (int trial = 0; trial < 10; ++trial) {
    U8 p(static_cast<std::size_t>(pts.rows())), t(p.size());
    for (auto& v : p) v = b(rng);
    for (auto& v : t) v = b(rng);
    const auto a = metrics::geo_sum(p, t, g);
    const auto s = metrics::geo_sum(t, p, g);
    EXPECT_EQ(a.fp_cm, s.fn_cm);
    EXPECT_EQ(a.fn_cm, s.fp_cm);
    EXPECT_EQ(a.sum_cm, a.fp_cm + a.fn_cm);
    EXPECT_EQ((a.sum_cm == 0.0), (p == t));
  }
}

TEST(GeoSum, EmptyReferenceChargesMaximumGeodesic) {
  const auto g = path_graph();
  const auto e = metrics::geo_sum(U8{1, 0, 0}, U8{0, 0, 0}, g);
  EXPECT_TRUE(e.capped);
  EXPECT_DOUBLE_EQ(e.fp_cm, 200.0);
  EXPECT_EQ(e.fn_cm, 0.0);
}

TEST(GeoSum, UnreachableVerticesAreCappedAndCounted) {
  Matrix pts(4, 3);
  pts << 0, 0, 0,
         0.1, 0, 0,
         5, 0, 0,
         5.2, 0, 0;
  const auto g = GeodesicIndex::from_edges(4, {{0, 1}, {2, 3}}, pts, metrics::TopologyKind::kMesh);
  const auto e = metrics::geo_sum(U8{0, 0, 1, 0}, U8{1, 0, 0, 0}, g);
  EXPECT_EQ(e.unreachable, 2u);  // FP at 2 cannot reach 0, FN at 0 cannot reach 2
  EXPECT_NEAR(e.fp_cm, 20.0, 1e-9);
  EXPECT_NEAR(e.fn_cm, 20.0, 1e-9);
}

TEST(Report, ColumnsAndFooter) {
  metrics::MetricsReport r;
  metrics::SampleMetrics s;
  s.id = "a";
  s.vertices = 3;
  s.detection = {0.5, 0.5, 0.5};
  s.geo = {3.0, 1.0, 4.0, 0, false};
  r.per_sample.push_back(s);
  r.finalize();
  std::ostringstream plain, legacy;
  metrics::write_csv(plain, r, false);
  metrics::write_csv(legacy, r, true);
  EXPECT_EQ(plain.str().substr(0, plain.str().find('\n')),
            "sample_id,n_vertices,topology,precision,recall,f1,geo_sum_cm,unreachable");
  EXPECT_EQ(legacy.str().substr(0, legacy.str().find('\n')),
            "sample_id,n_vertices,topology,precision,recall,f1,geo_err_cm,geo_err_fn_cm,geo_sum_cm,unreachable");
  EXPECT_NE(plain.str().find("MEAN,1,knn,0.500000,0.500000,0.500000,4.0000,0"), std::string::npos);
  EXPECT_NE(legacy.str().find("3.0000,1.0000,4.0000"), std::string::npos);
}

}  // namespace
}  // namespace grace
