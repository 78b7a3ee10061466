#include <gtest/gtest.h>

#include <map>
#include <numeric>
#include <random>

#include "support.hpp"

namespace grace {
namespace {

using ag::Var;
using testing::random_matrix;

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

ImageInput random_image(Index h, Index w, std::mt19937_64& rng) {
  return {random_matrix(3, h * w, rng), h, w};
}

std::vector<Index> random_permutation(Index n, std::mt19937_64& rng) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

Matrix permute_rows(const Matrix& m, const std::vector<Index>& perm) {
  Matrix out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
  return out;
}

Matrix permute_cols(const Matrix& m, const std::vector<Index>& perm) {
  Matrix out(m.rows(), m.cols());
  for (Index i = 0; i < m.cols(); ++i) out.col(i) = m.col(perm[static_cast<std::size_t>(i)]);
  return out;
}

// ---------------------------------------------------------------------------
// Image encoder

TEST(ImageEncoder, DefaultGridShape) {
  nn::ParamStore store;
  nn::Rng rng(1);
  ImageEncoderConfig cfg;
  ImageEncoder enc(store, cfg, rng);
  std::mt19937_64 data(1);
  const auto f = enc.forward(random_image(224, 224, data));
  EXPECT_EQ(f.height, 28);
  EXPECT_EQ(f.width, 28);
  EXPECT_EQ(f.stride, 8);
  EXPECT_EQ(f.scene.rows(), 128);
  EXPECT_EQ(f.scene.cols(), 28 * 28);
  EXPECT_EQ(f.part.rows(), 128);
  EXPECT_EQ(f.part.cols(), 28 * 28);
  EXPECT_TRUE(f.scene.value().allFinite());
  EXPECT_EQ(f.scene_grid().channels(), 128);
}

TEST(ImageEncoder, ZeroImageGivesZeroGrids) {
  nn::ParamStore store;
  nn::Rng rng(2);
  ImageEncoder enc(store, testing::tiny_model().image, rng);
  const auto f = enc.forward({Matrix::Zero(3, 32 * 32), 32, 32});
  EXPECT_EQ(max_abs(f.scene.value()), 0.0);
  EXPECT_EQ(max_abs(f.part.value()), 0.0);
}

TEST(ImageEncoder, StrideMismatchThrows) {
  nn::ParamStore store;
  nn::Rng rng(3);
  ImageEncoder enc(store, testing::tiny_model().image, rng);
  EXPECT_THROW(enc.forward({Matrix::Zero(3, 30 * 32), 30, 32}), std::invalid_argument);
}

TEST(ImageEncoder, CircularPaddingTranslationEquivariance) {
  nn::ParamStore store;
  nn::Rng rng(4);
  auto cfg = testing::tiny_model().image;
  cfg.pad_mode = ag::PadMode::kCircular;
  ImageEncoder enc(store, cfg, rng);
  for (auto& e : store.entries())
    if (e.name.ends_with(".bias")) e.var.mutable_value().setRandom();
  std::mt19937_64 data(4);
  const Index h = 32, w = 40, s = 8;
  const ImageInput img = random_image(h, w, data);
  // Shift right by one stride unit (circularly).
  ImageInput shifted = img;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) shifted.pixels.col(y * w + (x + s) % w) = img.pixels.col(y * w + x);
  const auto a = enc.forward(img);
  const auto b = enc.forward(shifted);
  const Index gh = a.height, gw = a.width;
  for (Index y = 0; y < gh; ++y)
    for (Index x = 0; x < gw; ++x) {
      EXPECT_LT(max_abs(b.scene.value().col(y * gw + (x + 1) % gw) - a.scene.value().col(y * gw + x)), 1e-5);
      EXPECT_LT(max_abs(b.part.value().col(y * gw + (x + 1) % gw) - a.part.value().col(y * gw + x)), 1e-5);
    }
}

TEST(ImageEncoder, SharedTrunkHasFewerParameters) {
  auto cfg = testing::tiny_model().image;
  nn::ParamStore two, one;
  nn::Rng r1(5), r2(5);
  ImageEncoder a(two, cfg, r1);
  cfg.shared_trunk = true;
  ImageEncoder b(one, cfg, r2);
  EXPECT_LT(one.parameter_count(), two.parameter_count());
  std::mt19937_64 data(5);
  const auto f = b.forward(random_image(32, 32, data));
  EXPECT_EQ(f.part.rows(), f.scene.rows());
}

// ---------------------------------------------------------------------------
// Point encoder

PointEncoderConfig two_levels(Index a, Index b, Index c = 16) {
  PointEncoderConfig cfg;
  cfg.levels = {{a, 0.2, 8, {16, c}}, {b, 0.4, 8, {16, c}}};
  return cfg;
}

TEST(PointEncoder, ShapesAndSamplingIndex) {
  nn::ParamStore store;
  nn::Rng rng(6);
  PointEncoder enc(store, two_levels(512, 128), rng);
  std::mt19937_64 data(6);
  const Matrix cloud = normalize_cloud(random_matrix(1024, 3, data));
  const auto e = enc.forward(cloud);
  const PointFeatures pf = e.value();
  EXPECT_EQ(pf.size(), 128);
  EXPECT_EQ(pf.data.cols(), 128);
  ASSERT_EQ(e.skips.levels.size(), 3u);
  EXPECT_EQ(e.skips.levels[0].coords, cloud);
  for (const auto& lvl : e.skips.levels) {
    std::set<Index> unique(lvl.sampling_index.begin(), lvl.sampling_index.end());
    EXPECT_EQ(unique.size(), lvl.sampling_index.size());
    for (Index i = 0; i < lvl.coords.rows(); ++i)
      EXPECT_EQ(lvl.coords.row(i), cloud.row(lvl.sampling_index[static_cast<std::size_t>(i)]));
  }
}

TEST(PointEncoder, TooFewPointsThrows) {
  nn::ParamStore store;
  nn::Rng rng(7);
  PointEncoder enc(store, two_levels(100, 20), rng);
  std::mt19937_64 data(7);
  EXPECT_THROW(enc.forward(random_matrix(80, 3, data)), std::invalid_argument);
}

TEST(PointEncoder, PermutedCloudGivesAlignedFeatures) {
  nn::ParamStore store;
  nn::Rng rng(8);
  PointEncoder enc(store, two_levels(128, 32), rng);
  std::mt19937_64 data(8);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix cloud = normalize_cloud(random_matrix(300, 3, data));
    const auto perm = random_permutation(300, data);
    const Matrix shuffled = permute_rows(cloud, perm);
    const auto a = enc.forward(cloud).value();
    const auto b = enc.forward(shuffled).value();
    ASSERT_EQ(a.size(), b.size());
    for (Index i = 0; i < a.size(); ++i) {
      // Same coordinate, reached through the two different index maps.
      EXPECT_EQ(a.coords.row(i), b.coords.row(i));
      EXPECT_EQ(perm[static_cast<std::size_t>(b.sampling_index[static_cast<std::size_t>(i)])],
                a.sampling_index[static_cast<std::size_t>(i)]);
    }
    EXPECT_LT(max_abs(a.data - b.data), 1e-4);
  }
}

TEST(PointEncoder, DuplicatedCloudSelectsSameCoordinates) {
  nn::ParamStore store;
  nn::Rng rng(9);
  PointEncoder enc(store, two_levels(64, 16), rng);
  std::mt19937_64 data(9);
  const Matrix cloud = normalize_cloud(random_matrix(100, 3, data));
  Matrix twice(200, 3);
  twice << cloud, cloud;
  EXPECT_EQ(enc.forward(cloud).value().coords, enc.forward(twice).value().coords);
}

// ---------------------------------------------------------------------------
// HFEM

struct HfemRig {
  nn::ParamStore store;
  nn::Rng rng{10};
  HfemConfig cfg;
  Hfem hfem;

  explicit HfemRig(Index c = 16, Index grid = 4, Index stride = 8) {
    cfg.part_hidden = {16, 16};
    cfg.part_channels = 8;
    hfem = Hfem(store, cfg, c, rng, true, grid, grid, stride);
  }
};

TEST(Hfem, PointPartShapeAndZeroPath) {
  HfemRig rig;
  std::mt19937_64 data(10);
  const Var fh = Var::constant(random_matrix(16, 128, data));
  EXPECT_EQ(rig.hfem.project_point_parts(fh).rows(), 24);
  EXPECT_EQ(rig.hfem.project_point_parts(fh).cols(), 128);
  rig.hfem.part_mlp().layers().back().weight().mutable_value().setZero();
  EXPECT_EQ(max_abs(rig.hfem.project_point_parts(Var::constant(Matrix::Zero(16, 128))).value()), 0.0);
  EXPECT_EQ(max_abs(rig.hfem.project_point_parts(fh).value()), 0.0);
}

TEST(Hfem, PointPartProjectionIsPointwise) {
  HfemRig rig;
  std::mt19937_64 data(11);
  const Matrix fh = random_matrix(16, 40, data);
  const auto perm = random_permutation(40, data);
  const Matrix a = rig.hfem.project_point_parts(Var::constant(fh)).value();
  const Matrix b = rig.hfem.project_point_parts(Var::constant(permute_cols(fh, perm))).value();
  EXPECT_EQ(b, permute_cols(a, perm));
}

TEST(Hfem, ImagePartProjectionNonNegativeAndZeroPreserving) {
  std::mt19937_64 data(12);
  for (bool training : {true, false}) {
    HfemRig rig;  // fresh running statistics
    const Matrix fp = random_matrix(16, 16, data, -5, 5);
    const Matrix out = rig.hfem.project_image_parts(Var::constant(fp), 4, 4, training).value();
    EXPECT_EQ(out.rows(), 8);
    EXPECT_GE(out.minCoeff(), 0.0);
    EXPECT_EQ(max_abs(rig.hfem.project_image_parts(Var::constant(Matrix::Zero(16, 16)), 4, 4, training).value()),
              0.0);
  }
}

TEST(Hfem, ImagePartProjectionMatchesDirectConvolution) {
  HfemRig rig;
  std::mt19937_64 data(13);
  const Index h = 4, w = 5, cin = 16;
  const Matrix fp = random_matrix(cin, h * w, data);
  // Fresh running statistics (mean 0, var 1) in inference mode.
  const Matrix out = rig.hfem.project_image_parts(Var::constant(fp), h, w, false).value();
  const Matrix& wt = rig.hfem.part_conv().weight().value();
  const Matrix& b = rig.hfem.part_conv().bias().value();
  for (Index o = 0; o < 8; ++o)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        double acc = b(o, 0);
        for (Index c = 0; c < cin; ++c)
          for (Index ky = 0; ky < 3; ++ky)
            for (Index kx = 0; kx < 3; ++kx) {
              const Index yy = y + ky - 1, xx = x + kx - 1;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              acc += wt(o, (c * 3 + ky) * 3 + kx) * fp(c, yy * w + xx);
            }
        const double expected = std::max(0.0, acc / std::sqrt(1.0 + 1e-5));
        EXPECT_NEAR(out(o, y * w + x), expected, 1e-5);
      }
}

TEST(Hfem, SelfAttentionSingleLocationIsValueProjection) {
  HfemRig rig;
  std::mt19937_64 data(14);
  const Matrix fi = random_matrix(16, 1, data);
  const Matrix out = rig.hfem.scene_self_attention(Var::constant(fi)).value();
  EXPECT_LT(max_abs(out - rig.hfem.value().weight().value() * fi), 1e-12);
}

TEST(Hfem, SelfAttentionRowsAreDistributions) {
  HfemRig rig;
  std::mt19937_64 data(15);
  std::vector<Matrix> weights;
  rig.hfem.scene_self_attention(Var::constant(random_matrix(16, 9, data)), &weights);
  ASSERT_EQ(weights.size(), 1u);
  EXPECT_GE(weights[0].minCoeff(), 0.0);
  for (Index j = 0; j < 9; ++j) EXPECT_NEAR(weights[0].col(j).sum(), 1.0, 1e-6);
}

TEST(Hfem, PoolGlobals) {
  HfemRig rig;
  std::mt19937_64 data(16);
  const auto [ig, hg] = rig.hfem.pool_globals(Var::constant(Matrix::Constant(16, 9, 2.5)),
                                              Var::constant(random_matrix(16, 1, data)));
  EXPECT_EQ(ig.value(), Matrix::Constant(16, 1, 2.5));

  const Matrix single = random_matrix(16, 1, data);
  EXPECT_EQ(rig.hfem.pool_globals(Var::constant(single), Var::constant(single)).second.value(), single);

  const Matrix grid = random_matrix(4, 4, data);  // 4 channels, 2 x 2
  const Matrix mean = rig.hfem.pool_globals(Var::constant(grid), Var::constant(grid)).first.value();
  for (Index c = 0; c < 4; ++c) EXPECT_EQ(mean(c, 0), (grid(c, 0) + grid(c, 1) + grid(c, 2) + grid(c, 3)) / 4.0);

  const Matrix pts = random_matrix(16, 30, data);
  const auto perm = random_permutation(30, data);
  EXPECT_EQ(rig.hfem.pool_globals(Var::constant(grid), Var::constant(pts)).second.value(),
            rig.hfem.pool_globals(Var::constant(grid), Var::constant(permute_cols(pts, perm))).second.value());
}

TEST(Hfem, PartMaskShapeAndUniformWithZeroWeights) {
  HfemRig rig(16, 28, 8);
  std::mt19937_64 data(17);
  const Var fp_hat = Var::constant(random_matrix(8, 28 * 28, data, 0, 1));
  const Matrix logits = rig.hfem.decode_part_mask(fp_hat, 28, 28, 8).value();
  EXPECT_EQ(logits.rows(), 25);
  EXPECT_EQ(logits.cols(), 224 * 224);
  rig.hfem.mask_head().weight().mutable_value().setZero();
  const Matrix zero = rig.hfem.decode_part_mask(fp_hat, 28, 28, 8).value();
  const Matrix p = ag::softmax_columns(zero);
  EXPECT_LT(max_abs(p.array() - 1.0 / 25.0), 1e-15);
}

TEST(Hfem, BilinearUpsampleOfDelta) {
  const Index in = 4, out = 8;
  const SparseMatrix op = bilinear_resize_operator(in, in, out, out);
  Matrix delta = Matrix::Zero(1, in * in);
  const Index dy = 1, dx = 2;
  delta(0, dy * in + dx) = 1.0;
  const Matrix up = delta * op;
  auto weight = [&](Index o, Index d) {
    const double src = std::clamp((static_cast<double>(o) + 0.5) * 0.5 - 0.5, 0.0, static_cast<double>(in - 1));
    return std::max(0.0, 1.0 - std::abs(src - static_cast<double>(d)));
  };
  for (Index y = 0; y < out; ++y)
    for (Index x = 0; x < out; ++x) EXPECT_NEAR(up(0, y * out + x), weight(y, dy) * weight(x, dx), 1e-15);
  // Partition of unity.
  const Matrix ones = Matrix::Ones(1, in * in) * op;
  EXPECT_LT(max_abs(ones.array() - 1.0), 1e-15);
}

// ---------------------------------------------------------------------------
// MFFM

struct MffmRig {
  nn::ParamStore store;
  nn::Rng rng{20};
  MffmConfig cfg;
  Mffm mffm;

  explicit MffmRig(AblationConfig ablation = {}, Index c = 16, Index j = 24, Index jc = 8) {
    cfg.projection_dim = 8;
    cfg.global_width = 16;
    cfg.fusion_hidden = 16;
    cfg.fused_width = 12;
    mffm = Mffm(store, cfg, c, j, jc, 16, rng, ablation);
  }
};

TEST(Mffm, SingleTokenGivesValueProjection) {
  MffmRig rig;
  std::mt19937_64 data(21);
  const Matrix tok = random_matrix(16, 1, data);
  const Matrix out = rig.mffm.attend_scene(Var::constant(random_matrix(16, 5, data)), Var::constant(tok)).value();
  const Matrix v = rig.mffm.w_value_scene().weight().value() * tok;
  for (Index j = 0; j < 5; ++j) EXPECT_LT(max_abs(out.col(j) - v), 1e-12);
}

TEST(Mffm, IdenticalKeysGiveMeanValue) {
  MffmRig rig;
  rig.mffm.w_key_part().weight().mutable_value().setZero();
  std::mt19937_64 data(22);
  const Matrix tokens = random_matrix(8, 6, data);
  const Matrix out = rig.mffm.attend_parts(Var::constant(random_matrix(24, 3, data)), Var::constant(tokens)).value();
  const Matrix mean = (rig.mffm.w_value_part().weight().value() * tokens).rowwise().mean();
  for (Index j = 0; j < 3; ++j) EXPECT_LT(max_abs(out.col(j) - mean), 1e-12);
}

TEST(Mffm, HandComputedCrossAttention) {
  nn::ParamStore store;
  nn::Rng rng(23);
  nn::Linear wq(store, "q", 2, 2, rng, nn::Init::kXavier, false);
  nn::Linear wk(store, "k", 2, 2, rng, nn::Init::kXavier, false);
  nn::Linear wv(store, "v", 2, 2, rng, nn::Init::kXavier, false);
  wq.weight().mutable_value().setIdentity();
  wk.weight().mutable_value().setIdentity();
  wv.weight().mutable_value() << 1, 0, 0, 2;
  Matrix q(2, 2), t(2, 3);
  q << 1, 0,
       0, 1;
  t << 1, 0, 1,
       0, 1, 1;
  const Matrix out = Mffm::cross_attend(Var::constant(q), Var::constant(t), wq, wk, wv, 1).value();
  // Query 0 scores (1, 0, 1)/sqrt2; query 1 scores (0, 1, 1)/sqrt2.
  const double e = std::exp(1 / std::sqrt(2.0));
  const double z = 2 * e + 1;
  Matrix expected(2, 2);
  expected << (e + e) / z, (1 + e) / z,
              2 * (1 + e) / z, 2 * (e + e) / z;
  EXPECT_LT(max_abs(out - expected), 1e-6);
  EXPECT_THROW(Mffm::cross_attend(Var::constant(q), Var::constant(Matrix(2, 0)), wq, wk, wv, 1),
               std::invalid_argument);
}

TEST(Mffm, FuseGlobalsArithmetic) {
  MffmRig rig;
  std::mt19937_64 data(24);
  EXPECT_EQ(max_abs(rig.mffm.fuse_globals(Var::constant(Matrix::Zero(16, 1)), Var::constant(Matrix::Zero(16, 1)))
                        .value()),
            0.0);
  auto& layers = rig.mffm.global_fuse().layers();
  ASSERT_EQ(layers.size(), 2u);
  EXPECT_EQ(layers[0].in_features(), 32);
  for (auto& l : layers) l.bias().mutable_value().setRandom();
  const Matrix a = random_matrix(16, 1, data), b = random_matrix(16, 1, data);
  Matrix cat(32, 1);
  cat << a, b;
  const Matrix hidden = (layers[0].weight().value() * cat + layers[0].bias().value()).cwiseMax(0.0);
  const Matrix expected = layers[1].weight().value() * hidden + layers[1].bias().value();
  EXPECT_LT(max_abs(rig.mffm.fuse_globals(Var::constant(a), Var::constant(b)).value() - expected), 1e-12);
  EXPECT_THROW(rig.mffm.fuse_globals(Var::constant(a), Var::constant(Matrix::Zero(8, 1))), std::invalid_argument);
}

TEST(Mffm, AssembleArithmetic) {
  MffmRig rig;
  EXPECT_EQ(rig.mffm.concat_width(), 32);
  std::mt19937_64 data(25);
  for (auto& l : rig.mffm.fusion().layers()) l.bias().mutable_value().setRandom();
  for (auto& l : rig.mffm.global_refine().layers()) l.bias().mutable_value().setRandom();
  const Matrix t1 = random_matrix(8, 3, data), t2 = random_matrix(8, 3, data), g = random_matrix(16, 1, data);
  const Matrix out = rig.mffm.assemble(Var::constant(t1), Var::constant(t2), Var::constant(g), 3).value();

  auto mlp = [](nn::Mlp& m, Matrix x) {
    auto& ls = m.layers();
    for (std::size_t i = 0; i < ls.size(); ++i) {
      x = (ls[i].weight().value() * x).colwise() + ls[i].bias().value().col(0);
      if (i + 1 < ls.size()) x = x.cwiseMax(0.0);
    }
    return x;
  };
  const Matrix refined = mlp(rig.mffm.global_refine(), g);
  for (Index j = 0; j < 3; ++j) {
    Matrix cat(32, 1);
    cat << t1.col(j), t2.col(j), refined;
    EXPECT_LT(max_abs(out.col(j) - mlp(rig.mffm.fusion(), cat)), 1e-12);
  }
  // N_p = 1: repeat is the identity.
  const Matrix one = rig.mffm.assemble(Var::constant(t1.col(0)), Var::constant(t2.col(0)), Var::constant(g), 1).value();
  EXPECT_LT(max_abs(one - out.col(0)), 1e-12);
  EXPECT_THROW(rig.mffm.assemble(Var::constant(t1), Var::constant(t2), Var::constant(g), 4), std::invalid_argument);
}

TEST(Mffm, PointPermutationEquivariance) {
  MffmRig rig;
  std::mt19937_64 data(26);
  const Matrix f_hp = random_matrix(24, 20, data), f_h = random_matrix(16, 20, data);
  const Var fp_hat = Var::constant(random_matrix(8, 16, data, 0, 1));
  const Var fi_hat = Var::constant(random_matrix(16, 16, data));
  const Var f_ig = Var::constant(random_matrix(16, 1, data));
  const Var f_hg = Var::constant(random_matrix(16, 1, data));
  const auto perm = random_permutation(20, data);
  const auto a = rig.mffm.forward(Var::constant(f_hp), fp_hat, Var::constant(f_h), fi_hat, f_ig, f_hg);
  const auto b = rig.mffm.forward(Var::constant(permute_cols(f_hp, perm)), fp_hat, Var::constant(permute_cols(f_h, perm)),
                                  fi_hat, f_ig, f_hg);
  EXPECT_EQ(b.theta_part.value(), permute_cols(a.theta_part.value(), perm));
  EXPECT_EQ(b.theta_scene.value(), permute_cols(a.theta_scene.value(), perm));
  EXPECT_EQ(b.fused.value(), permute_cols(a.fused.value(), perm));
}

TEST(Mffm, ZeroImageTokensLeaveGlobalPathway) {
  MffmRig rig;
  std::mt19937_64 data(27);
  const Var f_hp = Var::constant(random_matrix(24, 5, data));
  const Var f_h = Var::constant(random_matrix(16, 5, data));
  const Var zero_p = Var::constant(Matrix::Zero(8, 16));
  const Var zero_i = Var::constant(Matrix::Zero(16, 16));
  const Var f_ig = Var::constant(Matrix::Zero(16, 1));
  const auto a = rig.mffm.forward(f_hp, zero_p, f_h, zero_i, f_ig, Var::constant(random_matrix(16, 1, data)));
  const auto b = rig.mffm.forward(f_hp, zero_p, f_h, zero_i, f_ig, Var::constant(random_matrix(16, 1, data)));
  EXPECT_EQ(max_abs(a.theta_part.value()), 0.0);
  EXPECT_EQ(max_abs(a.theta_scene.value()), 0.0);
  EXPECT_GT(max_abs(a.fused.value() - b.fused.value()), 0.0);
}

TEST(Mffm, AblationsDropStreams) {
  MffmRig no_part(AblationConfig{true, false});
  EXPECT_EQ(no_part.mffm.concat_width(), 8 + 16);
  EXPECT_EQ(no_part.store.find("mffm.w1.weight"), nullptr);
  MffmRig no_global(AblationConfig{false, true});
  EXPECT_EQ(no_global.store.find("mffm.global_fuse.0.weight"), nullptr);
  std::mt19937_64 data(28);
  const auto out = no_global.mffm.forward(Var::constant(random_matrix(24, 4, data)),
                                          Var::constant(random_matrix(8, 16, data)),
                                          Var::constant(random_matrix(16, 4, data)),
                                          Var::constant(random_matrix(16, 16, data)), Var(), Var());
  EXPECT_FALSE(out.global.defined());
  EXPECT_EQ(out.fused.cols(), 4);
}

// ---------------------------------------------------------------------------
// Decoder

TEST(Decoder, SigmoidSaturationAndMidpoint) {
  Matrix logits(1, 3);
  logits << 20.0, 0.0, -20.0;
  const auto p = predict_contact(logits, 0.5);
  EXPECT_GE(p.probs[0], 1 - 1e-8);
  EXPECT_EQ(p.probs[1], 0.5);
  EXPECT_LE(p.probs[2], 1e-8);
  EXPECT_EQ(p.binary, (std::vector<std::uint8_t>{1, 1, 0}));
}

TEST(Decoder, HeadMatchesDirectArithmetic) {
  nn::ParamStore store;
  nn::Rng rng(30);
  DecoderConfig cfg{{6, 4}, 3};
  PointDecoder dec(store, cfg, two_levels(16, 8), 5, rng);
  for (auto& l : dec.head().layers()) {
    l.weight().mutable_value().setRandom();
    l.bias().mutable_value().setRandom();
  }
  std::mt19937_64 data(30);
  const Matrix x = random_matrix(4, 5, data);
  const Matrix out = dec.contact_logits(Var::constant(x)).value();
  auto& ls = dec.head().layers();
  const Matrix h = ((ls[0].weight().value() * x).colwise() + ls[0].bias().value().col(0)).cwiseMax(0.0);
  const Matrix expected = (ls[1].weight().value() * h).colwise() + ls[1].bias().value().col(0);
  EXPECT_EQ(out.rows(), 1);
  EXPECT_LT(max_abs(out - expected), 1e-12);
}

TEST(Decoder, PropagationReachesFullResolution) {
  nn::ParamStore store;
  nn::Rng rng(31);
  const auto enc_cfg = two_levels(64, 16);
  PointEncoder enc(store, enc_cfg, rng);
  PointDecoder dec(store, DecoderConfig{{12, 8}, 4}, enc_cfg, 16, rng);
  std::mt19937_64 data(31);
  const auto e = enc.forward(normalize_cloud(random_matrix(150, 3, data)));
  const Var per_vertex = dec.propagate_features(e.features, e.skips);
  EXPECT_EQ(per_vertex.rows(), 8);
  EXPECT_EQ(per_vertex.cols(), 150);
  EXPECT_THROW(dec.propagate_features(Var::constant(Matrix::Zero(16, 3)), e.skips), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// End to end

TEST(GraceNet, UntrainedModelPredictsHalfEverywhere) {
  GraceNet model(testing::tiny_model());
  const auto g = testing::make_sample(40);
  const auto pred = model.predict(g.sample.image, g.sample.cloud);
  EXPECT_EQ(pred.probs.size(), 256);
  EXPECT_LT(max_abs(Matrix(pred.probs.array() - 0.5)), 1e-15);
  const auto d = metrics::detection_metrics(pred.binary, g.sample.contact.contact);
  const double rate = static_cast<double>(std::count(g.sample.contact.contact.begin(),
                                                     g.sample.contact.contact.end(), 1)) / 256.0;
  EXPECT_EQ(d.recall, 1.0);
  EXPECT_DOUBLE_EQ(d.precision, rate);
}

void randomize_head(GraceNet& model) {
  nn::Rng rng(99);
  for (auto& l : model.decoder().head().layers())
    l.weight().mutable_value() = nn::init_weight(l.out_features(), l.in_features(), nn::Init::kHe, rng);
}

TEST(GraceNet, PermutationEquivariance) {
  GraceNet model(testing::tiny_model());
  randomize_head(model);
  std::mt19937_64 data(41);
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = testing::make_sample(41 + static_cast<std::uint64_t>(trial));
    const auto perm = random_permutation(g.sample.cloud.size(), data);
    HumanPointCloud shuffled = g.sample.cloud;
    shuffled.points = permute_rows(g.sample.cloud.points, perm);
    const auto a = model.predict(g.sample.image, g.sample.cloud);
    const auto b = model.predict(g.sample.image, shuffled);
    double worst = 0;
    for (Index i = 0; i < a.probs.size(); ++i)
      worst = std::max(worst, std::abs(b.probs[i] - a.probs[perm[static_cast<std::size_t>(i)]]));
    EXPECT_LT(worst, 1e-4);
    EXPECT_GT(max_abs(Matrix(a.probs.array() - 0.5)), 1e-6);
  }
}

TEST(GraceNet, ArbitraryVertexCount) {
  GraceNet model(testing::tiny_model());
  randomize_head(model);
  for (Index n : {64, 128, 1000}) {
    const auto g = testing::make_sample(50, 32, n);
    const auto pred = model.predict(g.sample.image, g.sample.cloud);
    EXPECT_EQ(pred.probs.size(), n);
    EXPECT_EQ(pred.binary.size(), static_cast<std::size_t>(n));
    EXPECT_GE(pred.probs.minCoeff(), 0.0);
    EXPECT_LE(pred.probs.maxCoeff(), 1.0);
  }
}

TEST(GraceNet, InputErrors) {
  GraceNet model(testing::tiny_model());
  const auto g = testing::make_sample(51);
  EXPECT_THROW(model.predict({Matrix::Zero(3, 64 * 64), 64, 64}, g.sample.cloud), std::invalid_argument);
  HumanPointCloud few;
  few.points = g.sample.cloud.points.topRows(40);
  EXPECT_THROW(model.predict(g.sample.image, few), std::invalid_argument);
  auto bad = testing::tiny_model();
  bad.image_height = 36;
  EXPECT_THROW(GraceNet{bad}, std::invalid_argument);
}

TEST(GraceNet, TrainingForwardProducesPartLogits) {
  GraceNet model(testing::tiny_model());
  const auto g = testing::make_sample(52);
  const auto r = model.forward(g.sample.image, g.sample.cloud, true);
  EXPECT_EQ(r.part_logits.rows(), 25);
  EXPECT_EQ(r.part_logits.cols(), 32 * 32);
  EXPECT_EQ(r.f_hp.rows(), 24);
  EXPECT_EQ(r.f_hp.cols(), 16);
  EXPECT_EQ(model.predict_part_logits(g.sample.image).cols(), 32 * 32);
}

TEST(GraceNet, AblationParameterCounts) {
  std::map<std::string, std::size_t> count;
  for (auto [name, part, global] : {std::tuple{"full", false, false}, std::tuple{"no_part", true, false},
                                    std::tuple{"no_global", false, true}, std::tuple{"no_both", true, true}}) {
    auto cfg = testing::tiny_model();
    cfg.ablation = {part, global};
    GraceNet m(cfg);
    count[name] = m.params().parameter_count();
    const bool has_part = m.params().find("hfem.part_mlp.0.weight") != nullptr;
    EXPECT_EQ(has_part, !part);
    EXPECT_EQ(m.params().find("image.part_trunk.0.weight") != nullptr, !part);
    EXPECT_EQ(m.params().find("mffm.global_fuse.0.weight") != nullptr, !global);
    const auto g = testing::make_sample(53);
    const auto r = m.forward(g.sample.image, g.sample.cloud, true);
    EXPECT_EQ(r.part_logits.defined(), !part);
    EXPECT_EQ(r.probs.cols(), 256);
  }
  EXPECT_GT(count["full"], count["no_part"]);
  EXPECT_GT(count["full"], count["no_global"]);
  EXPECT_GT(count["no_part"], count["no_both"]);
  EXPECT_GT(count["no_global"], count["no_both"]);
}

TEST(GraceNet, SameSeedSameParameters) {
  GraceNet a(testing::tiny_model()), b(testing::tiny_model());
  ASSERT_EQ(a.params().entries().size(), b.params().entries().size());
  for (std::size_t i = 0; i < a.params().entries().size(); ++i)
    EXPECT_EQ(a.params().entries()[i].var.value(), b.params().entries()[i].var.value());
}

}  // namespace
}  // namespace grace
