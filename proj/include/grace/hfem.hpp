#pragma once

// Hierarchical feature extraction: part-space projections of both
// modalities, self-attended scene features, global pooling and the
// image part-mask decoder.

#include <algorithm>
#include <array>
#include <tuple>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "grace/autograd.hpp"
#include "grace/config.hpp"
#include "grace/nn.hpp"
#include "grace/types.hpp"

namespace grace {

using ag::Var;

/// Bilinear resampling operator (half-pixel centers, edge clamped) from an
/// (in_h x in_w) grid to (out_h x out_w), as a sparse (in x out) matrix.
inline SparseMatrix bilinear_resize_operator(Index in_h, Index in_w, Index out_h, Index out_w) {
  auto axis = [](Index in, Index out) {
    // For each output coordinate: (low index, high index, high weight).
    std::vector<std::tuple<Index, Index, double>> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (Index o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      src = std::max(src, 0.0);
      Index lo = static_cast<Index>(std::floor(src));
      lo = std::min(lo, in - 1);
      const Index hi = std::min(lo + 1, in - 1);
      taps[static_cast<std::size_t>(o)] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
  };
  const auto ty = axis(in_h, out_h);
  const auto tx = axis(in_w, out_w);
  std::vector<Eigen::Triplet<Scalar>> trip;
  trip.reserve(static_cast<std::size_t>(4 * out_h * out_w));
  for (Index y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = ty[static_cast<std::size_t>(y)];
    for (Index x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = tx[static_cast<std::size_t>(x)];
      const Index col = y * out_w + x;
      trip.emplace_back(y0 * in_w + x0, col, (1 - fy) * (1 - fx));
      trip.emplace_back(y0 * in_w + x1, col, (1 - fy) * fx);
      trip.emplace_back(y1 * in_w + x0, col, fy * (1 - fx));
      trip.emplace_back(y1 * in_w + x1, col, fy * fx);
    }
  }
  SparseMatrix op(in_h * in_w, out_h * out_w);
  op.setFromTriplets(trip.begin(), trip.end());
  op.prune(Scalar(0));
  return op;
}

class Hfem {
 public:
  Hfem() = default;

  /// `channels` is the encoder width C. With `with_part_branch` false only
  /// the scene path (self-attention and pooling) is built. The feature grid
  /// size and stride, when known, let the mask upsampler be built once.
  Hfem(nn::ParamStore& store, const HfemConfig& cfg, Index channels, nn::Rng& rng, bool with_part_branch = true,
       Index grid_h = 0, Index grid_w = 0, Index stride = 0)
      : cfg_(cfg), with_part_(with_part_branch) {
    if (grid_h > 0 && grid_w > 0 && stride > 0) {
      upsample_ = std::make_shared<const SparseMatrix>(
          bilinear_resize_operator(grid_h, grid_w, grid_h * stride, grid_w * stride));
      upsample_key_ = {grid_h, grid_w, stride};
    }
    if (with_part_) {
      std::vector<Index> widths{channels};
      widths.insert(widths.end(), cfg.part_hidden.begin(), cfg.part_hidden.end());
      widths.push_back(cfg.parts);
      part_mlp_ = nn::Mlp(store, "hfem.part_mlp", widths, rng);
      part_conv_ = nn::Conv2d(store, "hfem.part_conv", channels, cfg.part_channels, 3, 1, rng);
      part_bn_ = nn::BatchNorm(store, "hfem.part_bn", cfg.part_channels);
      mask_head_ = nn::Conv2d(store, "hfem.mask_head", cfg.part_channels, cfg.parts + 1, 1, 1, rng,
                              ag::PadMode::kZero, nn::Init::kXavier);
    }
    query_ = nn::Linear(store, "hfem.attn.query", channels, channels, rng, nn::Init::kXavier, false);
    key_ = nn::Linear(store, "hfem.attn.key", channels, channels, rng, nn::Init::kXavier, false);
    value_ = nn::Linear(store, "hfem.attn.value", channels, channels, rng, nn::Init::kXavier, false);
  }

  /// F_hp = f_h(F_h): pointwise MLP into the J-dimensional part space.
  Var project_point_parts(const Var& fh) const { return part_mlp_(fh); }

  /// F^_p = f_p(F_p): conv + batch norm + ReLU.
  Var project_image_parts(const Var& fp, Index h, Index w, bool training) {
    return ag::relu(part_bn_(part_conv_(fp, h, w), training));
  }

  /// F^_i: single-layer self-attention over the H'*W' tokens of F_i.
  Var scene_self_attention(const Var& fi, std::vector<Matrix>* weights = nullptr) const {
    return ag::attention(query_(fi), key_(fi), value_(fi), cfg_.attention_heads, weights);
  }

  /// F_ig (spatial mean of F^_i) and F_hg (global pool of F_h), both (C x 1).
  std::pair<Var, Var> pool_globals(const Var& fi_hat, const Var& fh) const {
    Var hg = cfg_.point_pool == GlobalPool::kMax ? ag::max_cols(fh) : ag::mean_cols(fh);
    return {ag::mean_cols(fi_hat), hg};
  }

  /// Part logits ((J+1) x H*W) at full image resolution.
  Var decode_part_mask(const Var& fp_hat, Index h, Index w, Index stride) const {
    Var low = mask_head_(fp_hat, h, w);
    auto op = upsample_;
    if (!op || upsample_key_ != std::array<Index, 3>{h, w, stride})
      op = std::make_shared<const SparseMatrix>(bilinear_resize_operator(h, w, h * stride, w * stride));
    return ag::matmul_fixed(low, std::move(op));
  }

  bool has_part_branch() const { return with_part_; }
  const HfemConfig& config() const { return cfg_; }
  nn::Mlp& part_mlp() { return part_mlp_; }
  nn::Conv2d& part_conv() { return part_conv_; }
  nn::Conv2d& mask_head() { return mask_head_; }
  nn::Linear& query() { return query_; }
  nn::Linear& key() { return key_; }
  nn::Linear& value() { return value_; }

 private:
  HfemConfig cfg_;
  bool with_part_ = true;
  nn::Mlp part_mlp_;
  nn::Conv2d part_conv_;
  nn::BatchNorm part_bn_;
  nn::Conv2d mask_head_;
  nn::Linear query_;
  nn::Linear key_;
  nn::Linear value_;
  std::shared_ptr<const SparseMatrix> upsample_;
  std::array<Index, 3> upsample_key_{};
};

}  // namespace grace
