#pragma once

// Point decoder: feature propagation back through the encoder hierarchy and
// the per-vertex contact head.

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "grace/autograd.hpp"
#include "grace/config.hpp"
#include "grace/encoders.hpp"
#include "grace/geometry.hpp"
#include "grace/nn.hpp"

namespace grace {

using ag::Var;

/// Interpolates (C x sources) features onto `targets` with 3-NN inverse
/// distance weights.
inline Var interpolate_features(const Var& features, const Matrix& source_coords, const Matrix& target_coords) {
  if (features.cols() != source_coords.rows())
    throw std::invalid_argument("interpolate_features: feature/coordinate count mismatch");
  auto op = std::make_shared<const SparseMatrix>(geometry::idw_operator(target_coords, source_coords));
  return ag::matmul_fixed(features, std::move(op));
}

/// Rows: xyz, then sin and cos of 2^k * pi * xyz for k < octaves.
inline Index coordinate_width(Index octaves) { return 3 + 6 * octaves; }

/// (coordinate_width x N) features from (N x 3) coordinates.
inline Matrix coordinate_features(const Matrix& coords, Index octaves) {
  Matrix out(coordinate_width(octaves), coords.rows());
  out.topRows(3) = coords.transpose();
  for (Index k = 0; k < octaves; ++k) {
    const double f = std::ldexp(std::numbers::pi, static_cast<int>(k));
    out.middleRows(3 + 6 * k, 3) = (f * coords.transpose().array()).sin().matrix();
    out.middleRows(6 + 6 * k, 3) = (f * coords.transpose().array()).cos().matrix();
  }
  return out;
}

class PointDecoder {
 public:
  PointDecoder() = default;

  /// `fused_width` is C_f; `encoder` supplies the skip widths.
  PointDecoder(nn::ParamStore& store, const DecoderConfig& cfg, const PointEncoderConfig& encoder, Index fused_width,
               nn::Rng& rng)
      : cfg_(cfg) {
    const std::size_t levels = encoder.levels.size();
    if (cfg.level_channels.size() != levels)
      throw std::invalid_argument("decoder: one propagation step per encoder level required");
    Index in = fused_width;
    for (std::size_t s = 0; s < levels; ++s) {
      // Step s lands on encoder level (levels - 1 - s); level 0 carries xyz.
      const std::size_t target = levels - 1 - s;
      const Index skip = target == 0 ? coordinate_width(cfg.coordinate_octaves) : encoder.levels[target - 1].channels.back();
      const Index out = cfg.level_channels[s];
      steps_.emplace_back(store, "decoder.fp" + std::to_string(s), std::vector<Index>{in + skip, out, out}, rng,
                          /*final_relu=*/true);
      in = out;
    }
    head_ = nn::Mlp(store, "decoder.head", {in, cfg.head_hidden, 1}, rng, false, nn::Init::kZero);
  }

  /// Per-vertex features (C1 x N) from F^_c and the encoder skip state.
  Var propagate_features(const Var& fused, const EncoderSkipState& skips) const {
    if (skips.levels.size() != steps_.size() + 1)
      throw std::invalid_argument("propagate_features: skip state does not match decoder depth");
    if (fused.cols() != skips.levels.back().coords.rows())
      throw std::invalid_argument("propagate_features: fused features do not match coarsest level");
    Var x = fused;
    for (std::size_t s = 0; s < steps_.size(); ++s) {
      const auto& src = skips.levels[skips.levels.size() - 1 - s];
      const auto& dst = skips.levels[skips.levels.size() - 2 - s];
      Var up = interpolate_features(x, src.coords, dst.coords);
      const bool finest = s + 1 == steps_.size();
      Var skip = finest && cfg_.coordinate_octaves > 0
                     ? Var::constant(coordinate_features(dst.coords, cfg_.coordinate_octaves))
                     : dst.features;
      x = steps_[s](ag::concat_rows({up, skip}));
    }
    return x;
  }

  /// Contact logits (1 x N).
  Var contact_logits(const Var& per_vertex) const { return head_(per_vertex); }

  const DecoderConfig& config() const { return cfg_; }
  nn::Mlp& head() { return head_; }

 private:
  DecoderConfig cfg_;
  std::vector<nn::Mlp> steps_;
  nn::Mlp head_;
};

/// Sigmoid probabilities and thresholded mask from (1 x N) logits.
inline ContactPrediction predict_contact(const Matrix& logits, double threshold) {
  ColVector probs(logits.cols());
  for (Index i = 0; i < logits.cols(); ++i) probs[i] = ag::stable_sigmoid(logits(0, i));
  return ContactPrediction::from_probs(std::move(probs), threshold);
}

}  // namespace grace
