#pragma once

// Raw feature extraction: a small strided CNN for the two image streams and
// a set-abstraction point encoder for the human cloud.

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "grace/autograd.hpp"
#include "grace/config.hpp"
#include "grace/geometry.hpp"
#include "grace/nn.hpp"
#include "grace/types.hpp"

namespace grace {

using ag::Var;

/// F_i (scene context) and F_p (part semantics), both (C x H'*W').
struct ImageFeatures {
  Var scene;
  Var part;
  Index height = 0;
  Index width = 0;
  Index stride = 1;

  FeatureGrid scene_grid() const { return {scene.value(), height, width, stride}; }
  FeatureGrid part_grid() const { return {part.value(), height, width, stride}; }
};

class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(nn::ParamStore& store, const ImageEncoderConfig& cfg, nn::Rng& rng, bool with_part_stream = true)
      : cfg_(cfg), with_part_(with_part_stream) {
    if (cfg.shared_trunk) {
      trunk_scene_ = make_trunk(store, "image.trunk", rng);
      scene_head_ = nn::Conv2d(store, "image.scene_head", cfg.stage_channels.back(), cfg.out_channels, 1, 1, rng);
      if (with_part_)
        part_head_ = nn::Conv2d(store, "image.part_head", cfg.stage_channels.back(), cfg.out_channels, 1, 1, rng);
    } else {
      trunk_scene_ = make_trunk(store, "image.scene_trunk", rng);
      scene_head_ = nn::Conv2d(store, "image.scene_trunk.out", cfg.stage_channels.back(), cfg.out_channels, 1, 1, rng);
      if (with_part_) {
        trunk_part_ = make_trunk(store, "image.part_trunk", rng);
        part_head_ = nn::Conv2d(store, "image.part_trunk.out", cfg.stage_channels.back(), cfg.out_channels, 1, 1, rng);
      }
    }
  }

  ImageFeatures forward(const ImageInput& img) const {
    const Index stride = cfg_.total_stride();
    if (img.height % stride != 0 || img.width % stride != 0)
      throw std::invalid_argument("encode_image: image " + std::to_string(img.height) + "x" +
                                  std::to_string(img.width) + " not divisible by stride " + std::to_string(stride));
    if (img.pixels.rows() != 3 || img.pixels.cols() != img.height * img.width)
      throw std::invalid_argument("encode_image: pixel array is not 3 x H*W");

    Var x = Var::constant(img.pixels);
    ImageFeatures out;
    out.stride = stride;
    Index h = img.height, w = img.width;
    Var scene_body = run_trunk(trunk_scene_, x, h, w);
    out.height = h;
    out.width = w;
    out.scene = scene_head_(scene_body, h, w);
    if (with_part_) {
      if (cfg_.shared_trunk) {
        out.part = part_head_(scene_body, h, w);
      } else {
        Index ph = img.height, pw = img.width;
        out.part = part_head_(run_trunk(trunk_part_, x, ph, pw), ph, pw);
      }
    }
    return out;
  }

  const ImageEncoderConfig& config() const { return cfg_; }

 private:
  std::vector<nn::Conv2d> make_trunk(nn::ParamStore& store, const std::string& name, nn::Rng& rng) const {
    std::vector<nn::Conv2d> stages;
    Index in = 3;
    for (std::size_t i = 0; i < cfg_.stage_channels.size(); ++i) {
      stages.emplace_back(store, name + "." + std::to_string(i), in, cfg_.stage_channels[i], 3, 2, rng,
                          cfg_.pad_mode);
      in = cfg_.stage_channels[i];
    }
    return stages;
  }

  static Var run_trunk(const std::vector<nn::Conv2d>& stages, Var x, Index& h, Index& w) {
    for (const auto& conv : stages) {
      Index oh = 0, ow = 0;
      x = ag::relu(conv(x, h, w, &oh, &ow));
      h = oh;
      w = ow;
    }
    return x;
  }

  ImageEncoderConfig cfg_;
  bool with_part_ = true;
  std::vector<nn::Conv2d> trunk_scene_;
  std::vector<nn::Conv2d> trunk_part_;
  nn::Conv2d scene_head_;
  nn::Conv2d part_head_;
};

/// One resolution level of the point hierarchy.
struct EncoderLevel {
  Matrix coords;                     // (n x 3), normalized frame
  Var features;                      // (C x n)
  std::vector<Index> sampling_index; // into the original cloud
};

/// Per-level state retained for feature propagation. Level 0 is the raw cloud.
struct EncoderSkipState {
  std::vector<EncoderLevel> levels;
};

struct PointEncoding {
  Var features;  // F_h at the coarsest level
  EncoderSkipState skips;

  PointFeatures value() const {
    const auto& last = skips.levels.back();
    return {features.value(), last.coords, last.sampling_index};
  }
};

/// Hierarchical set-abstraction encoder: farthest point sampling, ball
/// grouping with center-relative offsets, shared MLP and max reduction.
class PointEncoder {
 public:
  PointEncoder() = default;
  PointEncoder(nn::ParamStore& store, const PointEncoderConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
    Index in = 3;
    for (std::size_t i = 0; i < cfg.levels.size(); ++i) {
      std::vector<Index> widths{in + 3};
      widths.insert(widths.end(), cfg.levels[i].channels.begin(), cfg.levels[i].channels.end());
      mlps_.emplace_back(store, "points.sa" + std::to_string(i), widths, rng, /*final_relu=*/true);
      in = cfg.levels[i].channels.back();
    }
  }

  /// `normalized` is an (N x 3) cloud already centered and scaled.
  PointEncoding forward(const Matrix& normalized) const {
    const Index n = normalized.rows();
    EncoderSkipState skips;
    EncoderLevel base;
    base.coords = normalized;
    base.features = Var::constant(normalized.transpose());
    base.sampling_index.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) base.sampling_index[static_cast<std::size_t>(i)] = i;
    skips.levels.push_back(std::move(base));

    for (std::size_t l = 0; l < cfg_.levels.size(); ++l) {
      const auto& lvl = cfg_.levels[l];
      const EncoderLevel& prev = skips.levels.back();
      if (lvl.n_sampled > prev.coords.rows())
        throw std::invalid_argument("encode_points: level " + std::to_string(l) + " samples " +
                                    std::to_string(lvl.n_sampled) + " of " + std::to_string(prev.coords.rows()) +
                                    " points");
      skips.levels.push_back(abstract(prev, lvl, mlps_[l]));
    }
    PointEncoding enc;
    enc.features = skips.levels.back().features;
    enc.skips = std::move(skips);
    return enc;
  }

  const PointEncoderConfig& config() const { return cfg_; }

 private:
  static EncoderLevel abstract(const EncoderLevel& prev, const SetAbstractionLevel& lvl, const nn::Mlp& mlp) {
    const std::vector<Index> centers = geometry::farthest_point_sample(prev.coords, lvl.n_sampled);
    EncoderLevel next;
    next.coords.resize(lvl.n_sampled, 3);
    next.sampling_index.resize(centers.size());
    for (std::size_t i = 0; i < centers.size(); ++i) {
      next.coords.row(static_cast<Index>(i)) = prev.coords.row(centers[i]);
      next.sampling_index[i] = prev.sampling_index[static_cast<std::size_t>(centers[i])];
    }

    const std::vector<Index> nbr = geometry::ball_query(next.coords, prev.coords, lvl.radius, lvl.neighbors);
    const Index k = lvl.neighbors;
    Matrix offsets(3, static_cast<Index>(nbr.size()));
    for (Index c = 0; c < lvl.n_sampled; ++c)
      for (Index j = 0; j < k; ++j)
        offsets.col(c * k + j) =
            ((prev.coords.row(nbr[static_cast<std::size_t>(c * k + j)]) - next.coords.row(c)) / lvl.radius)
                .transpose();

    Var grouped = ag::concat_rows({Var::constant(std::move(offsets)), ag::gather_cols(prev.features, nbr)});
    next.features = ag::group_max(mlp(grouped), k);
    return next;
  }

  PointEncoderConfig cfg_;
  std::vector<nn::Mlp> mlps_;
};

}  // namespace grace
