#pragma once

// End-to-end contact network: (image, point cloud) -> per-vertex contact
// probability.

#include <memory>
#include <stdexcept>
#include <string>

#include "grace/autograd.hpp"
#include "grace/config.hpp"
#include "grace/decoders.hpp"
#include "grace/encoders.hpp"
#include "grace/hfem.hpp"
#include "grace/mffm.hpp"
#include "grace/nn.hpp"
#include "grace/types.hpp"

namespace grace {

struct ForwardResult {
  Var logits;       // (1 x N)
  Var probs;        // (1 x N)
  Var part_logits;  // ((J+1) x H*W); undefined without the part branch
  ImageFeatures image;
  PointEncoding points;
  Var f_hp, fp_hat, fi_hat, f_ig, f_hg;
  FusionOutput fusion;
};

class GraceNet {
 public:
  explicit GraceNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    nn::Rng rng(cfg_.init_seed);
    const bool part = !cfg_.ablation.disable_part_branch;
    const Index c = cfg_.image.out_channels;
    image_ = ImageEncoder(store_, cfg_.image, rng, part);
    points_ = PointEncoder(store_, cfg_.points, rng);
    hfem_ = Hfem(store_, cfg_.hfem, c, rng, part, cfg_.feature_height(), cfg_.feature_width(),
                 cfg_.image.total_stride());
    mffm_ = Mffm(store_, cfg_.mffm, c, cfg_.hfem.parts, cfg_.hfem.part_channels,
                 cfg_.feature_height() * cfg_.feature_width(), rng, cfg_.ablation);
    decoder_ = PointDecoder(store_, cfg_.decoder, cfg_.points, cfg_.mffm.fused_width, rng);
  }

  GraceNet(const GraceNet&) = delete;
  GraceNet& operator=(const GraceNet&) = delete;

  /// Full forward pass. `training` selects batch statistics in the part
  /// branch and enables the part-mask head.
  ForwardResult forward(const ImageInput& img, const HumanPointCloud& cloud, bool training) {
    check_inputs(img, cloud);
    ForwardResult r;
    r.image = image_.forward(img);
    const Matrix normalized = normalize_cloud(cloud.points);
    r.points = points_.forward(normalized);
    const Var& fh = r.points.features;

    r.fi_hat = hfem_.scene_self_attention(r.image.scene);
    std::tie(r.f_ig, r.f_hg) = hfem_.pool_globals(r.fi_hat, fh);
    if (hfem_.has_part_branch()) {
      r.f_hp = hfem_.project_point_parts(fh);
      r.fp_hat = hfem_.project_image_parts(r.image.part, r.image.height, r.image.width, training);
      if (training) r.part_logits = hfem_.decode_part_mask(r.fp_hat, r.image.height, r.image.width, r.image.stride);
    }
    r.fusion = mffm_.forward(r.f_hp, r.fp_hat, fh, r.fi_hat, r.f_ig, r.f_hg);
    const Var per_vertex = decoder_.propagate_features(r.fusion.fused, r.points.skips);
    r.logits = decoder_.contact_logits(per_vertex);
    r.probs = ag::sigmoid(r.logits);
    return r;
  }

  /// Inference without graph construction.
  ContactPrediction predict(const ImageInput& img, const HumanPointCloud& cloud) {
    ag::NoGradGuard guard;
    const ForwardResult r = forward(img, cloud, false);
    return predict_contact(r.logits.value(), cfg_.threshold);
  }

  /// Part logits in inference mode (for visualization and tests).
  Matrix predict_part_logits(const ImageInput& img) {
    if (!hfem_.has_part_branch()) throw std::logic_error("part branch disabled");
    ag::NoGradGuard guard;
    const ImageFeatures f = image_.forward(img);
    const Var fp_hat = hfem_.project_image_parts(f.part, f.height, f.width, false);
    return hfem_.decode_part_mask(fp_hat, f.height, f.width, f.stride).value();
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  ImageEncoder& image_encoder() { return image_; }
  PointEncoder& point_encoder() { return points_; }
  Hfem& hfem() { return hfem_; }
  Mffm& mffm() { return mffm_; }
  PointDecoder& decoder() { return decoder_; }

 private:
  void check_inputs(const ImageInput& img, const HumanPointCloud& cloud) const {
    if (img.height != cfg_.image_height || img.width != cfg_.image_width)
      throw std::invalid_argument("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                  ", model expects " + std::to_string(cfg_.image_height) + "x" +
                                  std::to_string(cfg_.image_width));
    if (cloud.points.cols() != 3 || !cloud.points.allFinite())
      throw std::invalid_argument("point cloud must be finite (N x 3)");
    if (cloud.size() < cfg_.min_points())
      throw std::invalid_argument("point cloud has " + std::to_string(cloud.size()) + " points, model needs " +
                                  std::to_string(cfg_.min_points()));
    if (!(bbox_diagonal(cloud.points) > 0)) throw std::invalid_argument("point cloud is degenerate");
  }

  ModelConfig cfg_;
  nn::ParamStore store_;
  ImageEncoder image_;
  PointEncoder points_;
  Hfem hfem_;
  Mffm mffm_;
  PointDecoder decoder_;
};

}  // namespace grace
