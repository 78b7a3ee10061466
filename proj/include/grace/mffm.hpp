#pragma once

// Multi-level feature fusion: part-level and scene-level cross-attention
// from point queries into image tokens, global-feature fusion, and the
// pointwise channel fusion that yields the decoder input.

#include <string>
#include <vector>

#include "grace/autograd.hpp"
#include "grace/config.hpp"
#include "grace/nn.hpp"

namespace grace {

using ag::Var;

/// Outputs of the fusion module. Theta blocks are stored one column per
/// retained point, i.e. (d x N_p); transpose for the (N_p x d) view.
struct FusionOutput {
  Var theta_part;   // undefined when the part branch is disabled
  Var theta_scene;
  Var global;       // F_g (C_g x 1); undefined when the global branch is disabled
  Var fused;        // F^_c (C_f x N_p)
};

class Mffm {
 public:
  Mffm() = default;

  /// `channels` is C, `part_points` is J (width of F_hp), `part_image` is
  /// J_c (width of F^_p), `tokens` is H'*W' (used only for positional
  /// embeddings).
  Mffm(nn::ParamStore& store, const MffmConfig& cfg, Index channels, Index part_points, Index part_image,
       Index tokens, nn::Rng& rng, const AblationConfig& ablation = {})
      : cfg_(cfg), ablation_(ablation) {
    const Index d = cfg.projection_dim;
    const auto proj = [&](const std::string& name, Index in) {
      return nn::Linear(store, "mffm." + name, in, d, rng, nn::Init::kXavier, false);
    };
    if (!ablation.disable_part_branch) {
      w_query_part_ = proj("w1", part_points);
      w_key_part_ = proj("w3", part_image);
      w_value_part_ = proj("w5", part_image);
    }
    w_query_scene_ = proj("w2", channels);
    w_key_scene_ = proj("w4", channels);
    w_value_scene_ = proj("w6", channels);

    if (cfg.positional_embedding) {
      std::normal_distribution<double> nd(0.0, 0.02);
      auto embed = [&](Index rows) {
        Matrix m(rows, tokens);
        for (Index j = 0; j < tokens; ++j)
          for (Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
        return m;
      };
      if (!ablation.disable_part_branch) pos_part_ = store.add_parameter("mffm.pos_part", embed(part_image));
      pos_scene_ = store.add_parameter("mffm.pos_scene", embed(channels));
    }

    if (!ablation.disable_global_branch) {
      global_fuse_ = nn::Mlp(store, "mffm.global_fuse", {2 * channels, cfg.global_width, cfg.global_width}, rng);
      global_refine_ = nn::Mlp(store, "mffm.global_refine", {cfg.global_width, cfg.global_width, cfg.global_width},
                               rng);
    }
    fusion_ = nn::Mlp(store, "mffm.fusion", {concat_width(), cfg.fusion_hidden, cfg.fused_width}, rng);
  }

  Index concat_width() const {
    const Index d = cfg_.projection_dim;
    return (ablation_.disable_part_branch ? d : 2 * d) + cfg_.global_width;
  }

  /// Generic cross-attention: queries (Cq x N_p), tokens (Ct x N_i).
  static Var cross_attend(const Var& queries, const Var& tokens, const nn::Linear& wq, const nn::Linear& wk,
                          const nn::Linear& wv, int heads, std::vector<Matrix>* weights = nullptr) {
    if (tokens.cols() == 0) throw std::invalid_argument("cross_attend: token count is zero");
    return ag::attention(wq(queries), wk(tokens), wv(tokens), heads, weights);
  }

  /// Theta_1: F_hp queries against F^_p keys/values.
  Var attend_parts(const Var& f_hp, const Var& fp_hat, std::vector<Matrix>* weights = nullptr) const {
    Var tokens = pos_part_.defined() ? ag::add(fp_hat, pos_part_) : fp_hat;
    return cross_attend(f_hp, tokens, w_query_part_, w_key_part_, w_value_part_, cfg_.heads, weights);
  }

  /// Theta_2: F_h queries against F^_i keys/values.
  Var attend_scene(const Var& f_h, const Var& fi_hat, std::vector<Matrix>* weights = nullptr) const {
    Var tokens = pos_scene_.defined() ? ag::add(fi_hat, pos_scene_) : fi_hat;
    return cross_attend(f_h, tokens, w_query_scene_, w_key_scene_, w_value_scene_, cfg_.heads, weights);
  }

  /// F_g from the concatenated global descriptors [F_ig; F_hg].
  Var fuse_globals(const Var& f_ig, const Var& f_hg) const {
    if (f_ig.rows() != f_hg.rows()) throw std::invalid_argument("fuse_globals: channel widths differ");
    return global_fuse_(ag::concat_rows({f_ig, f_hg}));
  }

  /// F^_c = f_xi([Theta_1, Theta_2, repeat(f_xi(F_g))]) applied pointwise.
  /// An undefined `global` stands for the disabled branch (zeros).
  Var assemble(const Var& theta_part, const Var& theta_scene, const Var& global, Index n_points) const {
    if (theta_scene.cols() != n_points || (theta_part.defined() && theta_part.cols() != n_points))
      throw std::invalid_argument("assemble_fused: inconsistent N_p");
    Var repeated = global.defined()
                       ? ag::repeat_cols(global_refine_(global), n_points)
                       : Var::constant(Matrix::Zero(cfg_.global_width, n_points));
    std::vector<Var> parts;
    if (theta_part.defined()) parts.push_back(theta_part);
    parts.push_back(theta_scene);
    parts.push_back(repeated);
    return fusion_(ag::concat_rows(parts));
  }

  FusionOutput forward(const Var& f_hp, const Var& fp_hat, const Var& f_h, const Var& fi_hat, const Var& f_ig,
                       const Var& f_hg) const {
    FusionOutput out;
    if (!ablation_.disable_part_branch) out.theta_part = attend_parts(f_hp, fp_hat);
    out.theta_scene = attend_scene(f_h, fi_hat);
    if (!ablation_.disable_global_branch) out.global = fuse_globals(f_ig, f_hg);
    out.fused = assemble(out.theta_part, out.theta_scene, out.global, f_h.cols());
    return out;
  }

  const MffmConfig& config() const { return cfg_; }
  nn::Linear& w_query_part() { return w_query_part_; }
  nn::Linear& w_key_part() { return w_key_part_; }
  nn::Linear& w_value_part() { return w_value_part_; }
  nn::Linear& w_query_scene() { return w_query_scene_; }
  nn::Linear& w_key_scene() { return w_key_scene_; }
  nn::Linear& w_value_scene() { return w_value_scene_; }
  nn::Mlp& global_fuse() { return global_fuse_; }
  nn::Mlp& global_refine() { return global_refine_; }
  nn::Mlp& fusion() { return fusion_; }

 private:
  MffmConfig cfg_;
  AblationConfig ablation_;
  nn::Linear w_query_part_, w_key_part_, w_value_part_;
  nn::Linear w_query_scene_, w_key_scene_, w_value_scene_;
  Var pos_part_, pos_scene_;
  nn::Mlp global_fuse_;
  nn::Mlp global_refine_;
  nn::Mlp fusion_;
};

}  // namespace grace
