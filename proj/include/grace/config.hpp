#pragma once

// Configuration for every stage of the pipeline. All structs round-trip
// through JSON; missing keys take the defaults below.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "grace/autograd.hpp"
#include "grace/types.hpp"

namespace grace {

using Json = nlohmann::json;

enum class GlobalPool { kMax, kMean };
enum class LossVariant { kCombined, kBce };
enum class LrSchedule { kCosine, kConstant };

NLOHMANN_JSON_SERIALIZE_ENUM(GlobalPool, {{GlobalPool::kMax, "max"}, {GlobalPool::kMean, "mean"}})
NLOHMANN_JSON_SERIALIZE_ENUM(LossVariant, {{LossVariant::kCombined, "combined"}, {LossVariant::kBce, "bce"}})
NLOHMANN_JSON_SERIALIZE_ENUM(LrSchedule, {{LrSchedule::kCosine, "cosine"}, {LrSchedule::kConstant, "constant"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ag::PadMode, {{ag::PadMode::kZero, "zero"}, {ag::PadMode::kCircular, "circular"}})

struct ImageEncoderConfig {
  /// One stride-2 3x3 conv stage per entry; total stride is 2^stages.
  std::vector<Index> stage_channels{32, 64, 96};
  Index out_channels = 128;
  bool shared_trunk = false;
  ag::PadMode pad_mode = ag::PadMode::kZero;

  Index total_stride() const { return Index{1} << stage_channels.size(); }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ImageEncoderConfig, stage_channels, out_channels, shared_trunk,
                                                pad_mode)

struct SetAbstractionLevel {
  Index n_sampled = 512;
  double radius = 0.2;
  Index neighbors = 16;
  std::vector<Index> channels{32, 64};
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SetAbstractionLevel, n_sampled, radius, neighbors, channels)

struct PointEncoderConfig {
  std::vector<SetAbstractionLevel> levels{{512, 0.15, 16, {32, 64}}, {128, 0.3, 16, {64, 128}}};
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PointEncoderConfig, levels)

struct HfemConfig {
  int parts = kDefaultPartCount;
  std::vector<Index> part_hidden{64, 64};
  Index part_channels = 64;
  int attention_heads = 1;
  GlobalPool point_pool = GlobalPool::kMax;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(HfemConfig, parts, part_hidden, part_channels, attention_heads,
                                                point_pool)

struct MffmConfig {
  Index projection_dim = 64;
  int heads = 1;
  Index global_width = 64;
  Index fusion_hidden = 128;
  Index fused_width = 128;
  bool positional_embedding = false;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MffmConfig, projection_dim, heads, global_width, fusion_hidden,
                                                fused_width, positional_embedding)

struct DecoderConfig {
  /// Output width of each feature-propagation step, coarse to fine. The
  /// last entry is the per-vertex width C1.
  std::vector<Index> level_channels{64, 32};
  Index head_hidden = 32;
  /// Sine/cosine octaves appended to the xyz skip of the last step; 0 keeps
  /// plain xyz.
  Index coordinate_octaves = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DecoderConfig, level_channels, head_hidden, coordinate_octaves)

struct AblationConfig {
  bool disable_part_branch = false;
  bool disable_global_branch = false;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AblationConfig, disable_part_branch, disable_global_branch)

struct ModelConfig {
  Index image_height = 224;
  Index image_width = 224;
  ImageEncoderConfig image;
  PointEncoderConfig points;
  HfemConfig hfem;
  MffmConfig mffm;
  DecoderConfig decoder;
  AblationConfig ablation;
  double threshold = 0.5;
  std::uint64_t init_seed = 0;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
    const Index stride = image.total_stride();
    if (image.stage_channels.empty()) fail("image encoder needs at least one stage");
    if (image_height <= 0 || image_width <= 0) fail("image size must be positive");
    if (image_height % stride != 0 || image_width % stride != 0)
      fail("image size " + std::to_string(image_height) + "x" + std::to_string(image_width) +
           " not divisible by encoder stride " + std::to_string(stride));
    if (points.levels.empty()) fail("point encoder needs at least one level");
    for (std::size_t i = 0; i < points.levels.size(); ++i) {
      const auto& l = points.levels[i];
      if (l.channels.empty() || l.neighbors <= 0 || l.radius <= 0 || l.n_sampled <= 0)
        fail("set-abstraction level " + std::to_string(i) + " is malformed");
      if (i > 0 && l.n_sampled >= points.levels[i - 1].n_sampled) fail("n_sampled must strictly decrease");
      if (i > 0 && l.radius <= points.levels[i - 1].radius) fail("radii must increase");
    }
    if (points.levels.back().channels.back() != image.out_channels)
      fail("point and image encoders must share the channel width C");
    if (hfem.parts <= 0 || hfem.parts > 255) fail("parts must be in [1, 255]");
    if (hfem.attention_heads <= 0 || image.out_channels % hfem.attention_heads != 0)
      fail("self-attention heads must divide C");
    if (mffm.projection_dim <= 0 || mffm.heads <= 0 || mffm.projection_dim % mffm.heads != 0)
      fail("cross-attention heads must divide d");
    if (decoder.level_channels.size() != points.levels.size())
      fail("decoder needs one propagation step per encoder level");
    if (decoder.coordinate_octaves < 0 || decoder.coordinate_octaves > 16) fail("coordinate_octaves must be in [0, 16]");
    if (threshold < 0 || threshold > 1) fail("threshold must be in [0, 1]");
  }

  Index feature_height() const { return image_height / image.total_stride(); }
  Index feature_width() const { return image_width / image.total_stride(); }
  Index min_points() const { return std::max(kMinPoints, points.levels.front().n_sampled); }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, image_height, image_width, image, points, hfem, mffm,
                                                decoder, ablation, threshold, init_seed)

struct LossConfig {
  double contact_weight = 1.0;  // omega_1
  double part_weight = 1.0;     // omega_2
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_epsilon = 1.0;
  double focal_dice_mix = 0.5;  // lambda
  LossVariant variant = LossVariant::kCombined;

  void validate() const {
    if (contact_weight < 0 || part_weight < 0) throw std::invalid_argument("loss weights must be >= 0");
    if (focal_gamma < 0) throw std::invalid_argument("focal_gamma must be >= 0");
    if (!(dice_epsilon > 0)) throw std::invalid_argument("dice_epsilon must be > 0");
    if (focal_dice_mix < 0 || focal_dice_mix > 1) throw std::invalid_argument("focal_dice_mix must be in [0, 1]");
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, contact_weight, part_weight, focal_alpha, focal_gamma,
                                                dice_epsilon, focal_dice_mix, variant)

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  LrSchedule schedule = LrSchedule::kCosine;
  double min_lr_ratio = 0.05;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OptimizerConfig, learning_rate, weight_decay, beta1, beta2, epsilon,
                                                schedule, min_lr_ratio)

struct ExperimentConfig {
  std::string dataset;
  std::string train_split = "train";
  std::string eval_split = "test";
  ModelConfig model;
  LossConfig loss;
  OptimizerConfig optimizer;
  Index batch_size = 4;
  Index epochs = 10;
  /// When positive, overrides epochs.
  Index max_steps = 0;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  Index checkpoint_every = 0;
  Index log_every = 10;
  bool deterministic = true;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentConfig, dataset, train_split, eval_split, model, loss,
                                                optimizer, batch_size, epochs, max_steps, seed, output_dir,
                                                checkpoint_every, log_every, deterministic)

/// 64-bit FNV-1a over a byte string.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Hash of the architecture-defining part of a model config.
inline std::uint64_t config_hash(const ModelConfig& cfg) {
  Json j = cfg;
  j.erase("threshold");
  j.erase("init_seed");
  return fnv1a(j.dump());
}

template <class T>
T load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  Json j = Json::parse(in);
  return j.get<T>();
}

template <class T>
void save_json_file(const T& value, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out << Json(value).dump(2) << "\n";
}

}  // namespace grace
