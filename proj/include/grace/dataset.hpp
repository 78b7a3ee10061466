#pragma once

// Synthetic dataset generation straight to the on-disk format.

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

#include "grace/io.hpp"
#include "grace/synthetic.hpp"

namespace grace {

struct DatasetOptions {
  synthetic::GenerateOptions sample;
  Index count = 10;
  std::uint64_t seed = 0;
  /// Trailing fraction of samples assigned to the "test" split.
  double test_fraction = 0.2;
};

inline std::string sample_name(Index i) {
  std::ostringstream ss;
  ss << "sample_" << std::setw(5) << std::setfill('0') << i;
  return ss.str();
}

/// Writes `count` samples and a manifest under `root`. Sample i depends only
/// on (seed, i).
inline io::Manifest generate_dataset(const std::filesystem::path& root, const DatasetOptions& opt) {
  if (opt.count <= 0) throw std::invalid_argument("--num must be positive");
  if (opt.sample.n_points < kMinPoints)
    throw std::invalid_argument("--points must be at least " + std::to_string(kMinPoints));
  if (opt.test_fraction < 0 || opt.test_fraction >= 1) throw std::invalid_argument("test fraction must be in [0, 1)");
  std::filesystem::create_directories(root);
  io::Manifest m;
  m.parts = opt.sample.parts;
  m.image_height = opt.sample.image_height;
  m.image_width = opt.sample.image_width;
  m.n_points = opt.sample.n_points;
  m.seed = opt.seed;
  m.contact_epsilon = opt.sample.contact_epsilon;
  const auto n_test = static_cast<Index>(static_cast<double>(opt.count) * opt.test_fraction);
  for (Index i = 0; i < opt.count; ++i) {
    const std::string name = sample_name(i);
    const auto g = synthetic::generate_sample(synthetic::sample_seed(opt.seed, static_cast<std::uint64_t>(i)),
                                              opt.sample, name);
    io::write_sample(root / name, g.sample, g.rgb);
    m.samples.push_back({name, i < opt.count - n_test ? "train" : "test", name});
  }
  io::write_manifest(root, m);
  return m;
}

}  // namespace grace
