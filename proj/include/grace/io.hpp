#pragma once

// On-disk dataset format. One directory per sample:
//   image.png     8-bit RGB
//   points.bin    16-byte header ("GRPC", u32 N, u32 dims, u32 flags) + N*dims float32 LE
//   contact.bin   u8 per vertex
//   partmask.png  8-bit gray, value = part id
//   faces.bin     optional, u32 LE triples
// and a manifest.json at the dataset root listing samples and splits.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "grace/config.hpp"
#include "grace/image.hpp"
#include "grace/types.hpp"

namespace grace::io {

namespace fs = std::filesystem;

inline constexpr std::array<char, 4> kPointsMagic{'G', 'R', 'P', 'C'};
inline constexpr std::uint32_t kFlagSourceArbitrary = 1u;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace detail

/// Float32 array with the GRPC header. `values` is N x dims.
inline void write_float_array(const fs::path& path, const Matrix& values, std::uint32_t flags = 0) {
  std::string out(kPointsMagic.begin(), kPointsMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(values.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(values.cols()));
  detail::put_u32(out, flags);
  out.reserve(out.size() + static_cast<std::size_t>(values.size()) * 4);
  for (Index i = 0; i < values.rows(); ++i)
    for (Index d = 0; d < values.cols(); ++d) detail::put_f32(out, static_cast<float>(values(i, d)));
  detail::write_file(path, out);
}

struct FloatArray {
  Matrix values;
  std::uint32_t flags = 0;
};

inline FloatArray read_float_array(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kPointsMagic.data(), 4) != 0)
    throw std::runtime_error("not a GRPC array file: " + path.string());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t n = detail::get_u32(p + 4);
  const std::uint32_t dims = detail::get_u32(p + 8);
  FloatArray r;
  r.flags = detail::get_u32(p + 12);
  const std::size_t expected = 16 + static_cast<std::size_t>(n) * dims * 4;
  if (bytes.size() != expected) throw std::runtime_error("truncated or oversized array file: " + path.string());
  r.values.resize(n, dims);
  const unsigned char* q = p + 16;
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t d = 0; d < dims; ++d, q += 4)
      r.values(i, d) = static_cast<double>(std::bit_cast<float>(detail::get_u32(q)));
  return r;
}

inline void write_points(const fs::path& path, const HumanPointCloud& cloud) {
  write_float_array(path, cloud.points, cloud.source_tag == SourceTag::kArbitrary ? kFlagSourceArbitrary : 0u);
}

inline HumanPointCloud read_points(const fs::path& path) {
  FloatArray a = read_float_array(path);
  if (a.values.cols() != 3) throw std::runtime_error("points file must have dims = 3: " + path.string());
  HumanPointCloud c;
  c.points = std::move(a.values);
  c.source_tag = (a.flags & kFlagSourceArbitrary) ? SourceTag::kArbitrary : SourceTag::kSmplLike;
  return c;
}

inline void write_contact(const fs::path& path, const ContactLabel& label) {
  detail::write_file(path, std::string(label.contact.begin(), label.contact.end()));
}

inline ContactLabel read_contact(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  ContactLabel l;
  l.contact.assign(bytes.begin(), bytes.end());
  return l;
}

inline void write_faces(const fs::path& path, const MeshTopology& topo) {
  std::string out;
  out.reserve(topo.faces.size() * 12);
  for (const auto& f : topo.faces)
    for (auto v : f) detail::put_u32(out, v);
  detail::write_file(path, out);
}

inline MeshTopology read_faces(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() % 12 != 0) throw std::runtime_error("faces file size is not a multiple of 12: " + path.string());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  MeshTopology t;
  t.faces.resize(bytes.size() / 12);
  for (auto& f : t.faces)
    for (auto& v : f) {
      v = detail::get_u32(p);
      p += 4;
    }
  return t;
}

/// Per-vertex contact probabilities (N x 1 float32 array).
inline void write_probabilities(const fs::path& path, const ColVector& probs) {
  write_float_array(path, Matrix(probs));
}

inline ColVector read_probabilities(const fs::path& path) {
  FloatArray a = read_float_array(path);
  if (a.values.cols() != 1) throw std::runtime_error("probability file must have dims = 1: " + path.string());
  return a.values.col(0);
}

/// ASCII PLY with per-vertex color; contact vertices yellow, others gray.
inline void write_ply(const fs::path& path, const HumanPointCloud& cloud, const ContactPrediction& pred) {
  if (static_cast<Index>(pred.binary.size()) != cloud.size())
    throw std::invalid_argument("write_ply: prediction length differs from cloud");
  std::ostringstream out;
  out << "ply\nformat ascii 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "property float contact_prob\n"
      << "end_header\n";
  out << std::setprecision(9);
  for (Index i = 0; i < cloud.size(); ++i) {
    const bool hit = pred.binary[static_cast<std::size_t>(i)] != 0;
    out << static_cast<float>(cloud.points(i, 0)) << ' ' << static_cast<float>(cloud.points(i, 1)) << ' '
        << static_cast<float>(cloud.points(i, 2)) << ' ' << (hit ? "255 220 0" : "170 170 170") << ' '
        << static_cast<float>(pred.probs[i]) << '\n';
  }
  detail::write_file(path, out.str());
}

struct ManifestEntry {
  std::string id;
  std::string split;
  std::string dir;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ManifestEntry, id, split, dir)

struct Manifest {
  int version = 1;
  int parts = kDefaultPartCount;
  Index image_height = 0;
  Index image_width = 0;
  Index n_points = 0;
  std::uint64_t seed = 0;
  double contact_epsilon = 0.01;
  std::vector<ManifestEntry> samples;

  std::vector<const ManifestEntry*> split(const std::string& name) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : samples)
      if (name.empty() || name == "all" || e.split == name) out.push_back(&e);
    return out;
  }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Manifest, version, parts, image_height, image_width, n_points, seed,
                                                contact_epsilon, samples)

inline constexpr const char* kManifestName = "manifest.json";

inline void write_manifest(const fs::path& root, const Manifest& m) {
  detail::write_file(root / kManifestName, Json(m).dump(2) + "\n");
}

inline Manifest read_manifest(const fs::path& root) {
  const fs::path p = root / kManifestName;
  if (!fs::exists(p)) throw std::runtime_error("no manifest at " + p.string());
  return Json::parse(detail::read_file(p)).get<Manifest>();
}

/// Writes one sample directory. `rgb` is the 8-bit image the sample's
/// normalized pixels were computed from.
inline void write_sample(const fs::path& dir, const ContactSample& s, const Raster& rgb) {
  if (rgb.height != s.image.height || rgb.width != s.image.width || rgb.channels != 3)
    throw std::invalid_argument("write_sample: raster does not match the sample image");
  fs::create_directories(dir);
  write_png((dir / "image.png").string(), rgb);
  write_points(dir / "points.bin", s.cloud);
  write_contact(dir / "contact.bin", s.contact);
  write_png((dir / "partmask.png").string(), mask_to_raster(s.part_mask));
  if (s.topology) write_faces(dir / "faces.bin", *s.topology);
}

inline ContactSample read_sample(const fs::path& dir, std::string id, int parts) {
  ContactSample s;
  s.id = std::move(id);
  s.image = normalize_image(read_png((dir / "image.png").string()));
  s.cloud = read_points(dir / "points.bin");
  s.contact = read_contact(dir / "contact.bin");
  const Raster mask = read_png((dir / "partmask.png").string());
  s.part_mask = raster_to_mask(mask, parts);
  if (fs::exists(dir / "faces.bin")) s.topology = read_faces(dir / "faces.bin");
  return s;
}

/// All samples of `split` ("all" or "" for every sample), in manifest order.
inline std::vector<ContactSample> load_dataset(const fs::path& root, const std::string& split) {
  const Manifest m = read_manifest(root);
  std::vector<ContactSample> out;
  for (const ManifestEntry* e : m.split(split)) out.push_back(read_sample(root / e->dir, e->id, m.parts));
  if (out.empty()) throw std::runtime_error("empty split");
  return out;
}

}  // namespace grace::io
