#pragma once

// Procedural paired data: articulated capsule bodies, simple scenes of
// planes and boxes, exact contact labels and a z-buffered point-splat
// renderer that produces the RGB image and the part mask.

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "grace/image.hpp"
#include "grace/types.hpp"

namespace grace::synthetic {

using Vec3 = Eigen::Vector3d;
using Rng = std::mt19937_64;

struct Capsule {
  int part_id = 1;
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  double radius = 0.05;

  double cylinder_area() const { return 2 * std::numbers::pi * radius * (b - a).norm(); }
  double sphere_area() const { return 4 * std::numbers::pi * radius * radius; }
  double area() const { return cylinder_area() + sphere_area(); }
};

struct ArticulatedBodySpec {
  std::vector<Capsule> parts;
  std::uint64_t pose_seed = 0;
};

struct Plane {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

struct Box {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Constant(0.1);
  double yaw = 0;  // rotation about +z
};

using Primitive = std::variant<Plane, Box>;

struct SceneSpec {
  std::vector<Primitive> primitives;
  double contact_epsilon = 0.01;
};

inline double signed_distance(const Plane& p, const Vec3& x) { return (x - p.point).dot(p.normal.normalized()); }

inline double signed_distance(const Box& b, const Vec3& x) {
  const Eigen::Matrix3d r = Eigen::AngleAxisd(b.yaw, Vec3::UnitZ()).toRotationMatrix();
  const Vec3 local = r.transpose() * (x - b.center);
  const Vec3 q = local.cwiseAbs() - b.half_extents;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

inline double signed_distance(const Primitive& p, const Vec3& x) {
  return std::visit([&x](const auto& prim) { return signed_distance(prim, x); }, p);
}

// ---------------------------------------------------------------------------
// Bodies

/// Uniform samples on the union of capsule surfaces. Capsules are drawn in
/// proportion to surface area; returns the cloud and per-point part ids.
inline std::pair<HumanPointCloud, std::vector<std::uint8_t>> sample_body(const ArticulatedBodySpec& spec,
                                                                         Index n_points, Rng& rng) {
  if (spec.parts.empty()) throw std::invalid_argument("sample_body: empty part list");
  if (n_points < kMinPoints) throw std::invalid_argument("sample_body: n_points must be >= 64");
  std::vector<double> areas;
  for (const auto& c : spec.parts) areas.push_back(c.area());
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  HumanPointCloud cloud;
  cloud.source_tag = SourceTag::kArbitrary;
  cloud.points.resize(n_points, 3);
  std::vector<std::uint8_t> ids(static_cast<std::size_t>(n_points));
  for (Index i = 0; i < n_points; ++i) {
    const Capsule& c = spec.parts[pick(rng)];
    const Vec3 axis_vec = c.b - c.a;
    const double len = axis_vec.norm();
    const Vec3 axis = len > 0 ? Vec3(axis_vec / len) : Vec3::UnitZ();
    const Vec3 u = axis.unitOrthogonal();
    const Vec3 v = axis.cross(u);
    Vec3 p;
    if (unit(rng) * c.area() < c.cylinder_area()) {
      const double t = unit(rng) * len;
      const double phi = unit(rng) * 2 * std::numbers::pi;
      p = c.a + t * axis + c.radius * (std::cos(phi) * u + std::sin(phi) * v);
    } else {
      Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
      dir.normalize();
      p = (dir.dot(axis) < 0 ? c.a : c.b) + c.radius * dir;
    }
    cloud.points.row(i) = p.transpose();
    ids[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(c.part_id);
  }
  return {std::move(cloud), std::move(ids)};
}

/// Kinematic skeleton with 24 joints; each joint owns the capsule to its
/// primary child (or to a fixed tip for leaves).
struct Skeleton {
  static constexpr int kJoints = 24;

  enum Joint {
    kPelvis, kLHip, kRHip, kSpine1, kLKnee, kRKnee, kSpine2, kLAnkle, kRAnkle, kSpine3, kLFoot, kRFoot,
    kNeck, kLCollar, kRCollar, kHead, kLShoulder, kRShoulder, kLElbow, kRElbow, kLWrist, kRWrist, kLHand, kRHand
  };

  static constexpr std::array<int, kJoints> kParent{-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
                                                    9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  // Capsule end: index of the primary child joint, or -1 for a leaf tip.
  static constexpr std::array<int, kJoints> kChild{-2, 4, 5, 6, 7, 8, 9, 10, 11, 12, -1, -1,
                                                   15, 16, 17, -1, 18, 19, 20, 21, 22, 23, -1, -1};
  static constexpr std::array<double, kJoints> kRadius{0.10, 0.075, 0.075, 0.11, 0.05, 0.05, 0.12, 0.045,
                                                       0.045, 0.12, 0.03, 0.03, 0.05, 0.05, 0.05, 0.09,
                                                       0.045, 0.045, 0.04, 0.04, 0.035, 0.035, 0.02, 0.02};

  static std::array<Vec3, kJoints> rest_offsets() {
    return {Vec3(0, 0, 0.95),      Vec3(0.09, 0, -0.05),  Vec3(-0.09, 0, -0.05), Vec3(0, 0, 0.10),
            Vec3(0, 0, -0.42),     Vec3(0, 0, -0.42),     Vec3(0, 0, 0.13),      Vec3(0, 0, -0.40),
            Vec3(0, 0, -0.40),     Vec3(0, 0, 0.12),      Vec3(0, 0.13, -0.05),  Vec3(0, 0.13, -0.05),
            Vec3(0, 0, 0.18),      Vec3(0.03, 0, 0.12),   Vec3(-0.03, 0, 0.12),  Vec3(0, 0.02, 0.10),
            Vec3(0.14, 0, 0),      Vec3(-0.14, 0, 0),     Vec3(0.27, 0, 0),      Vec3(-0.27, 0, 0),
            Vec3(0.25, 0, 0),      Vec3(-0.25, 0, 0),     Vec3(0.08, 0, 0),      Vec3(-0.08, 0, 0)};
  }

  static Vec3 leaf_tip(int joint) {
    switch (joint) {
      case kLFoot:
      case kRFoot: return Vec3(0, 0.06, -0.01);
      case kHead: return Vec3(0, 0, 0.14);
      case kLHand: return Vec3(0.08, 0, 0);
      case kRHand: return Vec3(-0.08, 0, 0);
      default: return Vec3::Zero();
    }
  }
};

/// Maps the 24 skeleton capsules onto `parts` ids by merging neighbours in
/// joint order.
inline int part_id_for_joint(int joint, int parts) { return 1 + joint * parts / Skeleton::kJoints; }

/// Poses the skeleton from local joint rotations. `root` is the world
/// transform of the pelvis.
inline ArticulatedBodySpec pose_skeleton(const std::array<Eigen::Matrix3d, Skeleton::kJoints>& local,
                                         const Eigen::Isometry3d& root, int parts) {
  const auto offsets = Skeleton::rest_offsets();
  std::array<Eigen::Matrix3d, Skeleton::kJoints> rot;
  std::array<Vec3, Skeleton::kJoints> pos;
  for (int j = 0; j < Skeleton::kJoints; ++j) {
    const int parent = Skeleton::kParent[static_cast<std::size_t>(j)];
    if (parent < 0) {
      rot[0] = root.linear() * local[0];
      pos[0] = root * offsets[0];
    } else {
      pos[static_cast<std::size_t>(j)] =
          pos[static_cast<std::size_t>(parent)] + rot[static_cast<std::size_t>(parent)] * offsets[static_cast<std::size_t>(j)];
      rot[static_cast<std::size_t>(j)] = rot[static_cast<std::size_t>(parent)] * local[static_cast<std::size_t>(j)];
    }
  }
  ArticulatedBodySpec spec;
  for (int j = 0; j < Skeleton::kJoints; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    Capsule c;
    c.part_id = part_id_for_joint(j, parts);
    c.radius = Skeleton::kRadius[ju];
    const int child = Skeleton::kChild[ju];
    if (j == Skeleton::kPelvis) {
      c.a = pos[Skeleton::kLHip];
      c.b = pos[Skeleton::kRHip];
    } else if (child >= 0) {
      c.a = pos[ju];
      c.b = pos[static_cast<std::size_t>(child)];
    } else {
      c.a = pos[ju];
      c.b = pos[ju] + rot[ju] * Skeleton::leaf_tip(j);
    }
    spec.parts.push_back(c);
  }
  return spec;
}

enum class PoseKind { kStand, kSit, kReach };

inline Eigen::Matrix3d euler(double rx, double ry, double rz) {
  return (Eigen::AngleAxisd(rz, Vec3::UnitZ()) * Eigen::AngleAxisd(ry, Vec3::UnitY()) *
          Eigen::AngleAxisd(rx, Vec3::UnitX()))
      .toRotationMatrix();
}

/// Random joint rotations for a pose family.
inline std::array<Eigen::Matrix3d, Skeleton::kJoints> random_pose(PoseKind kind, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::array<Eigen::Matrix3d, Skeleton::kJoints> local;
  for (auto& m : local) m = Eigen::Matrix3d::Identity();
  auto jitter = [&](double s) { return euler(s * u(rng), s * u(rng), s * u(rng)); };
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * 0.5 * (u(rng) + 1.0); };

  for (int j : {Skeleton::kSpine1, Skeleton::kSpine2, Skeleton::kSpine3, Skeleton::kNeck, Skeleton::kHead})
    local[static_cast<std::size_t>(j)] = jitter(0.12);
  for (int j : {Skeleton::kLCollar, Skeleton::kRCollar, Skeleton::kLHand, Skeleton::kRHand,
                Skeleton::kLWrist, Skeleton::kRWrist, Skeleton::kLFoot, Skeleton::kRFoot})
    local[static_cast<std::size_t>(j)] = jitter(0.15);

  // Arms hang by rotating about the forward axis, then swing forward;
  // left and right mirror.
  for (int side = 0; side < 2; ++side) {
    const double sign = side == 0 ? 1.0 : -1.0;
    const int shoulder = side == 0 ? Skeleton::kLShoulder : Skeleton::kRShoulder;
    const int elbow = side == 0 ? Skeleton::kLElbow : Skeleton::kRElbow;
    const int hip = side == 0 ? Skeleton::kLHip : Skeleton::kRHip;
    const int knee = side == 0 ? Skeleton::kLKnee : Skeleton::kRKnee;
    const int ankle = side == 0 ? Skeleton::kLAnkle : Skeleton::kRAnkle;
    const double down = kind == PoseKind::kReach ? range(0.9, 1.4) : range(1.1, 1.45);
    const double forward = kind == PoseKind::kReach ? range(0.3, 1.0) : range(-0.2, 0.3);
    local[static_cast<std::size_t>(shoulder)] =
        (Eigen::AngleAxisd(forward, Vec3::UnitX()) * Eigen::AngleAxisd(sign * down, Vec3::UnitY())).toRotationMatrix();
    local[static_cast<std::size_t>(elbow)] = euler(0, 0, sign * range(0.0, 0.9));

    if (kind == PoseKind::kSit) {
      const double flex = range(1.35, 1.65);
      local[static_cast<std::size_t>(hip)] = euler(flex, 0, sign * range(0.0, 0.2));
      local[static_cast<std::size_t>(knee)] = euler(-flex + range(-0.2, 0.2), 0, 0);
    } else {
      local[static_cast<std::size_t>(hip)] = euler(range(-0.25, 0.35), sign * range(-0.15, 0.15), 0);
      local[static_cast<std::size_t>(knee)] = euler(range(-0.4, 0.0), 0, 0);
    }
    local[static_cast<std::size_t>(ankle)] = euler(range(-0.15, 0.15), 0, 0);
  }
  return local;
}

inline double lowest_surface_z(const ArticulatedBodySpec& spec) {
  double z = std::numeric_limits<double>::infinity();
  for (const auto& c : spec.parts) z = std::min({z, c.a.z() - c.radius, c.b.z() - c.radius});
  return z;
}

/// Drops every capsule by `dz`.
inline void translate(ArticulatedBodySpec& spec, const Vec3& d) {
  for (auto& c : spec.parts) {
    c.a += d;
    c.b += d;
  }
}

// ---------------------------------------------------------------------------
// Contact labels

/// contact[i] = 1 iff point i is within contact_epsilon (signed) of any
/// primitive.
inline ContactLabel label_contact(const HumanPointCloud& cloud, const SceneSpec& scene) {
  if (!cloud.points.allFinite()) throw std::invalid_argument("label_contact: non-finite cloud");
  ContactLabel label;
  label.contact.assign(static_cast<std::size_t>(cloud.size()), 0);
  for (Index i = 0; i < cloud.size(); ++i) {
    const Vec3 p = cloud.points.row(i).transpose();
    for (const auto& prim : scene.primitives) {
      if (signed_distance(prim, p) <= scene.contact_epsilon) {
        label.contact[static_cast<std::size_t>(i)] = 1;
        break;
      }
    }
  }
  return label;
}

// ---------------------------------------------------------------------------
// Rendering

/// Orthographic camera. After rotating the world by -yaw about +z and then
/// tilting by `pitch` about +x, the view looks along +y with image x along
/// +x and image y along -z.
struct Camera {
  Index height = 224;
  Index width = 224;
  double pixels_per_meter = 100.0;
  Vec3 target = Vec3::Zero();
  double yaw = 0;
  double pitch = 0;

  Eigen::Matrix3d view() const {
    return (Eigen::AngleAxisd(pitch, Vec3::UnitX()) * Eigen::AngleAxisd(-yaw, Vec3::UnitZ())).toRotationMatrix();
  }

  /// (column, row, depth) of a world point; larger depth is farther.
  Vec3 project(const Vec3& p) const {
    const Vec3 c = view() * (p - target);
    return {c.x() * pixels_per_meter + 0.5 * static_cast<double>(width),
            -c.z() * pixels_per_meter + 0.5 * static_cast<double>(height), c.y()};
  }
};

struct RenderResult {
  Raster rgb;
  ImageInput image;
  PartMask mask;
};

struct RenderOptions {
  double body_splat_px = 1.0;
  double scene_splat_px = 1.0;
  int parts = kDefaultPartCount;
  /// Scene primitives are sampled on a grid of this spacing in pixels.
  double scene_sample_px = 0.7;
  /// Half-size of rendered floor patches, meters.
  double floor_extent = 1.6;
};

inline std::array<std::uint8_t, 3> part_color(int part, int parts) {
  const double h = std::fmod(static_cast<double>(part) * 0.61803398875, 1.0);
  const double s = 0.65, v = 0.6 + 0.35 * static_cast<double>(part % 3) / 2.0;
  const int i = static_cast<int>(h * 6);
  const double f = h * 6 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  double r = 0, g = 0, b = 0;
  switch (i % 6) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  (void)parts;
  return {static_cast<std::uint8_t>(r * 255), static_cast<std::uint8_t>(g * 255), static_cast<std::uint8_t>(b * 255)};
}

namespace detail {

struct Splat {
  Vec3 world;
  std::array<std::uint8_t, 3> color;
  std::uint8_t id;
  double radius_px;
};

inline void sample_plane(const Plane& plane, const Vec3& around, double extent, double step,
                         std::vector<Splat>& out, double radius_px) {
  const Vec3 n = plane.normal.normalized();
  const Vec3 u = n.unitOrthogonal();
  const Vec3 v = n.cross(u);
  const Vec3 origin = around - n * (around - plane.point).dot(n);
  const int steps = static_cast<int>(std::ceil(extent / step));
  for (int i = -steps; i <= steps; ++i)
    for (int j = -steps; j <= steps; ++j) {
      const Vec3 p = origin + (i * step) * u + (j * step) * v;
      const bool checker = ((static_cast<int>(std::floor(p.x() / 0.25)) + static_cast<int>(std::floor(p.y() / 0.25))) & 1) != 0;
      const std::uint8_t g = checker ? 150 : 110;
      out.push_back({p, {g, g, static_cast<std::uint8_t>(g + 10)}, 0, radius_px});
    }
}

inline void sample_box(const Box& box, double step, std::vector<Splat>& out, double radius_px) {
  const Eigen::Matrix3d r = Eigen::AngleAxisd(box.yaw, Vec3::UnitZ()).toRotationMatrix();
  const Vec3& h = box.half_extents;
  for (int axis = 0; axis < 3; ++axis) {
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    const int n1 = std::max(1, static_cast<int>(std::ceil(2 * h[a1] / step)));
    const int n2 = std::max(1, static_cast<int>(std::ceil(2 * h[a2] / step)));
    for (int side = -1; side <= 1; side += 2) {
      const std::uint8_t shade = static_cast<std::uint8_t>(axis == 2 ? (side > 0 ? 200 : 120) : 160 - 20 * axis);
      for (int i = 0; i <= n1; ++i)
        for (int j = 0; j <= n2; ++j) {
          Vec3 local;
          local[axis] = side * h[axis];
          local[a1] = -h[a1] + 2 * h[a1] * i / n1;
          local[a2] = -h[a2] + 2 * h[a2] * j / n2;
          out.push_back({box.center + r * local, {shade, static_cast<std::uint8_t>(shade * 0.7), 60}, 0, radius_px});
        }
    }
  }
}

}  // namespace detail

/// Z-buffered point-splat render. Body points carry their part id; scene
/// primitives are splatted with id 0 and occlude the body where nearer.
/// Throws if the body has points but none lands in frame.
inline RenderResult render_sample(const HumanPointCloud& cloud, const std::vector<std::uint8_t>& part_ids,
                                  const SceneSpec& scene, const Camera& cam, const RenderOptions& opt = {}) {
  if (static_cast<Index>(part_ids.size()) != cloud.size())
    throw std::invalid_argument("render_sample: part id count differs from cloud size");
  std::vector<detail::Splat> splats;
  splats.reserve(static_cast<std::size_t>(cloud.size()));
  for (Index i = 0; i < cloud.size(); ++i) {
    const auto id = part_ids[static_cast<std::size_t>(i)];
    splats.push_back({cloud.points.row(i).transpose(), part_color(id, opt.parts), id, opt.body_splat_px});
  }
  const double step = opt.scene_sample_px / cam.pixels_per_meter;
  for (const auto& prim : scene.primitives) {
    if (const auto* plane = std::get_if<Plane>(&prim))
      detail::sample_plane(*plane, cam.target, opt.floor_extent, step, splats, opt.scene_splat_px);
    else
      detail::sample_box(std::get<Box>(prim), step, splats, opt.scene_splat_px);
  }

  const Index h = cam.height, w = cam.width;
  std::vector<double> depth(static_cast<std::size_t>(h * w), std::numeric_limits<double>::infinity());
  RenderResult out;
  out.rgb = Raster(h, w, 3, 24);
  out.mask.height = h;
  out.mask.width = w;
  out.mask.parts = opt.parts;
  out.mask.mask.assign(static_cast<std::size_t>(h * w), 0);

  Index body_in_frame = 0;
  const double depth_shade = 0.35;
  for (std::size_t s = 0; s < splats.size(); ++s) {
    const auto& sp = splats[s];
    const Vec3 pr = cam.project(sp.world);
    const double r = sp.radius_px;
    const auto x0 = static_cast<Index>(std::floor(pr.x() - r)), x1 = static_cast<Index>(std::ceil(pr.x() + r));
    const auto y0 = static_cast<Index>(std::floor(pr.y() - r)), y1 = static_cast<Index>(std::ceil(pr.y() + r));
    bool landed = false;
    for (Index y = std::max<Index>(0, y0); y <= std::min(h - 1, y1); ++y)
      for (Index x = std::max<Index>(0, x0); x <= std::min(w - 1, x1); ++x) {
        // Pixel (x, y) covers [x, x+1) x [y, y+1); its center must lie
        // within the splat radius.
        const double dx = static_cast<double>(x) + 0.5 - pr.x();
        const double dy = static_cast<double>(y) + 0.5 - pr.y();
        if (dx * dx + dy * dy > r * r) continue;
        landed = true;
        const auto at = static_cast<std::size_t>(y * w + x);
        if (pr.z() >= depth[at]) continue;
        depth[at] = pr.z();
        out.mask.mask[at] = sp.id;
        const double shade = 1.0 - depth_shade * std::clamp(pr.z() * 0.5 + 0.5, 0.0, 1.0);
        for (int c = 0; c < 3; ++c)
          out.rgb.data[at * 3 + static_cast<std::size_t>(c)] =
              static_cast<std::uint8_t>(std::clamp(sp.color[static_cast<std::size_t>(c)] * shade, 0.0, 255.0));
      }
    if (landed && sp.id != 0) ++body_in_frame;
  }
  if (cloud.size() > 0 && body_in_frame == 0) throw std::invalid_argument("render_sample: body fully out of frame");
  out.image = normalize_image(out.rgb);
  return out;
}

// ---------------------------------------------------------------------------
// Whole-sample generation

struct GenerateOptions {
  int parts = kDefaultPartCount;
  Index image_height = 224;
  Index image_width = 224;
  Index n_points = 6890;
  double contact_epsilon = 0.01;
};

struct GeneratedSample {
  ContactSample sample;
  Raster rgb;
  std::vector<std::uint8_t> point_parts;
  ArticulatedBodySpec body;
  SceneSpec scene;
  Camera camera;
};

/// Per-sample seed derived from a dataset seed (splitmix64 mixing).
inline std::uint64_t sample_seed(std::uint64_t dataset_seed, std::uint64_t index) {
  std::uint64_t z = dataset_seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// One posed body in a floor-and-boxes scene. A pure function of `seed`.
inline GeneratedSample generate_sample(std::uint64_t seed, const GenerateOptions& opt, std::string id = {}) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double roll = u01(rng);
  const PoseKind kind = roll < 0.4 ? PoseKind::kStand : (roll < 0.7 ? PoseKind::kSit : PoseKind::kReach);

  const auto local = random_pose(kind, rng);
  Eigen::Isometry3d root = Eigen::Isometry3d::Identity();
  root.linear() = Eigen::AngleAxisd((u01(rng) - 0.5) * 1.2, Vec3::UnitZ()).toRotationMatrix();
  ArticulatedBodySpec body = pose_skeleton(local, root, opt.parts);
  body.pose_seed = seed;

  // Rest the body on the floor (z = 0), slightly sunk so the support
  // region has some depth.
  SceneSpec scene;
  scene.contact_epsilon = opt.contact_epsilon;
  scene.primitives.push_back(Plane{Vec3::Zero(), Vec3::UnitZ()});

  if (kind == PoseKind::kSit) {
    // Seat under the thighs; feet rest on the floor through the sink below.
    const auto& lt = body.parts[Skeleton::kLHip];
    const auto& rt = body.parts[Skeleton::kRHip];
    const double seat_top_rel = std::min({lt.a.z(), lt.b.z(), rt.a.z(), rt.b.z()}) - lt.radius;
    const double feet_rel = lowest_surface_z(body);
    translate(body, Vec3(0, 0, -feet_rel - 0.025 - 0.02 * u01(rng)));
    const double seat_top = seat_top_rel - feet_rel + 0.004 + 0.01 * u01(rng);
    const Vec3 hips = 0.5 * (lt.a + rt.a);
    const Vec3 knees = 0.5 * (lt.b + rt.b);
    Box seat;
    seat.half_extents = Vec3(0.25, 0.22, std::max(0.05, seat_top / 2));
    seat.yaw = std::atan2(knees.y() - hips.y(), knees.x() - hips.x()) - std::numbers::pi / 2;
    const Vec3 mid = hips + 0.35 * (knees - hips);
    seat.center = Vec3(mid.x(), mid.y(), seat_top - seat.half_extents.z());
    scene.primitives.push_back(seat);
  } else {
    translate(body, Vec3(0, 0, -lowest_surface_z(body) - 0.025 - 0.02 * u01(rng)));
    if (kind == PoseKind::kReach && u01(rng) < 0.75) {
      // Table-height box under one hand.
      const int hand = u01(rng) < 0.5 ? Skeleton::kLHand : Skeleton::kRHand;
      const auto& c = body.parts[static_cast<std::size_t>(hand)];
      const double hand_low = std::min(c.a.z(), c.b.z()) - c.radius;
      if (hand_low > 0.25) {
        const double top = hand_low + 0.008 + 0.01 * u01(rng);
        Box table;
        table.half_extents = Vec3(0.18 + 0.1 * u01(rng), 0.18 + 0.1 * u01(rng), top / 2);
        table.yaw = u01(rng) * std::numbers::pi;
        const Vec3 tip = 0.5 * (c.a + c.b);
        table.center = Vec3(tip.x(), tip.y(), top / 2);
        scene.primitives.push_back(table);
      }
    }
  }

  auto [cloud, ids] = sample_body(body, opt.n_points, rng);
  cloud.source_tag = SourceTag::kSmplLike;
  // Stored as float32 on disk; quantize now so a saved sample reloads exactly.
  cloud.points = cloud.points.cast<float>().cast<double>();
  ContactLabel label = label_contact(cloud, scene);

  Camera cam;
  cam.height = opt.image_height;
  cam.width = opt.image_width;
  const Eigen::RowVector3d lo = cloud.points.colwise().minCoeff();
  const Eigen::RowVector3d hi = cloud.points.colwise().maxCoeff();
  cam.target = (0.5 * (lo + hi)).transpose();
  cam.yaw = std::numbers::pi + (u01(rng) - 0.5) * 0.8;
  cam.pitch = 0.25 + 0.15 * u01(rng);
  const double extent = std::max((hi - lo).maxCoeff(), 0.5);
  cam.pixels_per_meter = 0.8 * static_cast<double>(std::min(opt.image_height, opt.image_width)) / extent;

  RenderOptions ro;
  ro.parts = opt.parts;
  const double area = std::accumulate(body.parts.begin(), body.parts.end(), 0.0,
                                      [](double s, const Capsule& c) { return s + c.area(); });
  const double spacing_px = std::sqrt(area / static_cast<double>(opt.n_points)) * cam.pixels_per_meter;
  ro.body_splat_px = std::max(0.75, 0.9 * spacing_px);
  ro.scene_splat_px = 0.75;
  RenderResult render = render_sample(cloud, ids, scene, cam, ro);

  GeneratedSample g;
  g.sample.id = std::move(id);
  g.sample.image = std::move(render.image);
  g.sample.cloud = std::move(cloud);
  g.sample.contact = std::move(label);
  g.sample.part_mask = std::move(render.mask);
  g.rgb = std::move(render.rgb);
  g.point_parts = std::move(ids);
  g.body = std::move(body);
  g.scene = std::move(scene);
  g.camera = cam;
  return g;
}

}  // namespace grace::synthetic
