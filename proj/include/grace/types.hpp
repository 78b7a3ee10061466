#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "grace/autograd.hpp"

namespace grace {

/// Exact equality that tolerates shape mismatch.
inline bool same_matrix(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

/// RGB image normalized per channel, stored as (3 x H*W) with row-major pixels.
struct ImageInput {
  Matrix pixels;
  Index height = 0;
  Index width = 0;

  bool operator==(const ImageInput& o) const {
    return height == o.height && width == o.width && same_matrix(pixels, o.pixels);
  }
};

enum class SourceTag : std::uint8_t { kSmplLike = 0, kArbitrary = 1 };

/// Human point cloud in meters, (N x 3).
struct HumanPointCloud {
  Matrix points;
  SourceTag source_tag = SourceTag::kArbitrary;

  Index size() const { return points.rows(); }
  bool operator==(const HumanPointCloud& o) const {
    return source_tag == o.source_tag && same_matrix(points, o.points);
  }
};

using Face = std::array<std::uint32_t, 3>;

struct MeshTopology {
  std::vector<Face> faces;

  bool operator==(const MeshTopology&) const = default;
};

struct ContactLabel {
  std::vector<std::uint8_t> contact;

  std::size_t size() const { return contact.size(); }
  bool operator==(const ContactLabel&) const = default;
};

inline constexpr int kDefaultPartCount = 24;

/// Per-pixel body-part ids; 0 is background, 1..parts are body parts.
struct PartMask {
  std::vector<std::uint8_t> mask;
  Index height = 0;
  Index width = 0;
  int parts = kDefaultPartCount;

  std::uint8_t at(Index y, Index x) const { return mask[static_cast<std::size_t>(y * width + x)]; }
  bool operator==(const PartMask&) const = default;
};

/// Spatial feature map (C x H'*W').
struct FeatureGrid {
  Matrix data;
  Index height = 0;
  Index width = 0;
  Index stride = 1;

  Index channels() const { return data.rows(); }
};

/// Per-point features (C x N_p) with the retained coordinates (N_p x 3) and
/// the index of each retained point in the original cloud.
struct PointFeatures {
  Matrix data;
  Matrix coords;
  std::vector<Index> sampling_index;

  Index size() const { return coords.rows(); }
};

struct GlobalFeature {
  ColVector data;
};

struct ContactPrediction {
  ColVector probs;
  std::vector<std::uint8_t> binary;
  double threshold = 0.5;

  static ContactPrediction from_probs(ColVector probs, double threshold) {
    ContactPrediction p;
    p.binary.resize(static_cast<std::size_t>(probs.size()));
    for (Index i = 0; i < probs.size(); ++i) p.binary[static_cast<std::size_t>(i)] = probs[i] >= threshold ? 1 : 0;
    p.probs = std::move(probs);
    p.threshold = threshold;
    return p;
  }
};

struct ContactSample {
  std::string id;
  ImageInput image;
  HumanPointCloud cloud;
  ContactLabel contact;
  PartMask part_mask;
  std::optional<MeshTopology> topology;

  bool operator==(const ContactSample&) const = default;
};

inline constexpr Index kMinPoints = 64;

// ---------------------------------------------------------------------------
// Validation

enum class Violation : std::uint8_t {
  kEmptyImage,
  kImageShape,
  kImageNotFinite,
  kImageStride,
  kTooFewPoints,
  kPointsNotFinite,
  kDegenerateCloud,
  kContactLength,
  kContactValue,
  kMaskShape,
  kMaskRange,
  kFaceIndex,
  kDegenerateEdge,
};

inline const char* to_string(Violation v) {
  switch (v) {
    case Violation::kEmptyImage: return "empty_image";
    case Violation::kImageShape: return "image_shape";
    case Violation::kImageNotFinite: return "image_not_finite";
    case Violation::kImageStride: return "image_stride";
    case Violation::kTooFewPoints: return "too_few_points";
    case Violation::kPointsNotFinite: return "points_not_finite";
    case Violation::kDegenerateCloud: return "degenerate_cloud";
    case Violation::kContactLength: return "contact_length";
    case Violation::kContactValue: return "contact_value";
    case Violation::kMaskShape: return "mask_shape";
    case Violation::kMaskRange: return "mask_range";
    case Violation::kFaceIndex: return "face_index";
    case Violation::kDegenerateEdge: return "degenerate_edge";
  }
  return "unknown";
}

struct ValidationIssue {
  Violation kind;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool ok() const { return issues.empty(); }
  bool has(Violation v) const {
    return std::any_of(issues.begin(), issues.end(), [v](const auto& i) { return i.kind == v; });
  }
};

inline double bbox_diagonal(const Matrix& points) {
  if (points.rows() == 0) return 0.0;
  return (points.colwise().maxCoeff() - points.colwise().minCoeff()).norm();
}

/// Checks every invariant of a sample. `stride` (when > 0) is the image
/// encoder's total downsampling factor.
inline ValidationReport validate_sample(const ContactSample& s, Index stride = 0) {
  ValidationReport r;
  auto add = [&r](Violation v, std::string d) { r.issues.push_back({v, std::move(d)}); };

  const auto& img = s.image;
  if (img.height <= 0 || img.width <= 0) {
    add(Violation::kEmptyImage, "image has zero extent");
  } else {
    if (img.pixels.rows() != 3 || img.pixels.cols() != img.height * img.width)
      add(Violation::kImageShape, "pixel array is not 3 x H*W");
    if (!img.pixels.allFinite()) add(Violation::kImageNotFinite, "non-finite pixel");
    if (stride > 0 && (img.height % stride != 0 || img.width % stride != 0))
      add(Violation::kImageStride, "image size not divisible by encoder stride " + std::to_string(stride));
  }

  const Index n = s.cloud.size();
  if (s.cloud.points.cols() != 3) add(Violation::kPointsNotFinite, "points must have 3 columns");
  if (n < kMinPoints) add(Violation::kTooFewPoints, std::to_string(n) + " points < " + std::to_string(kMinPoints));
  if (!s.cloud.points.allFinite()) {
    add(Violation::kPointsNotFinite, "non-finite coordinate");
  } else if (n > 0 && !(bbox_diagonal(s.cloud.points) > 0)) {
    add(Violation::kDegenerateCloud, "bounding-box diagonal is zero");
  }

  if (static_cast<Index>(s.contact.size()) != n)
    add(Violation::kContactLength,
        "contact length " + std::to_string(s.contact.size()) + " vs cloud length " + std::to_string(n));
  for (auto v : s.contact.contact) {
    if (v > 1) {
      add(Violation::kContactValue, "contact value " + std::to_string(v));
      break;
    }
  }

  const auto& pm = s.part_mask;
  if (pm.height != img.height || pm.width != img.width ||
      static_cast<Index>(pm.mask.size()) != pm.height * pm.width)
    add(Violation::kMaskShape, "part mask shape differs from image");
  for (auto v : pm.mask) {
    if (v > pm.parts) {
      add(Violation::kMaskRange, "part id " + std::to_string(v) + " > J=" + std::to_string(pm.parts));
      break;
    }
  }

  if (s.topology) {
    for (const auto& f : s.topology->faces) {
      bool in_range = true;
      for (auto idx : f) in_range = in_range && static_cast<Index>(idx) < n;
      if (!in_range) {
        add(Violation::kFaceIndex, "face index out of range");
        break;
      }
      bool degenerate = false;
      for (int e = 0; e < 3; ++e) {
        const auto a = f[static_cast<std::size_t>(e)];
        const auto b = f[static_cast<std::size_t>((e + 1) % 3)];
        if (a == b || (s.cloud.points.row(a) - s.cloud.points.row(b)).squaredNorm() == 0) degenerate = true;
      }
      if (degenerate) {
        add(Violation::kDegenerateEdge, "zero-length edge");
        break;
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Cloud normalization

/// Sum that does not depend on the order of `values`.
inline double order_free_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0;
  for (double v : values) s += v;
  return s;
}

/// Centers the cloud on its centroid and scales the bounding-box diagonal
/// to 2. The result depends only on the point set, not its order.
inline Matrix normalize_cloud(const Matrix& points) {
  const Index n = points.rows();
  Eigen::RowVector3d centroid;
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<double> col(points.col(axis).data(), points.col(axis).data() + n);
    centroid[axis] = order_free_sum(std::move(col)) / static_cast<double>(n);
  }
  const double diag = bbox_diagonal(points);
  const double s = diag > 0 ? 2.0 / diag : 1.0;
  return (points.rowwise() - centroid) * s;
}

}  // namespace grace
