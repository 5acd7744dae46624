#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

namespace scenepose {

/// Number of keypoints per pose.
inline constexpr int kNumKeypoints = 16;
/// Flattened pose dimension (x0,y0,...,x15,y15).
inline constexpr int kPoseDim = 2 * kNumKeypoints;

// Canonical 16-joint order. Indices 2 (left hip) and 11 (right shoulder)
// define the torso diameter used by PCK and must not move.
inline constexpr int kLeftHip = 2;
inline constexpr int kRightShoulder = 11;

inline constexpr std::array<const char*, kNumKeypoints> kJointNames = {
    "left_ankle",  "left_knee",     "left_hip",     "right_hip",
    "right_knee",  "right_ankle",   "pelvis",       "thorax",
    "upper_neck",  "head_top",      "right_wrist",  "right_shoulder",
    "right_elbow", "left_shoulder", "left_elbow",   "left_wrist"};

/// Skeleton edges (pairs of joint indices) for rendering.
inline constexpr std::array<std::array<int, 2>, 15> kSkeletonEdges = {{
    {0, 1},   {1, 2},   {2, 6},   {3, 4},  {4, 5},
    {3, 6},   {6, 7},   {7, 8},   {8, 9},  {10, 12},
    {12, 11}, {11, 7},  {13, 7},  {13, 14}, {14, 15},
}};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Vec2&) const = default;
};

/// Axis-aligned box. Coordinates are unitless; the frame is caller-declared.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  bool valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_max >= x_min && y_max >= y_min;
  }

  /// Unit box: centered at the origin with side length 1.
  static BBox unit() { return BBox{-0.5, -0.5, 0.5, 0.5}; }

  bool operator==(const BBox&) const = default;
};

/// A 2D pose: exactly 16 keypoints. Pixel frame is y-down; the normalized
/// frame used for templates is y-up. Conversions live in scene_prep.
struct Pose {
  std::array<Vec2, kNumKeypoints> keypoints{};

  Vec2& operator[](int i) { return keypoints[static_cast<size_t>(i)]; }
  const Vec2& operator[](int i) const { return keypoints[static_cast<size_t>(i)]; }

  bool is_finite() const {
    for (const auto& p : keypoints)
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) return false;
    return true;
  }

  /// Flat layout (x0,y0,...,x15,y15), the serialization order everywhere.
  std::array<double, kPoseDim> to_flat() const {
    std::array<double, kPoseDim> out{};
    for (int i = 0; i < kNumKeypoints; ++i) {
      out[2 * i] = keypoints[static_cast<size_t>(i)].x;
      out[2 * i + 1] = keypoints[static_cast<size_t>(i)].y;
    }
    return out;
  }

  static Pose from_flat(std::span<const double> flat) {
    if (flat.size() != kPoseDim)
      throw std::invalid_argument("pose: expected " + std::to_string(kPoseDim) +
                                  " values, got " + std::to_string(flat.size()));
    Pose p;
    for (int i = 0; i < kNumKeypoints; ++i)
      p.keypoints[static_cast<size_t>(i)] = {flat[2 * i], flat[2 * i + 1]};
    return p;
  }

  bool operator==(const Pose&) const = default;
};

/// Per-keypoint corrections in [-0.5, 0.5], flat (dx0,dy0,...).
struct Offsets {
  std::array<double, kPoseDim> values{};

  bool in_range() const {
    for (double v : values)
      if (!(v >= -0.5 && v <= 0.5)) return false;
    return true;
  }

  static Offsets zero() { return Offsets{}; }
};

/// Pose box width/height as fractions of the full-image height, each in [0, 2].
struct Scale {
  double sx = 1.0;
  double sy = 1.0;

  bool in_range() const { return sx >= 0.0 && sx <= 2.0 && sy >= 0.0 && sy <= 2.0; }
};

/// Width/height below this are clamped before division in deform/normalize.
inline constexpr double kBoxEpsilon = 1e-6;

/// Tightest axis-aligned box around the keypoints.
inline BBox enclosing_box(const Pose& pose) {
  if (!pose.is_finite()) throw std::invalid_argument("enclosing_box: non-finite keypoint");
  BBox b{pose[0].x, pose[0].y, pose[0].x, pose[0].y};
  for (const auto& p : pose.keypoints) {
    b.x_min = std::min(b.x_min, p.x);
    b.y_min = std::min(b.y_min, p.y);
    b.x_max = std::max(b.x_max, p.x);
    b.y_max = std::max(b.y_max, p.y);
  }
  return b;
}

/// Linear deformation mapping from_box corners onto to_box corners.
inline Pose deform(const Pose& pose, const BBox& from_box, const BBox& to_box) {
  if (!pose.is_finite()) throw std::invalid_argument("deform: non-finite keypoint");
  if (!from_box.valid() || !to_box.valid())
    throw std::invalid_argument("deform: invalid box");
  if (from_box == to_box) return pose;  // exact identity
  const double w = std::max(from_box.width(), kBoxEpsilon);
  const double h = std::max(from_box.height(), kBoxEpsilon);
  const double sx = to_box.width() / w;
  const double sy = to_box.height() / h;
  Pose out;
  for (int i = 0; i < kNumKeypoints; ++i) {
    out[i].x = (pose[i].x - from_box.x_min) * sx + to_box.x_min;
    out[i].y = (pose[i].y - from_box.y_min) * sy + to_box.y_min;
  }
  return out;
}

/// Deform the pose so its enclosing box becomes the unit box.
inline Pose normalize(const Pose& pose) {
  return deform(pose, enclosing_box(pose), BBox::unit());
}

/// Refine a normalized template: re-normalize (template + offsets), then
/// scale all keypoints by (sx, sy). Output is centered at the origin and
/// every coordinate lies in [-1, 1].
inline Pose refine(const Pose& tmpl, const Offsets& offsets, const Scale& scale) {
  if (!offsets.in_range()) throw std::domain_error("refine: offsets outside [-0.5, 0.5]");
  if (!scale.in_range()) throw std::domain_error("refine: scale outside [0, 2]");
  Pose shifted = tmpl;
  for (int i = 0; i < kNumKeypoints; ++i) {
    shifted[i].x += offsets.values[static_cast<size_t>(2 * i)];
    shifted[i].y += offsets.values[static_cast<size_t>(2 * i + 1)];
  }
  Pose out = normalize(shifted);
  for (auto& p : out.keypoints) {
    p.x *= scale.sx;
    p.y *= scale.sy;
  }
  return out;
}

/// Euclidean distance between the left hip and the right shoulder.
inline double torso_diameter(const Pose& pose) {
  if (!pose.is_finite()) throw std::invalid_argument("torso_diameter: non-finite keypoint");
  const Vec2& a = pose[kLeftHip];
  const Vec2& b = pose[kRightShoulder];
  return std::hypot(a.x - b.x, a.y - b.y);
}

inline double pose_distance(const Pose& a, const Pose& b) {
  double acc = 0.0;
  for (int i = 0; i < kNumKeypoints; ++i) {
    const double dx = a[i].x - b[i].x;
    const double dy = a[i].y - b[i].y;
    acc += dx * dx + dy * dy;
  }
  return std::sqrt(acc);
}

}  // namespace scenepose
