#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "scenepose/image.hpp"
#include "scenepose/pose.hpp"
#include "scenepose/templates.hpp"

namespace scenepose {

/// One training/eval sample: a scene image, the target point where a person
/// should be placed, and the ground-truth pose in pixel coordinates (y-down).
struct SceneSample {
  Image image;
  double target_x = 0.0;
  double target_y = 0.0;
  Pose gt_pose;
  std::string id;

  bool target_in_bounds() const {
    return target_x >= 0.0 && target_x <= image.width && target_y >= 0.0 &&
           target_y <= image.height;
  }
};

inline void validate_sample(const SceneSample& s) {
  if (s.image.width < 8 || s.image.height < 8)
    throw std::invalid_argument("sample: image smaller than 8x8");
  if (!s.target_in_bounds()) throw std::invalid_argument("sample: target outside image");
  if (!s.gt_pose.is_finite()) throw std::invalid_argument("sample: non-finite gt pose");
}

/// The three crops fed to the model: whole image, an H-by-H square at the
/// target, and an H/2 square at the target, each resized to crop_size.
struct PreparedInput {
  Image full_view;
  Image target_view;
  Image close_view;
  BBox full_box;  // source boxes in pixel corner coordinates
  BBox target_box;
  BBox close_box;
};

inline PreparedInput make_crops(const SceneSample& s, int crop_size = 224) {
  validate_sample(s);
  const double h = s.image.height;
  PreparedInput out;
  out.full_box = BBox{0.0, 0.0, static_cast<double>(s.image.width), h};
  out.target_box = BBox{s.target_x - h / 2.0, s.target_y - h / 2.0, s.target_x + h / 2.0,
                        s.target_y + h / 2.0};
  out.close_box = BBox{s.target_x - h / 4.0, s.target_y - h / 4.0, s.target_x + h / 4.0,
                       s.target_y + h / 4.0};
  out.full_view = sample_region(s.image, out.full_box, crop_size, crop_size);
  out.target_view = sample_region(s.image, out.target_box, crop_size, crop_size);
  out.close_view = sample_region(s.image, out.close_box, crop_size, crop_size);
  return out;
}

/// Pixel frame (y-down, corner origin) to target-relative crop frame:
/// (0,0) at the target, y up, and [-0.5, 0.5] spanning the H-by-H crop.
inline Pose pose_to_crop_frame(const Pose& pose, const SceneSample& s) {
  const double h = s.image.height;
  Pose out;
  for (int i = 0; i < kNumKeypoints; ++i) {
    out[i].x = (pose[i].x - s.target_x) / h;
    out[i].y = (s.target_y - pose[i].y) / h;
  }
  return out;
}

inline Pose crop_frame_to_pixels(const Pose& pose, const SceneSample& s) {
  const double h = s.image.height;
  Pose out;
  for (int i = 0; i < kNumKeypoints; ++i) {
    out[i].x = pose[i].x * h + s.target_x;
    out[i].y = s.target_y - pose[i].y * h;
  }
  return out;
}

/// Supervision targets derived from a sample: nearest-template class, pose
/// box extents as fractions of the image height, and the normalized pose
/// (crop frame, so y is up).
struct GroundTruthLabel {
  int class_index = 0;
  Scale scale;
  Pose norm_pose;
  bool scale_clamped = false;
};

inline GroundTruthLabel make_labels(const SceneSample& s, const TemplateLibrary& lib) {
  validate_sample(s);
  GroundTruthLabel out;
  const BBox box = enclosing_box(s.gt_pose);
  const double h = s.image.height;
  double sx = box.width() / h;
  double sy = box.height() / h;
  out.scale_clamped = sx > 2.0 || sy > 2.0;
  out.scale = Scale{std::min(sx, 2.0), std::min(sy, 2.0)};
  out.norm_pose = normalize(pose_to_crop_frame(s.gt_pose, s));
  out.class_index = nearest_template(pose_to_crop_frame(s.gt_pose, s), lib);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest: JSON listing of (id, image path, target, gt pose).
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::string image_path;  // relative to the manifest's directory
  double target_x = 0.0;
  double target_y = 0.0;
  std::array<double, kPoseDim> gt_pose{};
};

inline void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  nlohmann::json j;
  j["version"] = 1;
  auto& arr = j["samples"] = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json s;
    s["id"] = e.id;
    s["image"] = e.image_path;
    s["target"] = {e.target_x, e.target_y};
    s["gt_pose"] = std::vector<double>(e.gt_pose.begin(), e.gt_pose.end());
    arr.push_back(std::move(s));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_manifest: cannot open " + path);
  out << j.dump(2) << "\n";
}

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_manifest: parse error in " + path + ": " + e.what());
  }
  try {
    std::vector<ManifestEntry> entries;
    for (const auto& s : j.at("samples")) {
      ManifestEntry e;
      e.id = s.at("id").get<std::string>();
      e.image_path = s.at("image").get<std::string>();
      const auto target = s.at("target").get<std::vector<double>>();
      if (target.size() != 2) throw std::runtime_error("target must hold 2 values");
      e.target_x = target[0];
      e.target_y = target[1];
      const auto pose = s.at("gt_pose").get<std::vector<double>>();
      if (pose.size() != kPoseDim) throw std::runtime_error("gt_pose must hold 32 values");
      std::copy(pose.begin(), pose.end(), e.gt_pose.begin());
      entries.push_back(std::move(e));
    }
    return entries;
  } catch (const std::exception& e) {
    throw std::runtime_error("load_manifest: invalid file " + path + ": " + e.what());
  }
}

}  // namespace scenepose
