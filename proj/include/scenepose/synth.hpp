#pragma once

// Procedural scene/pose generator. Scenes are flat-color region compositions
// on a noisy background; the region under the target point determines which
// pose families fit there. Every sample is a pure function of (config, index).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "scenepose/image.hpp"
#include "scenepose/png_io.hpp"
#include "scenepose/pose.hpp"
#include "scenepose/rng.hpp"
#include "scenepose/scene_prep.hpp"

namespace scenepose {

struct WorldConfig {
  int image_w = 128;
  int image_h = 96;
  int families = 4;           // uses the first N canonical poses
  double sigma_p = 0.02;      // per-coordinate keypoint jitter (normalized units)
  double scale_jitter = 0.1;  // multiplicative scale noise, uniform in [1-j, 1+j]
  double shear_max = 0.15;    // horizontal shear at the region's edges
  double pixel_noise = 0.015; // additive Gaussian image noise
  double ambiguity_rate = 0.0;
  std::uint64_t seed = 1;
};

inline void to_json(nlohmann::json& j, const WorldConfig& c) {
  j = nlohmann::json{{"image_w", c.image_w},
                     {"image_h", c.image_h},
                     {"families", c.families},
                     {"sigma_p", c.sigma_p},
                     {"scale_jitter", c.scale_jitter},
                     {"shear_max", c.shear_max},
                     {"pixel_noise", c.pixel_noise},
                     {"ambiguity_rate", c.ambiguity_rate},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, WorldConfig& c) {
  j.at("image_w").get_to(c.image_w);
  j.at("image_h").get_to(c.image_h);
  j.at("families").get_to(c.families);
  j.at("sigma_p").get_to(c.sigma_p);
  j.at("scale_jitter").get_to(c.scale_jitter);
  j.at("shear_max").get_to(c.shear_max);
  j.at("pixel_noise").get_to(c.pixel_noise);
  j.at("ambiguity_rate").get_to(c.ambiguity_rate);
  j.at("seed").get_to(c.seed);
}

inline void validate_world(const WorldConfig& cfg) {
  if (cfg.image_w < 32 || cfg.image_h < 32)
    throw std::invalid_argument("world: image must be at least 32x32");
  if (cfg.families < 2 || cfg.families > 4)
    throw std::invalid_argument("world: families must be in [2,4]");
  if (cfg.ambiguity_rate < 0.0 || cfg.ambiguity_rate > 1.0)
    throw std::invalid_argument("world: ambiguity_rate must be in [0,1]");
  if (cfg.sigma_p < 0.0 || cfg.scale_jitter < 0.0 || cfg.scale_jitter >= 1.0)
    throw std::invalid_argument("world: bad noise amplitudes");
}

struct PoseFamily {
  std::string name;
  Pose canonical;       // normalized, y-up
  double base_sx = 0.0; // pose box extents as fractions of image height
  double base_sy = 0.0;
};

namespace detail {

inline Pose pose_from_points(std::initializer_list<Vec2> pts) {
  Pose p;
  int i = 0;
  for (const Vec2& v : pts) p[i++] = v;
  return normalize(p);
}

}  // namespace detail

/// The four canonical families. Joint order follows kJointNames.
inline const std::vector<PoseFamily>& pose_families() {
  static const std::vector<PoseFamily> families = [] {
    std::vector<PoseFamily> f;
    f.push_back({"stand",
                 detail::pose_from_points({{-0.06, -0.50}, {-0.055, -0.25}, {-0.05, 0.0},
                                           {0.05, 0.0},    {0.055, -0.25}, {0.06, -0.50},
                                           {0.0, 0.0},     {0.0, 0.22},    {0.0, 0.32},
                                           {0.0, 0.45},    {0.20, -0.05},  {0.09, 0.25},
                                           {0.16, 0.10},   {-0.09, 0.25},  {-0.16, 0.10},
                                           {-0.20, -0.05}}),
                 0.28, 0.62});
    f.push_back({"sit",
                 detail::pose_from_points({{0.08, -0.45},  {0.10, -0.08},  {-0.20, -0.05},
                                           {-0.16, -0.05}, {0.14, -0.08},  {0.12, -0.45},
                                           {-0.18, -0.05}, {-0.22, 0.25},  {-0.23, 0.35},
                                           {-0.24, 0.48},  {0.10, 0.05},   {-0.18, 0.28},
                                           {-0.02, 0.15},  {-0.26, 0.28},  {-0.10, 0.15},
                                           {0.02, 0.05}}),
                 0.45, 0.45});
    f.push_back({"reach",
                 detail::pose_from_points({{-0.08, -0.50}, {-0.07, -0.27}, {-0.06, -0.05},
                                           {0.06, -0.05},  {0.07, -0.27},  {0.08, -0.50},
                                           {0.0, -0.05},   {0.0, 0.15},    {0.0, 0.24},
                                           {0.0, 0.33},    {0.14, 0.50},   {0.08, 0.18},
                                           {0.12, 0.33},   {-0.08, 0.18},  {-0.12, 0.33},
                                           {-0.14, 0.50}}),
                 0.30, 0.72});
    f.push_back({"walk",
                 detail::pose_from_points({{-0.30, -0.48}, {-0.12, -0.25}, {-0.02, 0.0},
                                           {0.04, 0.0},    {0.15, -0.22},  {0.30, -0.50},
                                           {0.01, 0.0},    {0.0, 0.22},    {0.0, 0.31},
                                           {0.0, 0.44},    {0.28, 0.02},   {0.07, 0.24},
                                           {0.20, 0.12},   {-0.07, 0.24},  {-0.18, 0.10},
                                           {-0.26, -0.02}}),
                 0.50, 0.55});
    return f;
  }();
  return families;
}

struct RegionType {
  std::string name;
  std::array<float, 3> color;
  std::vector<int> families;  // admissible family indices
};

/// Region palette: one unambiguous type per family plus two-family types used
/// at the configured ambiguity rate.
inline std::vector<RegionType> region_palette(int families) {
  static const std::array<RegionType, 6> all = {{
      {"floor", {0.80f, 0.20f, 0.20f}, {0}},
      {"seat", {0.20f, 0.75f, 0.20f}, {1}},
      {"shelf", {0.20f, 0.35f, 0.85f}, {2}},
      {"doorway", {0.85f, 0.80f, 0.20f}, {3}},
      {"bench", {0.80f, 0.25f, 0.80f}, {0, 1}},
      {"mat", {0.20f, 0.80f, 0.80f}, {2, 3}},
  }};
  std::vector<RegionType> out;
  for (int i = 0; i < families; ++i) out.push_back(all[static_cast<size_t>(i)]);
  if (families >= 2) out.push_back(all[4]);
  if (families >= 4) out.push_back(all[5]);
  return out;
}

inline const std::array<float, 3> kBackgroundColor = {0.25f, 0.25f, 0.28f};

/// Geometry and labels of one sample, before any pixels are rendered.
struct SamplePlan {
  int index = 0;
  int region_type = 0;
  BBox region;  // pixel corner coordinates, fully inside the image
  std::vector<int> admissible;
  int family = 0;
  double shear = 0.0;  // applied horizontal shear
  double target_x = 0.0, target_y = 0.0;
  Scale scale;  // sampled pose box extents over image height
  Pose gt_pose_px;
  struct Distractor {
    BBox box;
    int region_type = 0;
  };
  std::vector<Distractor> distractors;
};

inline SamplePlan plan_sample(const WorldConfig& cfg, int index) {
  validate_world(cfg);
  Rng rng = Rng::for_stream(cfg.seed, static_cast<std::uint64_t>(index));
  const auto palette = region_palette(cfg.families);
  const int unambiguous = cfg.families;
  const int ambiguous = static_cast<int>(palette.size()) - unambiguous;

  SamplePlan plan;
  plan.index = index;
  const bool pick_ambiguous = ambiguous > 0 && rng.uniform() < cfg.ambiguity_rate;
  plan.region_type = pick_ambiguous ? unambiguous + rng.uniform_int(ambiguous)
                                    : rng.uniform_int(unambiguous);
  plan.admissible = palette[static_cast<size_t>(plan.region_type)].families;
  plan.family = plan.admissible[static_cast<size_t>(rng.uniform_int(
      static_cast<int>(plan.admissible.size())))];

  const double w = cfg.image_w, h = cfg.image_h;
  const double rw = rng.uniform(w / 4.0, w / 2.0);
  const double rh = rng.uniform(h / 6.0, h / 3.0);
  const double rx = rng.uniform(2.0, w - rw - 2.0);
  const double ry = rng.uniform(2.0, h - rh - 2.0);
  plan.region = BBox{rx, ry, rx + rw, ry + rh};
  plan.target_x = rng.uniform(rx + 2.0, rx + rw - 2.0);
  plan.target_y = rng.uniform(ry + 2.0, ry + rh - 2.0);

  // Shear follows the target's horizontal position inside its region, so the
  // needed pose correction is readable from the scene.
  const double rel_x = 2.0 * (plan.target_x - plan.region.center_x()) / rw;
  plan.shear = cfg.shear_max * rel_x;

  const auto& fam = pose_families()[static_cast<size_t>(plan.family)];
  Pose shape = fam.canonical;
  for (auto& kp : shape.keypoints) kp.x += plan.shear * kp.y;
  for (auto& kp : shape.keypoints) {
    kp.x += rng.normal() * cfg.sigma_p;
    kp.y += rng.normal() * cfg.sigma_p;
  }
  shape = normalize(shape);

  // Pose size: family base, a depth cue from the target's vertical position,
  // and multiplicative noise. The pose box is centered on the target.
  const double perspective = 0.75 + 0.5 * plan.target_y / h;
  const double jx = rng.uniform(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter);
  const double jy = rng.uniform(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter);
  plan.scale = Scale{std::min(2.0, fam.base_sx * perspective * jx),
                     std::min(2.0, fam.base_sy * perspective * jy)};
  const double box_w = plan.scale.sx * h;
  const double box_h = plan.scale.sy * h;
  for (int i = 0; i < kNumKeypoints; ++i) {
    plan.gt_pose_px[i].x = plan.target_x + shape[i].x * box_w;
    plan.gt_pose_px[i].y = plan.target_y - shape[i].y * box_h;
  }

  // A couple of far-away distractor regions in other colors.
  const int n_distractors = rng.uniform_int(3);
  for (int d = 0; d < n_distractors; ++d) {
    const double dw = rng.uniform(w / 8.0, w / 4.0);
    const double dh = rng.uniform(h / 8.0, h / 5.0);
    const double dx = rng.uniform(0.0, w - dw);
    const double dy = rng.uniform(0.0, h - dh);
    const int dt = rng.uniform_int(static_cast<int>(palette.size()));
    const double cx = dx + dw / 2.0, cy = dy + dh / 2.0;
    if (std::hypot(cx - plan.target_x, cy - plan.target_y) < h / 2.5) continue;
    plan.distractors.push_back({BBox{dx, dy, dx + dw, dy + dh}, dt});
  }
  return plan;
}

inline Image render_plan(const WorldConfig& cfg, const SamplePlan& plan) {
  const auto palette = region_palette(cfg.families);
  Image img(cfg.image_w, cfg.image_h);
  img.fill_rect(0, 0, cfg.image_w, cfg.image_h, kBackgroundColor);
  for (const auto& d : plan.distractors)
    img.fill_rect(static_cast<int>(d.box.x_min), static_cast<int>(d.box.y_min),
                  static_cast<int>(d.box.x_max), static_cast<int>(d.box.y_max),
                  palette[static_cast<size_t>(d.region_type)].color);
  img.fill_rect(static_cast<int>(plan.region.x_min), static_cast<int>(plan.region.y_min),
                static_cast<int>(plan.region.x_max), static_cast<int>(plan.region.y_max),
                palette[static_cast<size_t>(plan.region_type)].color);
  Rng noise = Rng::for_stream(cfg.seed, 0x9E00000000ULL + static_cast<std::uint64_t>(plan.index));
  for (float& v : img.data)
    v = std::clamp(v + static_cast<float>(noise.normal() * cfg.pixel_noise), 0.0f, 1.0f);
  return img;
}

inline std::string sample_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%05d", index);
  return buf;
}

struct SynthDataset {
  std::vector<SceneSample> samples;
  std::vector<SamplePlan> plans;  // diagnostics only; training never reads them
};

inline SynthDataset generate_dataset(const WorldConfig& cfg, int n) {
  SynthDataset out;
  out.samples.reserve(static_cast<size_t>(n));
  out.plans.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    SamplePlan plan = plan_sample(cfg, i);
    SceneSample s;
    s.image = render_plan(cfg, plan);
    s.target_x = plan.target_x;
    s.target_y = plan.target_y;
    s.gt_pose = plan.gt_pose_px;
    s.id = sample_id(i);
    out.samples.push_back(std::move(s));
    out.plans.push_back(std::move(plan));
  }
  return out;
}

/// Writes images/, manifest.json and a truth.json sidecar (family labels for
/// diagnostics; the training path reads only the manifest).
inline void save_dataset(const SynthDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  std::vector<ManifestEntry> entries;
  nlohmann::json truth;
  truth["version"] = 1;
  auto& tarr = truth["samples"] = nlohmann::json::array();
  const auto palette_names = [] {
    std::vector<std::string> names;
    for (const auto& r : region_palette(4)) names.push_back(r.name);
    return names;
  }();
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const auto& plan = ds.plans[i];
    const std::string rel = "images/" + s.id + ".png";
    write_png(s.image, (fs::path(dir) / rel).string());
    ManifestEntry e;
    e.id = s.id;
    e.image_path = rel;
    e.target_x = s.target_x;
    e.target_y = s.target_y;
    e.gt_pose = s.gt_pose.to_flat();
    entries.push_back(std::move(e));

    nlohmann::json t;
    t["id"] = s.id;
    t["family"] = plan.family;
    t["family_name"] = pose_families()[static_cast<size_t>(plan.family)].name;
    t["admissible"] = plan.admissible;
    t["region_type"] = plan.region_type;
    t["region_name"] = palette_names[static_cast<size_t>(plan.region_type)];
    t["shear"] = plan.shear;
    tarr.push_back(std::move(t));
  }
  save_manifest(entries, (fs::path(dir) / "manifest.json").string());
  std::ofstream out(fs::path(dir) / "truth.json");
  if (!out) throw std::runtime_error("save_dataset: cannot write truth.json");
  out << truth.dump(2) << "\n";
}

inline std::vector<SceneSample> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto entries = load_manifest((fs::path(dir) / "manifest.json").string());
  std::vector<SceneSample> samples;
  samples.reserve(entries.size());
  for (const auto& e : entries) {
    SceneSample s;
    s.image = read_png((fs::path(dir) / e.image_path).string());
    s.target_x = e.target_x;
    s.target_y = e.target_y;
    s.gt_pose = Pose::from_flat(e.gt_pose);
    s.id = e.id;
    samples.push_back(std::move(s));
  }
  return samples;
}

/// Returns a copy of the image with skeletons drawn in pixel coordinates and
/// an optional score annotated above each pose. The input image is untouched.
inline Image render_pose_overlay(const Image& image, const std::vector<Pose>& poses_px,
                                 const std::vector<double>& scores = {}) {
  static const std::array<std::array<float, 3>, 5> bone_colors = {{
      {1.0f, 1.0f, 1.0f},
      {1.0f, 0.6f, 0.1f},
      {0.4f, 1.0f, 0.4f},
      {0.5f, 0.7f, 1.0f},
      {1.0f, 0.4f, 1.0f},
  }};
  const std::array<float, 3> joint_color = {0.05f, 0.05f, 0.05f};
  Image out = image;
  for (size_t p = 0; p < poses_px.size(); ++p) {
    const auto& color = bone_colors[p % bone_colors.size()];
    const Pose& pose = poses_px[p];
    for (const auto& e : kSkeletonEdges)
      draw_line(out, pose[e[0]].x, pose[e[0]].y, pose[e[1]].x, pose[e[1]].y, color, 1.2);
    for (const auto& kp : pose.keypoints) draw_disc(out, kp.x, kp.y, 1.2, joint_color);
    if (p < scores.size()) {
      const BBox box = enclosing_box(pose);
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%.2f", scores[p]);
      draw_score_text(out, static_cast<int>(box.x_min), static_cast<int>(box.y_min) - 7, buf,
                      color);
    }
  }
  return out;
}

}  // namespace scenepose
