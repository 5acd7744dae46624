#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "scenepose/pose.hpp"
#include "scenepose/rng.hpp"

namespace scenepose {

/// Library of K normalized pose templates plus the provenance of how they
/// were selected from K' cluster centers.
struct TemplateLibrary {
  int k_prime = 0;
  std::uint64_t seed = 0;
  std::vector<Pose> templates;
  std::vector<std::string> ids;
  std::vector<std::string> tags;  // optional semantics, parallel to templates
  std::vector<int> selection;     // indices into the source cluster centers

  int size() const { return static_cast<int>(templates.size()); }

  /// FNV-1a over the coordinate bit patterns; detects any numeric drift.
  std::uint64_t content_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    const auto mix_double = [&h](double v) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xFFu;
        h *= 1099511628211ULL;
      }
    };
    for (const auto& t : templates)
      for (const auto& kp : t.keypoints) {
        mix_double(kp.x);
        mix_double(kp.y);
      }
    return h;
  }
};

inline void validate_library(const TemplateLibrary& lib) {
  if (lib.templates.empty()) throw std::invalid_argument("library: no templates");
  if (lib.ids.size() != lib.templates.size())
    throw std::invalid_argument("library: ids and templates count differ");
  for (size_t i = 0; i < lib.ids.size(); ++i)
    for (size_t j = i + 1; j < lib.ids.size(); ++j)
      if (lib.ids[i] == lib.ids[j]) throw std::invalid_argument("library: duplicate id " + lib.ids[i]);
  for (const auto& t : lib.templates) {
    const BBox b = enclosing_box(t);
    if (std::abs(b.x_min + 0.5) > 1e-6 || std::abs(b.y_min + 0.5) > 1e-6 ||
        std::abs(b.x_max - 0.5) > 1e-6 || std::abs(b.y_max - 0.5) > 1e-6)
      throw std::invalid_argument("library: template not normalized to the unit box");
  }
}

struct KmeansResult {
  std::vector<Pose> centers;
  std::vector<int> assignment;        // per input pose
  std::vector<double> objective_log;  // within-cluster SSE after each iteration
};

namespace detail {

inline double pose_sq_dist(const Pose& a, const Pose& b) {
  double acc = 0.0;
  for (int i = 0; i < kNumKeypoints; ++i) {
    const double dx = a[i].x - b[i].x;
    const double dy = a[i].y - b[i].y;
    acc += dx * dx + dy * dy;
  }
  return acc;
}

inline int nearest_center(const Pose& p, const std::vector<Pose>& centers) {
  int best = 0;
  double best_d = pose_sq_dist(p, centers[0]);
  for (size_t i = 1; i < centers.size(); ++i) {
    const double d = pose_sq_dist(p, centers[i]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace detail

/// Lloyd's algorithm over poses as 2M-vectors, k-means++ seeding. Returns a
/// fixed point: every center is the mean of its final assignment. Empty
/// clusters are re-seeded from the point farthest from its own center.
inline KmeansResult kmeans_cluster(const std::vector<Pose>& poses, int k_prime,
                                   std::uint64_t seed, int max_iter = 100) {
  const int n = static_cast<int>(poses.size());
  if (n == 0) throw std::invalid_argument("kmeans: empty input");
  if (k_prime <= 0 || k_prime > n) throw std::invalid_argument("kmeans: bad cluster count");

  Rng rng(seed);
  KmeansResult res;
  res.centers.reserve(static_cast<size_t>(k_prime));

  // k-means++ seeding.
  res.centers.push_back(poses[static_cast<size_t>(rng.uniform_int(n))]);
  std::vector<double> d2(static_cast<size_t>(n));
  while (static_cast<int>(res.centers.size()) < k_prime) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : res.centers)
        best = std::min(best, detail::pose_sq_dist(poses[static_cast<size_t>(i)], c));
      d2[static_cast<size_t>(i)] = best;
      total += best;
    }
    int pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (int i = 0; i < n; ++i) {
        r -= d2[static_cast<size_t>(i)];
        if (r <= 0.0) {
          pick = i;
          break;
        }
        pick = i;
      }
    } else {
      pick = rng.uniform_int(n);  // all points coincide with some center
    }
    res.centers.push_back(poses[static_cast<size_t>(pick)]);
  }

  std::vector<int> prev_assign;
  res.assignment.assign(static_cast<size_t>(n), 0);
  for (int iter = 0; iter < max_iter; ++iter) {
    for (int i = 0; i < n; ++i)
      res.assignment[static_cast<size_t>(i)] =
          detail::nearest_center(poses[static_cast<size_t>(i)], res.centers);

    // Re-seed empty clusters from the globally worst-fitting point.
    std::vector<int> counts(static_cast<size_t>(k_prime), 0);
    for (int a : res.assignment) ++counts[static_cast<size_t>(a)];
    for (int c = 0; c < k_prime; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) continue;
      int worst = -1;
      double worst_d = -1.0;
      for (int i = 0; i < n; ++i) {
        const int a = res.assignment[static_cast<size_t>(i)];
        if (counts[static_cast<size_t>(a)] <= 1) continue;  // keep clusters nonempty
        const double d =
            detail::pose_sq_dist(poses[static_cast<size_t>(i)], res.centers[static_cast<size_t>(a)]);
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      if (worst < 0) break;
      --counts[static_cast<size_t>(res.assignment[static_cast<size_t>(worst)])];
      res.assignment[static_cast<size_t>(worst)] = c;
      ++counts[static_cast<size_t>(c)];
    }

    // Update step: centers become the means of their members.
    std::vector<Pose> means(static_cast<size_t>(k_prime));
    for (int i = 0; i < n; ++i) {
      const int a = res.assignment[static_cast<size_t>(i)];
      for (int j = 0; j < kNumKeypoints; ++j) {
        means[static_cast<size_t>(a)][j].x += poses[static_cast<size_t>(i)][j].x;
        means[static_cast<size_t>(a)][j].y += poses[static_cast<size_t>(i)][j].y;
      }
    }
    for (int c = 0; c < k_prime; ++c)
      for (int j = 0; j < kNumKeypoints; ++j) {
        means[static_cast<size_t>(c)][j].x /= counts[static_cast<size_t>(c)];
        means[static_cast<size_t>(c)][j].y /= counts[static_cast<size_t>(c)];
      }
    res.centers = std::move(means);

    double sse = 0.0;
    for (int i = 0; i < n; ++i)
      sse += detail::pose_sq_dist(poses[static_cast<size_t>(i)],
                                  res.centers[static_cast<size_t>(res.assignment[static_cast<size_t>(i)])]);
    res.objective_log.push_back(sse);

    if (res.assignment == prev_assign) break;
    prev_assign = res.assignment;
  }
  return res;
}

/// Lloyd's algorithm is sensitive to seeding, so run it several times with
/// consecutive seeds and keep the run with the lowest final within-cluster
/// SSE (ties: earliest seed).
inline KmeansResult kmeans_restarts(const std::vector<Pose>& poses, int k_prime,
                                    std::uint64_t seed, int restarts, int max_iter = 100) {
  if (restarts < 1) throw std::invalid_argument("kmeans: restarts must be >= 1");
  KmeansResult best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    KmeansResult res = kmeans_cluster(poses, k_prime, seed + static_cast<std::uint64_t>(r),
                                      max_iter);
    const double obj = res.objective_log.back();
    if (obj < best_obj) {
      best_obj = obj;
      best = std::move(res);
    }
  }
  return best;
}

/// Picks k of the given centers. "explicit" takes the caller's indices in
/// order. "maxmin" anchors on the center nearest the global mean, starts from
/// the center farthest from that anchor, then greedily adds the center whose
/// minimum distance to the chosen set is largest (ties: lowest index).
/// k equal to the center count returns all centers in input order.
inline TemplateLibrary select_representatives(const std::vector<Pose>& centers, int k,
                                              const std::string& mode,
                                              const std::vector<int>& explicit_indices = {}) {
  const int n = static_cast<int>(centers.size());
  if (n == 0) throw std::invalid_argument("select: no centers");
  if (k <= 0 || k > n) throw std::invalid_argument("select: bad k");

  std::vector<int> chosen;
  if (mode == "explicit") {
    if (static_cast<int>(explicit_indices.size()) != k)
      throw std::invalid_argument("select: need exactly k explicit indices");
    for (int idx : explicit_indices) {
      if (idx < 0 || idx >= n) throw std::invalid_argument("select: index out of range");
      if (std::count(explicit_indices.begin(), explicit_indices.end(), idx) != 1)
        throw std::invalid_argument("select: duplicate index");
    }
    chosen = explicit_indices;
  } else if (mode == "maxmin") {
    if (k == n) {
      chosen.resize(static_cast<size_t>(n));
      std::iota(chosen.begin(), chosen.end(), 0);
    } else {
      Pose mean;
      for (const auto& c : centers)
        for (int j = 0; j < kNumKeypoints; ++j) {
          mean[j].x += c[j].x / n;
          mean[j].y += c[j].y / n;
        }
      int anchor = 0;
      double anchor_d = detail::pose_sq_dist(centers[0], mean);
      for (int i = 1; i < n; ++i) {
        const double d = detail::pose_sq_dist(centers[static_cast<size_t>(i)], mean);
        if (d < anchor_d) {
          anchor_d = d;
          anchor = i;
        }
      }
      std::vector<double> min_d(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i)
        min_d[static_cast<size_t>(i)] = detail::pose_sq_dist(centers[static_cast<size_t>(i)],
                                                             centers[static_cast<size_t>(anchor)]);
      std::vector<bool> picked(static_cast<size_t>(n), false);
      while (static_cast<int>(chosen.size()) < k) {
        int best = -1;
        for (int i = 0; i < n; ++i)
          if (!picked[static_cast<size_t>(i)] &&
              (best < 0 || min_d[static_cast<size_t>(i)] > min_d[static_cast<size_t>(best)]))
            best = i;
        picked[static_cast<size_t>(best)] = true;
        chosen.push_back(best);
        for (int i = 0; i < n; ++i)
          min_d[static_cast<size_t>(i)] =
              std::min(min_d[static_cast<size_t>(i)],
                       detail::pose_sq_dist(centers[static_cast<size_t>(i)],
                                            centers[static_cast<size_t>(best)]));
      }
    }
  } else {
    throw std::invalid_argument("select: unknown mode '" + mode + "'");
  }

  TemplateLibrary lib;
  lib.k_prime = n;
  lib.selection = chosen;
  for (int idx : chosen) {
    lib.templates.push_back(normalize(centers[static_cast<size_t>(idx)]));
    lib.ids.push_back("t" + std::to_string(idx));
    lib.tags.emplace_back();
  }
  return lib;
}

/// Index of the template nearest to normalize(pose); ties go to the lowest
/// index.
inline int nearest_template(const Pose& pose, const TemplateLibrary& lib) {
  if (lib.templates.empty()) throw std::invalid_argument("nearest_template: empty library");
  const Pose q = normalize(pose);
  int best = 0;
  double best_d = detail::pose_sq_dist(q, lib.templates[0]);
  for (size_t i = 1; i < lib.templates.size(); ++i) {
    const double d = detail::pose_sq_dist(q, lib.templates[i]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

inline void save_library(const TemplateLibrary& lib, const std::string& path) {
  nlohmann::json j;
  j["version"] = 1;
  j["k"] = lib.size();
  j["k_prime"] = lib.k_prime;
  j["seed"] = lib.seed;
  j["ids"] = lib.ids;
  j["tags"] = lib.tags;
  j["selection"] = lib.selection;
  j["hash"] = lib.content_hash();
  auto& arr = j["templates"] = nlohmann::json::array();
  for (const auto& t : lib.templates) {
    const auto flat = t.to_flat();
    arr.push_back(std::vector<double>(flat.begin(), flat.end()));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_library: cannot open " + path);
  out << j.dump(2) << "\n";
}

inline TemplateLibrary load_library(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_library: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_library: parse error in " + path + ": " + e.what());
  }
  try {
    TemplateLibrary lib;
    if (j.at("version").get<int>() != 1)
      throw std::runtime_error("unsupported version");
    lib.k_prime = j.at("k_prime").get<int>();
    lib.seed = j.at("seed").get<std::uint64_t>();
    lib.ids = j.at("ids").get<std::vector<std::string>>();
    lib.tags = j.at("tags").get<std::vector<std::string>>();
    lib.selection = j.at("selection").get<std::vector<int>>();
    for (const auto& row : j.at("templates")) {
      const auto flat = row.get<std::vector<double>>();
      lib.templates.push_back(Pose::from_flat(flat));  // throws on wrong length
    }
    if (static_cast<int>(lib.templates.size()) != j.at("k").get<int>())
      throw std::runtime_error("template count disagrees with k field");
    return lib;
  } catch (const std::exception& e) {
    throw std::runtime_error("load_library: invalid file " + path + ": " + e.what());
  }
}

}  // namespace scenepose
