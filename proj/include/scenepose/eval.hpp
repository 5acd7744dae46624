#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "scenepose/model.hpp"
#include "scenepose/pose.hpp"
#include "scenepose/scene_prep.hpp"
#include "scenepose/templates.hpp"

namespace scenepose {

// ---------------------------------------------------------------------------
// Keypoint metrics
// ---------------------------------------------------------------------------

/// Fraction of keypoints whose error is within alpha times the ground-truth
/// torso diameter. Both poses must live in the same frame; the boundary
/// counts as correct. A zero-diameter torso shrinks the threshold to zero,
/// so only exactly coincident keypoints score.
inline double pck(const Pose& pred, const Pose& gt, double alpha = 0.2) {
  if (alpha < 0.0) throw std::invalid_argument("pck: alpha must be >= 0");
  const double thr = alpha * torso_diameter(gt);
  int correct = 0;
  for (int i = 0; i < kNumKeypoints; ++i) {
    if (std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y) <= thr) ++correct;
  }
  return static_cast<double>(correct) / kNumKeypoints;
}

/// Mean squared error over all 2M coordinates after dividing both poses by
/// the image height. `multiplier` only rescales the report.
inline double mse(const Pose& pred, const Pose& gt, double image_height,
                  double multiplier = 1.0) {
  if (image_height <= 0.0) throw std::invalid_argument("mse: image_height must be > 0");
  double acc = 0.0;
  for (int i = 0; i < kNumKeypoints; ++i) {
    const double dx = (pred[i].x - gt[i].x) / image_height;
    const double dy = (pred[i].y - gt[i].y) / image_height;
    acc += dx * dx + dy * dy;
  }
  return multiplier * acc / kPoseDim;
}

// ---------------------------------------------------------------------------
// Per-sample predictions
// ---------------------------------------------------------------------------

/// Candidate poses for one sample with their compatibility scores. The
/// model emits one candidate per template; baselines emit a single one.
/// Poses are in the crop frame (target-centred, height-normalized, y up).
struct Prediction {
  std::vector<double> scores;
  std::vector<Pose> poses;
  std::vector<Scale> scales;      // optional diagnostics, may be empty
  std::vector<Offsets> offsets;   // optional diagnostics, may be empty

  int size() const { return static_cast<int>(poses.size()); }

  void validate() const {
    if (poses.empty()) throw std::invalid_argument("Prediction: no candidate poses");
    if (scores.size() != poses.size())
      throw std::invalid_argument("Prediction: scores/poses size mismatch");
    if (!scales.empty() && scales.size() != poses.size())
      throw std::invalid_argument("Prediction: scales size mismatch");
    if (!offsets.empty() && offsets.size() != poses.size())
      throw std::invalid_argument("Prediction: offsets size mismatch");
  }
};

/// Candidate indices ordered by descending score, ties broken by lower
/// index. k is clamped to the number of candidates.
inline std::vector<int> topk_indices(const std::vector<double>& scores, int k) {
  if (k < 1) throw std::invalid_argument("topk_indices: k must be >= 1");
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = scores[static_cast<size_t>(a)], sb = scores[static_cast<size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  });
  order.resize(std::min<size_t>(static_cast<size_t>(k), order.size()));
  return order;
}

inline std::vector<Pose> topk_select(const Prediction& pred, int k) {
  pred.validate();
  std::vector<Pose> out;
  for (int i : topk_indices(pred.scores, k)) out.push_back(pred.poses[static_cast<size_t>(i)]);
  return out;
}

/// Run the generator on one sample and refine every template with its
/// predicted scale and offsets.
inline Prediction predict(const PoseGenerator& model, const TemplateLibrary& lib,
                          const ModelInputs& inputs) {
  if (lib.size() != model.config().templates)
    throw std::invalid_argument("predict: library size does not match the model");
  const ForwardOutputs out = model.forward(inputs);
  const int k = lib.size();
  Prediction p;
  for (int i = 0; i < k; ++i) {
    p.scores.push_back(out.cls->value(0, i));
    Scale s{out.scales->value(i, 0), out.scales->value(i, 1)};
    Offsets d;
    for (int j = 0; j < kPoseDim; ++j) d.values[static_cast<size_t>(j)] = out.offsets->value(i, j);
    p.scales.push_back(s);
    p.offsets.push_back(d);
    p.poses.push_back(refine(lib.templates[static_cast<size_t>(i)], d, s));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Best-of-top-k evaluation
// ---------------------------------------------------------------------------

struct SampleRecord {
  std::string id;
  std::vector<double> pck_at;  // aligned with EvalReport::ks
  std::vector<double> mse_at;
};

struct EvalReport {
  std::string method = "full";
  std::vector<int> ks = {1, 3, 5};
  std::vector<double> pck;  // mean over samples, aligned with ks
  std::vector<double> mse;  // mean over samples, multiplier already applied
  double mse_multiplier = 1.0;
  std::vector<SampleRecord> samples;

  double pck_at(int k) const { return at(pck, k); }
  double mse_at(int k) const { return at(mse, k); }

 private:
  double at(const std::vector<double>& v, int k) const {
    for (size_t i = 0; i < ks.size(); ++i)
      if (ks[i] == k) return v[i];
    throw std::out_of_range("EvalReport: k=" + std::to_string(k) + " not in report");
  }
};

/// One sample ready for scoring: candidates and truth share the pixel frame.
struct ScoredSample {
  std::string id;
  Prediction pred;  // poses in pixel frame
  Pose gt;          // pixel frame
  double image_height = 0.0;
};

/// Core protocol: per sample and per k, the best PCK (max) and the best MSE
/// (min) among the top-k candidates are taken independently, then averaged
/// over samples in order.
inline EvalReport evaluate_samples(const std::vector<ScoredSample>& items,
                                   std::vector<int> ks = {1, 3, 5},
                                   double mse_multiplier = 1.0,
                                   const std::string& method = "full") {
  if (items.empty()) throw std::invalid_argument("evaluate_samples: empty input");
  if (ks.empty()) throw std::invalid_argument("evaluate_samples: no k values");
  for (int k : ks)
    if (k < 1) throw std::invalid_argument("evaluate_samples: k must be >= 1");

  EvalReport rep;
  rep.method = method;
  rep.ks = ks;
  rep.mse_multiplier = mse_multiplier;
  rep.pck.assign(ks.size(), 0.0);
  rep.mse.assign(ks.size(), 0.0);

  for (const ScoredSample& item : items) {
    item.pred.validate();
    SampleRecord rec;
    rec.id = item.id;
    const std::vector<int> order =
        topk_indices(item.pred.scores, static_cast<int>(item.pred.scores.size()));
    for (size_t ki = 0; ki < ks.size(); ++ki) {
      const size_t take = std::min<size_t>(static_cast<size_t>(ks[ki]), order.size());
      double best_pck = 0.0, best_mse = 0.0;
      for (size_t j = 0; j < take; ++j) {
        const Pose& cand = item.pred.poses[static_cast<size_t>(order[j])];
        const double p = pck(cand, item.gt);
        const double m = mse(cand, item.gt, item.image_height, mse_multiplier);
        if (j == 0 || p > best_pck) best_pck = p;
        if (j == 0 || m < best_mse) best_mse = m;
      }
      rec.pck_at.push_back(best_pck);
      rec.mse_at.push_back(best_mse);
      rep.pck[ki] += best_pck;
      rep.mse[ki] += best_mse;
    }
    rep.samples.push_back(std::move(rec));
  }
  const double n = static_cast<double>(items.size());
  for (size_t ki = 0; ki < ks.size(); ++ki) {
    rep.pck[ki] /= n;
    rep.mse[ki] /= n;
  }
  return rep;
}

/// Evaluate the generator over a dataset. Crop-frame candidates are mapped
/// back to pixels so metrics are taken in the image frame.
inline EvalReport evaluate(const std::vector<SceneSample>& samples, const PoseGenerator& model,
                           const TemplateLibrary& lib, std::vector<int> ks = {1, 3, 5},
                           double mse_multiplier = 1.0, const std::string& method = "full") {
  std::vector<ScoredSample> items;
  items.reserve(samples.size());
  for (const SceneSample& s : samples) {
    ScoredSample item;
    item.id = s.id;
    item.pred = predict(model, lib, make_model_inputs(s, model.config()));
    for (Pose& p : item.pred.poses) p = crop_frame_to_pixels(p, s);
    item.gt = s.gt_pose;
    item.image_height = s.image.height;
    items.push_back(std::move(item));
  }
  return evaluate_samples(items, std::move(ks), mse_multiplier, method);
}

// ---------------------------------------------------------------------------
// Report output
// ---------------------------------------------------------------------------

inline std::string report_csv(const EvalReport& rep) {
  std::ostringstream out;
  out.precision(12);
  out << "method,k,pck,mse,mse_multiplier\n";
  for (size_t i = 0; i < rep.ks.size(); ++i)
    out << rep.method << ',' << rep.ks[i] << ',' << rep.pck[i] << ',' << rep.mse[i] << ','
        << rep.mse_multiplier << '\n';
  return out.str();
}

inline std::string sample_records_csv(const EvalReport& rep) {
  std::ostringstream out;
  out.precision(12);
  out << "id,k,pck,mse\n";
  for (const SampleRecord& rec : rep.samples)
    for (size_t i = 0; i < rep.ks.size(); ++i)
      out << rec.id << ',' << rep.ks[i] << ',' << rec.pck_at[i] << ',' << rec.mse_at[i] << '\n';
  return out.str();
}

inline std::string report_table(const EvalReport& rep) {
  std::ostringstream out;
  out << "method: " << rep.method << "  (" << rep.samples.size() << " samples)\n";
  out << "  k     PCK@0.2        MSE\n";
  char line[80];
  for (size_t i = 0; i < rep.ks.size(); ++i) {
    std::snprintf(line, sizeof(line), "%3d    %8.4f   %10.6f\n", rep.ks[i], rep.pck[i],
                  rep.mse[i]);
    out << line;
  }
  return out.str();
}

inline void save_report(const EvalReport& rep, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_report: cannot open " + path);
  out << report_csv(rep);
}

// ---------------------------------------------------------------------------
// Prediction dumps: external candidates can be scored by the same engine
// ---------------------------------------------------------------------------

struct PredictionRecord {
  std::string id;
  Prediction pred;  // crop-frame poses
};

struct PredictionSet {
  std::string method = "external";
  std::vector<PredictionRecord> records;
};

inline void save_predictions(const PredictionSet& set, const std::string& path) {
  nlohmann::json j;
  j["format"] = "scenepose.predictions.v1";
  j["method"] = set.method;
  auto& arr = j["samples"] = nlohmann::json::array();
  for (const PredictionRecord& rec : set.records) {
    rec.pred.validate();
    nlohmann::json s;
    s["id"] = rec.id;
    s["scores"] = rec.pred.scores;
    auto& poses = s["poses"] = nlohmann::json::array();
    for (const Pose& p : rec.pred.poses) {
      std::vector<double> flat;
      flat.reserve(kPoseDim);
      for (int i = 0; i < kNumKeypoints; ++i) {
        flat.push_back(p[i].x);
        flat.push_back(p[i].y);
      }
      poses.push_back(flat);
    }
    arr.push_back(std::move(s));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_predictions: cannot open " + path);
  out << j.dump(2) << '\n';
}

inline PredictionSet load_predictions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_predictions: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_predictions: bad JSON in " + path + ": " + e.what());
  }
  if (j.value("format", "") != "scenepose.predictions.v1")
    throw std::runtime_error("load_predictions: unrecognized format in " + path);
  PredictionSet set;
  set.method = j.value("method", "external");
  for (const auto& s : j.at("samples")) {
    PredictionRecord rec;
    rec.id = s.at("id").get<std::string>();
    rec.pred.scores = s.at("scores").get<std::vector<double>>();
    for (const auto& flat_j : s.at("poses")) {
      const auto flat = flat_j.get<std::vector<double>>();
      if (flat.size() != kPoseDim)
        throw std::runtime_error("load_predictions: pose with wrong arity in " + path);
      Pose p;
      for (int i = 0; i < kNumKeypoints; ++i) {
        p[i].x = flat[static_cast<size_t>(2 * i)];
        p[i].y = flat[static_cast<size_t>(2 * i + 1)];
      }
      rec.pred.poses.push_back(p);
    }
    rec.pred.validate();
    set.records.push_back(std::move(rec));
  }
  return set;
}

/// Join dumped predictions with the dataset they were produced from and run
/// the standard protocol.
inline EvalReport score_predictions(const PredictionSet& set,
                                    const std::vector<SceneSample>& samples,
                                    std::vector<int> ks = {1, 3, 5},
                                    double mse_multiplier = 1.0) {
  std::vector<ScoredSample> items;
  items.reserve(set.records.size());
  for (const PredictionRecord& rec : set.records) {
    auto it = std::find_if(samples.begin(), samples.end(),
                           [&](const SceneSample& s) { return s.id == rec.id; });
    if (it == samples.end())
      throw std::runtime_error("score_predictions: sample " + rec.id + " not in dataset");
    ScoredSample item;
    item.id = rec.id;
    item.pred = rec.pred;
    for (Pose& p : item.pred.poses) p = crop_frame_to_pixels(p, *it);
    item.gt = it->gt_pose;
    item.image_height = it->image.height;
    items.push_back(std::move(item));
  }
  return evaluate_samples(items, std::move(ks), mse_multiplier, set.method);
}

}  // namespace scenepose
