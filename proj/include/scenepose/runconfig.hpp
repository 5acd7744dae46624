#pragma once

// Resolved settings for one CLI run. Every command writes the full RunConfig
// into its output directory so a run can be reproduced from that file alone.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "scenepose/losses.hpp"
#include "scenepose/model.hpp"
#include "scenepose/synth.hpp"
#include "scenepose/training.hpp"

namespace scenepose {

struct RunConfig {
  std::string command;

  ModelConfig model = ModelConfig::desk();
  OptimConfig optim;
  WorldConfig world;

  // objective weights (class weights are computed from data, not configured)
  double lambda_offset = 10.0;
  double lambda_scale = 10.0;
  double lambda_adv = 10.0;
  double lambda_dis = 1.0;

  std::string method = "full";  // train/eval: full, regression or heatmap

  // data generation
  int samples = 200;

  // template building
  int k_prime = 30;
  int k = 14;
  std::string select_mode = "maxmin";
  std::vector<int> select_indices;
  std::uint64_t cluster_seed = 7;
  int restarts = 8;

  // evaluation
  std::vector<int> eval_ks = {1, 3, 5};
  double mse_multiplier = 1.0;

  // template study
  std::vector<int> k_list = {7, 10, 14, 20};
  double eval_fraction = 0.25;

  // inference
  double target_x = 0.0;
  double target_y = 0.0;
  int top_k = 5;

  // paths
  std::string dataset;
  std::string library;
  std::string teacher;
  std::string checkpoint;
  std::string image;
  std::string out;

  LossWeights loss_weights() const {
    LossWeights w;
    w.lambda_offset = lambda_offset;
    w.lambda_scale = lambda_scale;
    w.lambda_adv = lambda_adv;
    w.lambda_dis = lambda_dis;
    return w;
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"command", c.command},
                     {"model", c.model},
                     {"optim", c.optim},
                     {"world", c.world},
                     {"lambda_offset", c.lambda_offset},
                     {"lambda_scale", c.lambda_scale},
                     {"lambda_adv", c.lambda_adv},
                     {"lambda_dis", c.lambda_dis},
                     {"method", c.method},
                     {"samples", c.samples},
                     {"k_prime", c.k_prime},
                     {"k", c.k},
                     {"select_mode", c.select_mode},
                     {"select_indices", c.select_indices},
                     {"cluster_seed", c.cluster_seed},
                     {"restarts", c.restarts},
                     {"eval_ks", c.eval_ks},
                     {"mse_multiplier", c.mse_multiplier},
                     {"k_list", c.k_list},
                     {"eval_fraction", c.eval_fraction},
                     {"target_x", c.target_x},
                     {"target_y", c.target_y},
                     {"top_k", c.top_k},
                     {"dataset", c.dataset},
                     {"library", c.library},
                     {"teacher", c.teacher},
                     {"checkpoint", c.checkpoint},
                     {"image", c.image},
                     {"out", c.out}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  // Partial files are fine: absent keys keep their defaults, so a config can
  // pin just the fields it cares about.
  c.command = j.value("command", c.command);
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("optim")) j.at("optim").get_to(c.optim);
  if (j.contains("world")) j.at("world").get_to(c.world);
  c.lambda_offset = j.value("lambda_offset", c.lambda_offset);
  c.lambda_scale = j.value("lambda_scale", c.lambda_scale);
  c.lambda_adv = j.value("lambda_adv", c.lambda_adv);
  c.lambda_dis = j.value("lambda_dis", c.lambda_dis);
  c.method = j.value("method", c.method);
  c.samples = j.value("samples", c.samples);
  c.k_prime = j.value("k_prime", c.k_prime);
  c.k = j.value("k", c.k);
  c.select_mode = j.value("select_mode", c.select_mode);
  c.select_indices = j.value("select_indices", c.select_indices);
  c.cluster_seed = j.value("cluster_seed", c.cluster_seed);
  c.restarts = j.value("restarts", c.restarts);
  c.eval_ks = j.value("eval_ks", c.eval_ks);
  c.mse_multiplier = j.value("mse_multiplier", c.mse_multiplier);
  c.k_list = j.value("k_list", c.k_list);
  c.eval_fraction = j.value("eval_fraction", c.eval_fraction);
  c.target_x = j.value("target_x", c.target_x);
  c.target_y = j.value("target_y", c.target_y);
  c.top_k = j.value("top_k", c.top_k);
  c.dataset = j.value("dataset", c.dataset);
  c.library = j.value("library", c.library);
  c.teacher = j.value("teacher", c.teacher);
  c.checkpoint = j.value("checkpoint", c.checkpoint);
  c.image = j.value("image", c.image);
  c.out = j.value("out", c.out);
}

/// Default parent for run directories; overridden by SCENEPOSE_OUT_ROOT.
inline std::string default_out_root() {
  if (const char* env = std::getenv("SCENEPOSE_OUT_ROOT"); env && *env) return env;
  return "runs";
}

inline RunConfig load_runconfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("runconfig: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("runconfig: bad JSON in " + path + ": " + e.what());
  }
  return j.get<RunConfig>();
}

inline void save_runconfig(const RunConfig& rc, const std::string& dir) {
  namespace fs = std::filesystem;
  std::ofstream out(fs::path(dir) / "runconfig.json");
  if (!out) throw std::runtime_error("runconfig: cannot write into " + dir);
  out << nlohmann::json(rc).dump(2) << "\n";
}

}  // namespace scenepose
