#pragma once

// Command-line front end. Each subcommand reads its inputs, writes everything
// it produces into one run directory and drops the resolved RunConfig there,
// so any run can be repeated from that file alone. Inputs are never modified.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scenepose/eval.hpp"
#include "scenepose/runconfig.hpp"
#include "scenepose/synth.hpp"
#include "scenepose/training.hpp"

namespace scenepose {

namespace cli_detail {

inline std::string unique_run_name(const std::string& command) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch())
                      .count() % 1000;
  std::tm tm{};
#if defined(_WIN32)
  localtime_s(&tm, &t);
#else
  localtime_r(&t, &tm);
#endif
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  std::ostringstream name;
  name << command << '-' << buf << '-' << ms;
  return name.str();
}

/// Fills in rc.out when absent and creates the directory. A directory that
/// already holds a runconfig.json is a finished run and is left untouched.
inline void resolve_out(RunConfig& rc) {
  namespace fs = std::filesystem;
  if (rc.out.empty())
    rc.out = (fs::path(default_out_root()) / unique_run_name(rc.command)).string();
  if (fs::exists(fs::path(rc.out) / "runconfig.json"))
    throw std::runtime_error(rc.command + ": " + rc.out +
                             " already holds a completed run; choose a fresh --out");
  fs::create_directories(rc.out);
}

inline void require_path(const std::string& path, const std::string& what) {
  if (path.empty()) throw std::runtime_error("missing required --" + what);
  if (!std::filesystem::exists(path))
    throw std::runtime_error(what + " not found: " + path);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

/// Training poses as the clustering stage sees them: crop frame, deformed to
/// the unit box.
inline std::vector<Pose> normalized_poses(const std::vector<SceneSample>& data) {
  std::vector<Pose> poses;
  poses.reserve(data.size());
  for (const SceneSample& s : data) poses.push_back(normalize(pose_to_crop_frame(s.gt_pose, s)));
  return poses;
}

inline std::vector<SceneSample> load_inputs(const RunConfig& rc) {
  require_path(rc.dataset, "dataset");
  std::vector<SceneSample> data = load_dataset(rc.dataset);
  if (data.empty()) throw std::runtime_error(rc.command + ": dataset is empty");
  return data;
}

inline TemplateLibrary load_lib(const RunConfig& rc) {
  require_path(rc.library, "library");
  return load_library(rc.library);
}

}  // namespace cli_detail

// ---------------------------------------------------------------------------
// Subcommand bodies. Each returns 0 on success and throws on failure.
// ---------------------------------------------------------------------------

inline int run_gen_data(RunConfig rc) {
  validate_world(rc.world);
  if (rc.samples < 1) throw std::invalid_argument("gen-data: --samples must be >= 1");
  cli_detail::resolve_out(rc);
  SynthDataset ds = generate_dataset(rc.world, rc.samples);
  save_dataset(ds, rc.out);
  save_runconfig(rc, rc.out);
  std::cout << "wrote " << ds.samples.size() << " samples to " << rc.out << "\n";
  return 0;
}

inline int run_build_templates(RunConfig rc) {
  const auto data = cli_detail::load_inputs(rc);
  if (rc.k_prime > static_cast<int>(data.size()))
    throw std::runtime_error("build-templates: --k-prime exceeds the dataset size");
  cli_detail::resolve_out(rc);

  const auto poses = cli_detail::normalized_poses(data);
  const KmeansResult km = kmeans_restarts(poses, rc.k_prime, rc.cluster_seed, rc.restarts);
  const TemplateLibrary lib =
      select_representatives(km.centers, rc.k, rc.select_mode, rc.select_indices);

  const auto path = std::filesystem::path(rc.out) / "library.json";
  save_library(lib, path.string());
  save_runconfig(rc, rc.out);
  std::cout << "selected " << lib.size() << " of " << rc.k_prime << " cluster centers (SSE "
            << km.objective_log.back() << ") -> " << path.string() << "\n";
  return 0;
}

inline int run_pretrain_teacher(RunConfig rc) {
  const auto data = cli_detail::load_inputs(rc);
  const TemplateLibrary lib = cli_detail::load_lib(rc);
  rc.model.templates = lib.size();
  rc.model.validate();
  rc.optim.validate();
  cli_detail::resolve_out(rc);

  TeacherNet teacher(rc.model);
  std::ofstream log(std::filesystem::path(rc.out) / "pretrain_log.txt");
  const PretrainResult pr = pretrain_teacher(teacher, data, lib, rc.optim, &log);

  const auto ckpt = std::filesystem::path(rc.out) / "teacher.ckpt";
  save_checkpoint(ckpt.string(), {rc.model, "teacher", lib.content_hash()}, teacher.params());

  nlohmann::json summary{{"val_before", pr.val_before},
                         {"val_after", pr.val_after},
                         {"epoch_losses", pr.epoch_losses},
                         {"steps", pr.steps}};
  cli_detail::write_text(std::filesystem::path(rc.out) / "pretrain_summary.json",
                         summary.dump(2) + "\n");
  save_runconfig(rc, rc.out);
  std::cout << "teacher validation loss " << pr.val_before << " -> " << pr.val_after << "; saved "
            << ckpt.string() << "\n";
  return 0;
}

inline int run_train(RunConfig rc) {
  const auto data = cli_detail::load_inputs(rc);
  rc.optim.validate();

  if (rc.method == "full") {
    const TemplateLibrary lib = cli_detail::load_lib(rc);
    rc.model.templates = lib.size();
    rc.model.validate();
    cli_detail::resolve_out(rc);

    PoseGenerator model(rc.model);
    Discriminator disc(rc.model);
    std::optional<TeacherNet> teacher;
    if (!rc.teacher.empty()) {
      cli_detail::require_path(rc.teacher, "teacher");
      const CheckpointInfo info = read_checkpoint_header(rc.teacher);
      if (info.method != "teacher")
        throw std::runtime_error("train: " + rc.teacher + " is a " + info.method +
                                 " checkpoint, not a teacher");
      teacher.emplace(info.config);
      load_checkpoint(rc.teacher, teacher->params(), lib.content_hash());
    } else if (rc.lambda_dis > 0.0) {
      throw std::runtime_error(
          "train: distillation needs --teacher (or disable it with --lambda-dis 0)");
    }

    Trainer trainer(model, disc, lib, rc.optim, rc.loss_weights(),
                    teacher ? &*teacher : nullptr);
    std::ofstream metrics(std::filesystem::path(rc.out) / "metrics.csv");
    const TrainResult result = trainer.fit(data, &metrics);

    const auto ckpt = std::filesystem::path(rc.out) / "model.ckpt";
    save_checkpoint(ckpt.string(), {rc.model, "full", lib.content_hash()}, model.params());

    nlohmann::json summary{{"final_accuracy", result.final_accuracy},
                           {"total_steps", result.total_steps},
                           {"total_epochs", result.total_epochs},
                           {"stages_run", result.stages_run},
                           {"labels_stabilized", result.labels_stabilized},
                           {"label_history", result.labels.history}};
    auto& evals = summary["evals"] = nlohmann::json::array();
    for (const EvalPoint& e : result.evals)
      evals.push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"accuracy", e.accuracy}});
    cli_detail::write_text(std::filesystem::path(rc.out) / "train_summary.json",
                           summary.dump(2) + "\n");
    save_runconfig(rc, rc.out);
    std::cout << "trained full model: " << result.stages_run << " stage(s), "
              << result.total_epochs << " epoch(s), holdout accuracy " << result.final_accuracy
              << "; saved " << ckpt.string() << "\n";
    return 0;
  }

  if (rc.method != "regression" && rc.method != "heatmap")
    throw std::runtime_error("train: unknown --method " + rc.method);
  rc.model.validate();
  cli_detail::resolve_out(rc);

  BaselineResult result;
  const auto ckpt = std::filesystem::path(rc.out) / "model.ckpt";
  if (rc.method == "regression") {
    RegressionBaseline model(rc.model);
    result = train_regression(model, data, rc.optim);
    save_checkpoint(ckpt.string(), {rc.model, "regression", 0}, model.params());
  } else {
    HeatmapBaseline model(rc.model);
    result = train_heatmap(model, data, rc.optim);
    save_checkpoint(ckpt.string(), {rc.model, "heatmap", 0}, model.params());
  }

  std::ostringstream csv;
  csv << "epoch,loss\n";
  csv.precision(12);
  for (size_t i = 0; i < result.epoch_losses.size(); ++i)
    csv << i << ',' << result.epoch_losses[i] << "\n";
  cli_detail::write_text(std::filesystem::path(rc.out) / "metrics.csv", csv.str());
  save_runconfig(rc, rc.out);
  std::cout << "trained " << rc.method << " baseline: " << result.epoch_losses.size()
            << " epoch(s), final loss " << result.epoch_losses.back() << "; saved "
            << ckpt.string() << "\n";
  return 0;
}

inline int run_eval(RunConfig rc) {
  const auto data = cli_detail::load_inputs(rc);
  cli_detail::require_path(rc.checkpoint, "checkpoint");
  const CheckpointInfo info = read_checkpoint_header(rc.checkpoint);
  if (info.method == "teacher")
    throw std::runtime_error("eval: teacher checkpoints embed poses and cannot be evaluated");
  rc.method = info.method;
  cli_detail::resolve_out(rc);

  // Keep the raw crop-frame candidates for the prediction dump; metrics are
  // computed in the image frame.
  PredictionSet preds;
  preds.method = info.method;
  std::vector<ScoredSample> items;
  items.reserve(data.size());

  auto add_item = [&](const SceneSample& s, Prediction pred) {
    preds.records.push_back({s.id, pred});
    ScoredSample item;
    item.id = s.id;
    item.pred = std::move(pred);
    for (Pose& p : item.pred.poses) p = crop_frame_to_pixels(p, s);
    item.gt = s.gt_pose;
    item.image_height = s.image.height;
    items.push_back(std::move(item));
  };

  if (info.method == "full") {
    const TemplateLibrary lib = cli_detail::load_lib(rc);
    if (lib.size() != info.config.templates)
      throw std::runtime_error("eval: library size does not match the checkpoint");
    PoseGenerator model(info.config);
    load_checkpoint(rc.checkpoint, model.params(), lib.content_hash());
    for (const SceneSample& s : data)
      add_item(s, predict(model, lib, make_model_inputs(s, info.config)));
  } else if (info.method == "regression") {
    RegressionBaseline model(info.config);
    load_checkpoint(rc.checkpoint, model.params());
    for (const SceneSample& s : data)
      add_item(s, predict_regression(model, make_model_inputs(s, info.config)));
  } else if (info.method == "heatmap") {
    HeatmapBaseline model(info.config);
    load_checkpoint(rc.checkpoint, model.params());
    for (const SceneSample& s : data)
      add_item(s, predict_heatmap(model, make_model_inputs(s, info.config)));
  } else {
    throw std::runtime_error("eval: unknown checkpoint method " + info.method);
  }

  const EvalReport rep = evaluate_samples(items, rc.eval_ks, rc.mse_multiplier, info.method);

  namespace fs = std::filesystem;
  cli_detail::write_text(fs::path(rc.out) / "report.csv", report_csv(rep));
  cli_detail::write_text(fs::path(rc.out) / "samples.csv", sample_records_csv(rep));
  cli_detail::write_text(fs::path(rc.out) / "report.txt", report_table(rep));
  save_predictions(preds, (fs::path(rc.out) / "predictions.json").string());
  save_runconfig(rc, rc.out);
  std::cout << report_table(rep);
  std::cout << "report written to " << rc.out << "\n";
  return 0;
}

inline int run_infer(RunConfig rc) {
  cli_detail::require_path(rc.image, "image");
  cli_detail::require_path(rc.checkpoint, "checkpoint");
  if (rc.top_k < 1) throw std::invalid_argument("infer: --k must be >= 1");
  const CheckpointInfo info = read_checkpoint_header(rc.checkpoint);

  SceneSample s;
  s.image = read_png(rc.image);
  s.target_x = rc.target_x;
  s.target_y = rc.target_y;
  s.id = "query";
  if (!s.target_in_bounds())
    throw std::invalid_argument("infer: target point lies outside the image");

  Prediction pred;
  if (info.method == "full") {
    const TemplateLibrary lib = cli_detail::load_lib(rc);
    if (lib.size() != info.config.templates)
      throw std::runtime_error("infer: library size does not match the checkpoint");
    PoseGenerator model(info.config);
    load_checkpoint(rc.checkpoint, model.params(), lib.content_hash());
    pred = predict(model, lib, make_model_inputs(s, info.config));
  } else if (info.method == "regression") {
    RegressionBaseline model(info.config);
    load_checkpoint(rc.checkpoint, model.params());
    pred = predict_regression(model, make_model_inputs(s, info.config));
  } else if (info.method == "heatmap") {
    HeatmapBaseline model(info.config);
    load_checkpoint(rc.checkpoint, model.params());
    pred = predict_heatmap(model, make_model_inputs(s, info.config));
  } else {
    throw std::runtime_error("infer: cannot run inference with a " + info.method + " checkpoint");
  }

  cli_detail::resolve_out(rc);
  const std::vector<int> order = topk_indices(pred.scores, std::min(rc.top_k, pred.size()));
  std::vector<Pose> px;
  std::vector<double> scores;
  px.reserve(order.size());
  scores.reserve(order.size());
  for (int i : order) {
    px.push_back(crop_frame_to_pixels(pred.poses[static_cast<size_t>(i)], s));
    scores.push_back(pred.scores[static_cast<size_t>(i)]);
  }

  namespace fs = std::filesystem;
  const Image overlay = render_pose_overlay(s.image, px, scores);
  write_png(overlay, (fs::path(rc.out) / "overlay.png").string());

  nlohmann::json j;
  j["format"] = "scenepose.poses.v1";
  j["target"] = {{"x", rc.target_x}, {"y", rc.target_y}};
  j["method"] = info.method;
  auto& arr = j["poses"] = nlohmann::json::array();
  for (size_t i = 0; i < px.size(); ++i) {
    std::vector<double> flat;
    flat.reserve(kPoseDim);
    for (int k = 0; k < kNumKeypoints; ++k) {
      flat.push_back(px[i][k].x);
      flat.push_back(px[i][k].y);
    }
    arr.push_back({{"score", scores[i]}, {"keypoints", flat}});
  }
  cli_detail::write_text(fs::path(rc.out) / "poses.json", j.dump(2) + "\n");
  save_runconfig(rc, rc.out);
  std::cout << "wrote " << px.size() << " pose(s) and overlay to " << rc.out << "\n";
  return 0;
}

inline int run_study_templates(RunConfig rc) {
  const auto data = cli_detail::load_inputs(rc);
  rc.optim.validate();
  rc.lambda_dis = 0.0;  // the study trains one model per K; no teacher involved
  if (rc.eval_fraction <= 0.0 || rc.eval_fraction >= 1.0)
    throw std::invalid_argument("study-templates: --eval-fraction must be in (0,1)");
  if (rc.k_list.empty()) throw std::invalid_argument("study-templates: empty --k-list");
  cli_detail::resolve_out(rc);

  const SplitIndices split =
      split_dataset(static_cast<int>(data.size()), rc.eval_fraction, rc.optim.seed);
  std::vector<SceneSample> train_set, eval_set;
  for (int i : split.train) train_set.push_back(data[static_cast<size_t>(i)]);
  for (int i : split.holdout) eval_set.push_back(data[static_cast<size_t>(i)]);
  if (train_set.empty() || eval_set.empty())
    throw std::runtime_error("study-templates: dataset too small to split");

  if (rc.k_prime > static_cast<int>(train_set.size()))
    throw std::runtime_error("study-templates: --k-prime exceeds the training split");
  const auto poses = cli_detail::normalized_poses(train_set);
  const KmeansResult km = kmeans_restarts(poses, rc.k_prime, rc.cluster_seed, rc.restarts);

  std::ostringstream csv;
  csv.precision(12);
  csv << "k_prime,k,accuracy";
  for (int k : rc.eval_ks) csv << ",pck@" << k;
  for (int k : rc.eval_ks) csv << ",mse@" << k;
  csv << "\n";

  for (int k : rc.k_list) {
    const TemplateLibrary lib = select_representatives(km.centers, k, rc.select_mode);
    ModelConfig cfg = rc.model;
    cfg.templates = k;
    cfg.validate();
    PoseGenerator model(cfg);
    Discriminator disc(cfg);
    Trainer trainer(model, disc, lib, rc.optim, rc.loss_weights());
    const TrainResult result = trainer.fit(train_set);
    const EvalReport rep = evaluate(eval_set, model, lib, rc.eval_ks, rc.mse_multiplier);

    csv << rc.k_prime << ',' << k << ',' << result.final_accuracy;
    for (double v : rep.pck) csv << ',' << v;
    for (double v : rep.mse) csv << ',' << v;
    csv << "\n";
    std::cout << "k=" << k << ": accuracy " << result.final_accuracy << ", top-1 PCK "
              << rep.pck_at(rc.eval_ks.front()) << "\n";
  }

  cli_detail::write_text(std::filesystem::path(rc.out) / "study.csv", csv.str());
  save_runconfig(rc, rc.out);
  std::cout << "study table written to " << rc.out << "/study.csv\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Flag registration. Flags mirror RunConfig keys in kebab-case; a JSON config
// loaded with --config supplies defaults that explicit flags override.
// ---------------------------------------------------------------------------

namespace cli_detail {

inline void add_config_flag(CLI::App* cmd) {
  // Parsed ahead of CLI11 in cli_main; registered here so it shows in help
  // and is accepted in any position.
  static std::string sink;
  cmd->add_option("--config", sink, "JSON run config; explicit flags override its values");
}

inline void add_out_flag(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--out", rc.out,
                  "run directory (default: $SCENEPOSE_OUT_ROOT or ./runs, timestamped)");
}

inline void add_world_flags(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--image-w", rc.world.image_w, "scene width")->capture_default_str();
  cmd->add_option("--image-h", rc.world.image_h, "scene height")->capture_default_str();
  cmd->add_option("--families", rc.world.families, "pose families")->capture_default_str();
  cmd->add_option("--sigma-p", rc.world.sigma_p, "keypoint jitter")->capture_default_str();
  cmd->add_option("--scale-jitter", rc.world.scale_jitter, "scale noise")->capture_default_str();
  cmd->add_option("--shear-max", rc.world.shear_max, "max horizontal shear")
      ->capture_default_str();
  cmd->add_option("--pixel-noise", rc.world.pixel_noise, "image noise")->capture_default_str();
  cmd->add_option("--ambiguity-rate", rc.world.ambiguity_rate,
                  "fraction of scenes admitting several families")
      ->capture_default_str();
  cmd->add_option("--world-seed", rc.world.seed, "generator seed")->capture_default_str();
}

inline void add_model_flags(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--backbone", rc.model.backbone, "small or residual")->capture_default_str();
  cmd->add_option("--crop-size", rc.model.crop_size, "input crop edge")->capture_default_str();
  cmd->add_option("--out-stride", rc.model.out_stride, "backbone stride")->capture_default_str();
  cmd->add_option("--feat-channels", rc.model.feat_channels, "fused map channels")
      ->capture_default_str();
  cmd->add_option("--embed-dim", rc.model.embed_dim, "transformer width")->capture_default_str();
  cmd->add_option("--heads", rc.model.heads, "attention heads")->capture_default_str();
  cmd->add_option("--ffn-dim", rc.model.ffn_dim, "feed-forward width")->capture_default_str();
  cmd->add_option("--scale-layers", rc.model.scale_layers, "scale decoder depth")
      ->capture_default_str();
  cmd->add_option("--offset-layers", rc.model.offset_layers, "offset decoder depth")
      ->capture_default_str();
  cmd->add_option("--head-hidden", rc.model.head_hidden, "head MLP width")
      ->capture_default_str();
  cmd->add_option("--disc-hidden", rc.model.disc_hidden, "discriminator width")
      ->capture_default_str();
  cmd->add_option("--roi-size", rc.model.roi_size, "pooled grid edge")->capture_default_str();
  cmd->add_option("--heat-upsamples", rc.model.heat_upsamples, "heatmap upsampling steps")
      ->capture_default_str();
  cmd->add_option("--heat-sigma", rc.model.heat_sigma, "heatmap stddev at crop 224")
      ->capture_default_str();
  cmd->add_option("--init-seed", rc.model.init_seed, "weight init seed")->capture_default_str();
}

inline void add_optim_flags(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--learning-rate", rc.optim.learning_rate, "SGD step size")
      ->capture_default_str();
  cmd->add_option("--weight-decay", rc.optim.weight_decay, "L2 decay")->capture_default_str();
  cmd->add_option("--backbone-lr-mult", rc.optim.backbone_lr_mult, "backbone rate factor")
      ->capture_default_str();
  cmd->add_option("--batch-size", rc.optim.batch_size, "samples per step")
      ->capture_default_str();
  cmd->add_option("--epochs-per-stage", rc.optim.epochs_per_stage, "epoch budget per stage")
      ->capture_default_str();
  cmd->add_option("--max-stages", rc.optim.max_stages, "self-training stages")
      ->capture_default_str();
  cmd->add_option("--mining-threshold", rc.optim.mining_threshold,
                  "score above which labels turn positive")
      ->capture_default_str();
  cmd->add_option("--patience", rc.optim.patience, "evals below best before a stage ends")
      ->capture_default_str();
  cmd->add_option("--holdout-fraction", rc.optim.holdout_fraction, "accuracy holdout share")
      ->capture_default_str();
  cmd->add_option("--weight-cap", rc.optim.weight_cap, "class weight ceiling")
      ->capture_default_str();
  cmd->add_option("--seed", rc.optim.seed, "training seed")->capture_default_str();
}

inline void add_loss_flags(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--lambda-offset", rc.lambda_offset, "offset loss weight")
      ->capture_default_str();
  cmd->add_option("--lambda-scale", rc.lambda_scale, "scale loss weight")
      ->capture_default_str();
  cmd->add_option("--lambda-adv", rc.lambda_adv, "adversarial loss weight")
      ->capture_default_str();
  cmd->add_option("--lambda-dis", rc.lambda_dis, "distillation loss weight")
      ->capture_default_str();
}

}  // namespace cli_detail

inline int cli_main(int argc, const char* const* argv) {
  RunConfig rc;

  // Load --config first so flag parsing overrides file values.
  try {
    for (int i = 1; i < argc; ++i) {
      const std::string arg = argv[i];
      if (arg == "--config") {
        if (i + 1 >= argc) throw std::runtime_error("--config needs a file argument");
        rc = load_runconfig(argv[i + 1]);
      } else if (arg.rfind("--config=", 0) == 0) {
        rc = load_runconfig(arg.substr(9));
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"template-based scene-aware human pose generation"};
  app.require_subcommand(1);
  cli_detail::add_config_flag(&app);

  auto* gen = app.add_subcommand("gen-data", "render a synthetic scene dataset");
  gen->add_option("--samples", rc.samples, "number of scenes")->capture_default_str();
  cli_detail::add_world_flags(gen, rc);
  cli_detail::add_config_flag(gen);
  cli_detail::add_out_flag(gen, rc);

  auto* bt = app.add_subcommand("build-templates", "cluster training poses into a library");
  bt->add_option("--dataset", rc.dataset, "dataset directory");
  bt->add_option("--k-prime", rc.k_prime, "cluster count")->capture_default_str();
  bt->add_option("--k", rc.k, "library size")->capture_default_str();
  bt->add_option("--mode", rc.select_mode, "maxmin or explicit")->capture_default_str();
  bt->add_option("--indices", rc.select_indices, "explicit center indices")->delimiter(',');
  bt->add_option("--cluster-seed", rc.cluster_seed, "k-means seed")->capture_default_str();
  bt->add_option("--restarts", rc.restarts, "k-means restarts, best SSE wins")
      ->capture_default_str();
  cli_detail::add_config_flag(bt);
  cli_detail::add_out_flag(bt, rc);

  auto* pt = app.add_subcommand("pretrain-teacher", "fit the pose embedding teacher");
  pt->add_option("--dataset", rc.dataset, "dataset directory");
  pt->add_option("--library", rc.library, "template library file");
  cli_detail::add_model_flags(pt, rc);
  cli_detail::add_optim_flags(pt, rc);
  cli_detail::add_config_flag(pt);
  cli_detail::add_out_flag(pt, rc);

  auto* tr = app.add_subcommand("train", "train the generator or a baseline");
  tr->add_option("--dataset", rc.dataset, "dataset directory");
  tr->add_option("--library", rc.library, "template library file");
  tr->add_option("--teacher", rc.teacher, "teacher checkpoint for distillation");
  tr->add_option("--method", rc.method, "full, regression or heatmap")->capture_default_str();
  cli_detail::add_model_flags(tr, rc);
  cli_detail::add_optim_flags(tr, rc);
  cli_detail::add_loss_flags(tr, rc);
  cli_detail::add_config_flag(tr);
  cli_detail::add_out_flag(tr, rc);

  auto* ev = app.add_subcommand("eval", "score a checkpoint against a dataset");
  ev->add_option("--dataset", rc.dataset, "dataset directory");
  ev->add_option("--checkpoint", rc.checkpoint, "model checkpoint");
  ev->add_option("--library", rc.library, "template library (full checkpoints)");
  ev->add_option("--ks", rc.eval_ks, "top-k cutoffs")->delimiter(',');
  ev->add_option("--mse-multiplier", rc.mse_multiplier, "MSE report factor")
      ->capture_default_str();
  cli_detail::add_config_flag(ev);
  cli_detail::add_out_flag(ev, rc);

  auto* in = app.add_subcommand("infer", "predict poses for one image and target point");
  in->add_option("--image", rc.image, "scene PNG");
  in->add_option("--target-x", rc.target_x, "target x in pixels");
  in->add_option("--target-y", rc.target_y, "target y in pixels");
  in->add_option("--checkpoint", rc.checkpoint, "model checkpoint");
  in->add_option("--library", rc.library, "template library (full checkpoints)");
  in->add_option("--k", rc.top_k, "poses to keep")->capture_default_str();
  cli_detail::add_config_flag(in);
  cli_detail::add_out_flag(in, rc);

  auto* st = app.add_subcommand("study-templates", "sweep library sizes and tabulate metrics");
  st->add_option("--dataset", rc.dataset, "dataset directory");
  st->add_option("--k-list", rc.k_list, "library sizes to sweep")->delimiter(',');
  st->add_option("--k-prime", rc.k_prime, "cluster count")->capture_default_str();
  st->add_option("--eval-fraction", rc.eval_fraction, "held-out share for the table")
      ->capture_default_str();
  st->add_option("--cluster-seed", rc.cluster_seed, "k-means seed")->capture_default_str();
  st->add_option("--restarts", rc.restarts, "k-means restarts")->capture_default_str();
  st->add_option("--ks", rc.eval_ks, "top-k cutoffs")->delimiter(',');
  st->add_option("--mse-multiplier", rc.mse_multiplier, "MSE report factor")
      ->capture_default_str();
  cli_detail::add_model_flags(st, rc);
  cli_detail::add_optim_flags(st, rc);
  cli_detail::add_loss_flags(st, rc);
  cli_detail::add_config_flag(st);
  cli_detail::add_out_flag(st, rc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) {
      rc.command = "gen-data";
      return run_gen_data(std::move(rc));
    }
    if (bt->parsed()) {
      rc.command = "build-templates";
      return run_build_templates(std::move(rc));
    }
    if (pt->parsed()) {
      rc.command = "pretrain-teacher";
      return run_pretrain_teacher(std::move(rc));
    }
    if (tr->parsed()) {
      rc.command = "train";
      return run_train(std::move(rc));
    }
    if (ev->parsed()) {
      rc.command = "eval";
      return run_eval(std::move(rc));
    }
    if (in->parsed()) {
      rc.command = "infer";
      return run_infer(std::move(rc));
    }
    if (st->parsed()) {
      rc.command = "study-templates";
      return run_study_templates(std::move(rc));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << app.help();
  return 1;
}

}  // namespace scenepose
