#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "scenepose/cli.hpp"

using namespace scenepose;
namespace fs = std::filesystem;

namespace {

int run_cli(std::initializer_list<std::string> args) {
  std::vector<std::string> strings{"scenepose"};
  strings.insert(strings.end(), args);
  std::vector<const char*> argv;
  argv.reserve(strings.size());
  for (const auto& s : strings) argv.push_back(s.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

fs::path fresh_root(const std::string& name) {
  const fs::path root = fs::temp_directory_path() / "scenepose-cli-tests" / name;
  fs::remove_all(root);
  fs::create_directories(root);
  return root;
}

}  // namespace

TEST_CASE("command line: full pipeline produces a reproducible run chain", "[cli]") {
  const fs::path root = fresh_root("pipeline");
  const std::string ds = (root / "ds").string();
  const std::string lib_dir = (root / "lib").string();

  REQUIRE(run_cli({"gen-data", "--samples", "24", "--world-seed", "3", "--out", ds}) == 0);
  REQUIRE(fs::exists(fs::path(ds) / "manifest.json"));
  REQUIRE(fs::exists(fs::path(ds) / "truth.json"));
  REQUIRE(fs::exists(fs::path(ds) / "runconfig.json"));
  const auto data = load_dataset(ds);
  REQUIRE(data.size() == 24);

  SECTION("selecting k = k-prime keeps every cluster center in order") {
    REQUIRE(run_cli({"build-templates", "--dataset", ds, "--k-prime", "4", "--k", "4",
                     "--cluster-seed", "1", "--restarts", "8", "--out", lib_dir}) == 0);
    const TemplateLibrary lib = load_library((fs::path(lib_dir) / "library.json").string());
    REQUIRE(lib.size() == 4);
    REQUIRE(lib.selection == std::vector<int>{0, 1, 2, 3});

    std::vector<Pose> poses;
    for (const auto& s : data) poses.push_back(normalize(pose_to_crop_frame(s.gt_pose, s)));
    const KmeansResult km = kmeans_restarts(poses, 4, 1, 8);
    for (int i = 0; i < 4; ++i) {
      const Pose want = normalize(km.centers[static_cast<size_t>(i)]);
      for (int j = 0; j < kNumKeypoints; ++j) {
        REQUIRE(lib.templates[static_cast<size_t>(i)][j].x == want[j].x);
        REQUIRE(lib.templates[static_cast<size_t>(i)][j].y == want[j].y);
      }
    }
  }

  REQUIRE(run_cli({"build-templates", "--dataset", ds, "--k-prime", "4", "--k", "4",
                   "--cluster-seed", "1", "--out", lib_dir + "2"}) == 0);
  const std::string lib_path = (fs::path(lib_dir + "2") / "library.json").string();
  const TemplateLibrary lib = load_library(lib_path);

  const std::string teach = (root / "teach").string();
  REQUIRE(run_cli({"pretrain-teacher", "--dataset", ds, "--library", lib_path,
                   "--epochs-per-stage", "1", "--learning-rate", "3e-3", "--seed", "5", "--out",
                   teach}) == 0);
  const std::string teacher_ckpt = (fs::path(teach) / "teacher.ckpt").string();
  {
    const CheckpointInfo info = read_checkpoint_header(teacher_ckpt);
    REQUIRE(info.method == "teacher");
    REQUIRE(info.library_hash == lib.content_hash());
    const auto summary = nlohmann::json::parse(slurp(fs::path(teach) / "pretrain_summary.json"));
    REQUIRE(summary.at("val_before").get<double>() > 0.0);
    REQUIRE(std::isfinite(summary.at("val_after").get<double>()));
  }

  const std::string tr = (root / "train-full").string();
  REQUIRE(run_cli({"train", "--dataset", ds, "--library", lib_path, "--teacher", teacher_ckpt,
                   "--epochs-per-stage", "1", "--max-stages", "1", "--learning-rate", "1e-3",
                   "--seed", "5", "--out", tr}) == 0);
  const std::string model_ckpt = (fs::path(tr) / "model.ckpt").string();
  {
    const CheckpointInfo info = read_checkpoint_header(model_ckpt);
    REQUIRE(info.method == "full");
    REQUIRE(info.config.templates == 4);
    const std::string metrics = slurp(fs::path(tr) / "metrics.csv");
    REQUIRE(metrics.rfind(metrics_csv_header(), 0) == 0);
    REQUIRE(count_lines(metrics) >= 2);
    const auto summary = nlohmann::json::parse(slurp(fs::path(tr) / "train_summary.json"));
    REQUIRE(summary.at("stages_run").get<int>() == 1);
    const double acc = summary.at("final_accuracy").get<double>();
    REQUIRE(acc >= 0.0);
    REQUIRE(acc <= 1.0);
    REQUIRE(summary.at("evals").size() == 1);
  }

  const std::string ev = (root / "eval-full").string();
  REQUIRE(run_cli({"eval", "--dataset", ds, "--checkpoint", model_ckpt, "--library", lib_path,
                   "--ks", "1,3", "--out", ev}) == 0);
  {
    const std::string report = slurp(fs::path(ev) / "report.csv");
    REQUIRE(report.rfind("method,k,pck,mse,mse_multiplier", 0) == 0);
    REQUIRE(count_lines(report) == 3);
    const std::string samples = slurp(fs::path(ev) / "samples.csv");
    REQUIRE(count_lines(samples) == 1 + 24 * 2);

    // the dumped predictions re-score to exactly the written report
    const PredictionSet set = load_predictions((fs::path(ev) / "predictions.json").string());
    REQUIRE(set.method == "full");
    REQUIRE(set.records.size() == 24);
    for (const auto& rec : set.records) REQUIRE(rec.pred.size() == 4);
    const EvalReport rescored = score_predictions(set, data, {1, 3}, 1.0);
    REQUIRE(report_csv(rescored) == report);
  }

  SECTION("inference writes an overlay and scored poses") {
    const std::string inf = (root / "infer").string();
    REQUIRE(run_cli({"infer", "--image", (fs::path(ds) / "images" / "s00000.png").string(),
                     "--target-x", "48", "--target-y", "36", "--checkpoint", model_ckpt,
                     "--library", lib_path, "--k", "3", "--out", inf}) == 0);
    const Image overlay = read_png((fs::path(inf) / "overlay.png").string());
    REQUIRE(overlay.width == 128);
    REQUIRE(overlay.height == 96);
    const auto poses = nlohmann::json::parse(slurp(fs::path(inf) / "poses.json"));
    REQUIRE(poses.at("format").get<std::string>() == "scenepose.poses.v1");
    REQUIRE(poses.at("poses").size() == 3);
    double prev = 2.0;
    for (const auto& p : poses.at("poses")) {
      const double score = p.at("score").get<double>();
      REQUIRE(score <= prev);
      prev = score;
      REQUIRE(p.at("keypoints").size() == static_cast<size_t>(kPoseDim));
    }
  }

  SECTION("baseline methods train and evaluate through the same interface") {
    for (const std::string method : {"regression", "heatmap"}) {
      const std::string dir = (root / ("train-" + method)).string();
      REQUIRE(run_cli({"train", "--dataset", ds, "--method", method, "--epochs-per-stage", "1",
                       "--learning-rate", "1e-3", "--seed", "5", "--out", dir}) == 0);
      const std::string ckpt = (fs::path(dir) / "model.ckpt").string();
      REQUIRE(read_checkpoint_header(ckpt).method == method);
      const std::string metrics = slurp(fs::path(dir) / "metrics.csv");
      REQUIRE(metrics.rfind("epoch,loss", 0) == 0);
      REQUIRE(count_lines(metrics) == 2);

      const std::string evdir = (root / ("eval-" + method)).string();
      REQUIRE(run_cli({"eval", "--dataset", ds, "--checkpoint", ckpt, "--ks", "1", "--out",
                       evdir}) == 0);
      const std::string report = slurp(fs::path(evdir) / "report.csv");
      REQUIRE(report.find("\n" + method + ",1,") != std::string::npos);
    }
  }

  SECTION("template study emits one table row per library size") {
    const std::string study = (root / "study").string();
    REQUIRE(run_cli({"study-templates", "--dataset", ds, "--k-list", "2,3", "--k-prime", "4",
                     "--eval-fraction", "0.25", "--epochs-per-stage", "1", "--max-stages", "1",
                     "--learning-rate", "1e-3", "--ks", "1", "--seed", "5", "--out",
                     study}) == 0);
    const std::string table = slurp(fs::path(study) / "study.csv");
    REQUIRE(table.rfind("k_prime,k,accuracy,pck@1,mse@1", 0) == 0);
    REQUIRE(count_lines(table) == 3);
    REQUIRE(table.find("\n4,2,") != std::string::npos);
    REQUIRE(table.find("\n4,3,") != std::string::npos);
  }
}

TEST_CASE("command line: bad invocations exit nonzero without throwing", "[cli]") {
  const fs::path root = fresh_root("failures");
  const std::string ds = (root / "ds").string();

  REQUIRE(run_cli({}) != 0);
  REQUIRE(run_cli({"gen-data", "--samples", "0", "--out", (root / "none").string()}) != 0);

  REQUIRE(run_cli({"gen-data", "--samples", "8", "--out", ds}) == 0);
  REQUIRE(run_cli({"gen-data", "--samples", "8", "--out", ds}) != 0);  // finished run

  REQUIRE(run_cli({"build-templates", "--dataset", (root / "missing").string(), "--out",
                   (root / "x1").string()}) != 0);
  REQUIRE(run_cli({"build-templates", "--dataset", ds, "--k-prime", "50", "--out",
                   (root / "x2").string()}) != 0);

  const std::string lib_dir = (root / "lib").string();
  REQUIRE(run_cli({"build-templates", "--dataset", ds, "--k-prime", "2", "--k", "2", "--out",
                   lib_dir}) == 0);
  const std::string lib_path = (fs::path(lib_dir) / "library.json").string();

  // distillation is on by default, so a teacher is required
  REQUIRE(run_cli({"train", "--dataset", ds, "--library", lib_path, "--epochs-per-stage", "1",
                   "--out", (root / "x3").string()}) != 0);
  REQUIRE(run_cli({"train", "--dataset", ds, "--method", "bogus", "--out",
                   (root / "x4").string()}) != 0);
  REQUIRE(run_cli({"eval", "--dataset", ds, "--checkpoint", (root / "missing.ckpt").string(),
                   "--out", (root / "x5").string()}) != 0);

  const std::string teach = (root / "teach").string();
  REQUIRE(run_cli({"pretrain-teacher", "--dataset", ds, "--library", lib_path,
                   "--epochs-per-stage", "1", "--out", teach}) == 0);
  const std::string teacher_ckpt = (fs::path(teach) / "teacher.ckpt").string();
  REQUIRE(run_cli({"eval", "--dataset", ds, "--checkpoint", teacher_ckpt, "--out",
                   (root / "x6").string()}) != 0);

  const std::string reg = (root / "reg").string();
  REQUIRE(run_cli({"train", "--dataset", ds, "--method", "regression", "--epochs-per-stage", "1",
                   "--out", reg}) == 0);
  const std::string image = (fs::path(ds) / "images" / "s00000.png").string();
  const std::string reg_ckpt = (fs::path(reg) / "model.ckpt").string();
  REQUIRE(run_cli({"infer", "--image", image, "--target-x", "-5", "--target-y", "10",
                   "--checkpoint", reg_ckpt, "--out", (root / "x7").string()}) != 0);
  REQUIRE(run_cli({"infer", "--image", image, "--target-x", "10", "--target-y", "10",
                   "--checkpoint", (root / "missing.ckpt").string(), "--out",
                   (root / "x8").string()}) != 0);
}

TEST_CASE("command line: a saved run config replays the run", "[cli]") {
  const fs::path root = fresh_root("config");
  const std::string ds = (root / "ds").string();
  REQUIRE(run_cli({"gen-data", "--samples", "10", "--world-seed", "11", "--out", ds}) == 0);

  const std::string config = (fs::path(ds) / "runconfig.json").string();
  const RunConfig rc = load_runconfig(config);
  CHECK(rc.command == "gen-data");
  CHECK(rc.samples == 10);
  CHECK(rc.world.seed == 11);

  SECTION("replay is byte-identical") {
    const std::string ds2 = (root / "ds2").string();
    REQUIRE(run_cli({"gen-data", "--config", config, "--out", ds2}) == 0);
    REQUIRE(slurp(fs::path(ds) / "manifest.json") == slurp(fs::path(ds2) / "manifest.json"));
    REQUIRE(slurp(fs::path(ds) / "images" / "s00003.png") ==
            slurp(fs::path(ds2) / "images" / "s00003.png"));
  }

  SECTION("explicit flags override config file values") {
    const std::string ds3 = (root / "ds3").string();
    REQUIRE(run_cli({"gen-data", "--config", config, "--samples", "6", "--out", ds3}) == 0);
    REQUIRE(load_dataset(ds3).size() == 6);
  }

  SECTION("run config JSON round trips every field") {
    RunConfig a;
    a.command = "train";
    a.model.crop_size = 64;
    a.optim.learning_rate = 0.5;
    a.world.sigma_p = 0.07;
    a.lambda_adv = 2.5;
    a.method = "heatmap";
    a.k_prime = 9;
    a.k = 3;
    a.select_mode = "explicit";
    a.select_indices = {2, 0, 1};
    a.cluster_seed = 99;
    a.restarts = 2;
    a.eval_ks = {2, 4};
    a.mse_multiplier = 100.0;
    a.k_list = {5, 6};
    a.eval_fraction = 0.4;
    a.target_x = 7.5;
    a.target_y = 8.5;
    a.top_k = 2;
    a.dataset = "d";
    a.library = "l";
    a.teacher = "t";
    a.checkpoint = "c";
    a.image = "i";
    a.out = "o";

    const nlohmann::json j = a;
    const RunConfig b = j.get<RunConfig>();
    CHECK(nlohmann::json(b) == j);
    CHECK(b.model.crop_size == 64);
    CHECK(b.optim.learning_rate == 0.5);
    CHECK(b.world.sigma_p == 0.07);
    CHECK(b.select_indices == std::vector<int>{2, 0, 1});
    CHECK(b.eval_ks == std::vector<int>{2, 4});
  }

  SECTION("a bad config file is rejected up front") {
    const fs::path bad = root / "bad.json";
    std::ofstream(bad) << "{ not json";
    REQUIRE(run_cli({"gen-data", "--config", bad.string(), "--out",
                     (root / "ds4").string()}) != 0);
  }
}
