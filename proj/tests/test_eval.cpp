#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "scenepose/eval.hpp"
#include "scenepose/rng.hpp"
#include "scenepose/synth.hpp"

using namespace scenepose;

namespace {

Pose random_pose(Rng& rng, double lo, double hi) {
  Pose p;
  for (int i = 0; i < kNumKeypoints; ++i) p[i] = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
  return p;
}

// Torso diameter exactly 50 (3-4-5 triangle scaled by 10). Integer
// coordinates keep later shifts exact in floating point.
Pose torso50_pose(Rng& rng) {
  Pose p;
  for (int i = 0; i < kNumKeypoints; ++i)
    p[i] = {static_cast<double>(rng.uniform_int(100)), static_cast<double>(rng.uniform_int(100))};
  p[kLeftHip] = {10.0, 10.0};
  p[kRightShoulder] = {40.0, 50.0};
  return p;
}

Pose shifted(const Pose& p, double dx, double dy = 0.0) {
  Pose out = p;
  for (int i = 0; i < kNumKeypoints; ++i) {
    out[i].x += dx;
    out[i].y += dy;
  }
  return out;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.crop_size = 32;
  cfg.out_stride = 8;
  cfg.feat_channels = 8;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.ffn_dim = 8;
  cfg.scale_layers = 1;
  cfg.offset_layers = 1;
  cfg.head_hidden = 8;
  cfg.disc_hidden = 8;
  cfg.roi_size = 2;
  cfg.templates = 2;
  cfg.heat_upsamples = 0;
  cfg.init_seed = 5;
  return cfg;
}

TemplateLibrary tiny_library() {
  TemplateLibrary lib;
  const auto fams = pose_families();
  lib.templates = {fams[0].canonical, fams[1].canonical};
  lib.ids = {"t0", "t1"};
  lib.k_prime = 2;
  return lib;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("pck scores exact matches and closed thresholds") {
  Rng rng(71);
  const Pose gt = torso50_pose(rng);
  CHECK(pck(gt, gt) == 1.0);

  // threshold = 0.2 * 50 = 10 exactly; the boundary counts as correct
  CHECK(pck(shifted(gt, 10.0), gt) == 1.0);
  CHECK(pck(shifted(gt, 10.0 + 1e-6), gt) == 0.0);
  CHECK(pck(shifted(gt, 6.0, 8.0), gt) == 1.0);  // distance 10 off-axis

  // fractional counts
  Pose mixed = gt;
  for (int i = 0; i < 6; ++i) mixed[i].x += 25.0;
  CHECK(pck(mixed, gt) == Catch::Approx(10.0 / 16.0).margin(1e-15));

  CHECK_THROWS_AS(pck(gt, gt, -0.1), std::invalid_argument);
}

TEST_CASE("pck matches a per-keypoint loop oracle exactly") {
  Rng rng(72);
  for (int trial = 0; trial < 50; ++trial) {
    const Pose gt = random_pose(rng, -5.0, 5.0);
    const Pose pred = random_pose(rng, -5.0, 5.0);
    const double alpha = rng.uniform(0.05, 1.0);
    const double thr = alpha * torso_diameter(gt);
    int correct = 0;
    for (int i = 0; i < kNumKeypoints; ++i)
      if (std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y) <= thr) ++correct;
    CHECK(pck(pred, gt, alpha) == static_cast<double>(correct) / kNumKeypoints);
  }
}

TEST_CASE("pck with a degenerate torso only accepts coincident keypoints") {
  Rng rng(73);
  Pose gt = random_pose(rng, 0.0, 10.0);
  gt[kRightShoulder] = gt[kLeftHip];
  CHECK(pck(gt, gt) == 1.0);

  Pose off = gt;
  off[4].x += 1e-12;
  CHECK(pck(off, gt) == Catch::Approx(15.0 / 16.0).margin(1e-15));
  CHECK(pck(random_pose(rng, 20.0, 30.0), gt) == 0.0);
}

TEST_CASE("pck is invariant to uniform scaling of both poses") {
  Rng rng(74);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose gt = random_pose(rng, -3.0, 3.0);
    const Pose pred = random_pose(rng, -3.0, 3.0);
    const double base = pck(pred, gt);
    for (double a : {2.0, 0.25, 16.0}) {  // power-of-two scales keep it bitwise
      Pose sg = gt, sp = pred;
      for (int i = 0; i < kNumKeypoints; ++i) {
        sg[i] = {gt[i].x * a, gt[i].y * a};
        sp[i] = {pred[i].x * a, pred[i].y * a};
      }
      CHECK(pck(sp, sg) == base);
    }
  }
}

TEST_CASE("mse hits its pinned values") {
  Rng rng(75);
  const Pose gt = random_pose(rng, 0.0, 90.0);
  CHECK(mse(gt, gt, 96.0) == 0.0);

  Pose off = gt;
  off[3].x += 96.0;  // one coordinate off by the image height
  CHECK(mse(off, gt, 96.0) == Catch::Approx(1.0 / kPoseDim).margin(1e-15));

  CHECK(mse(off, gt, 96.0, 1000.0) ==
        Catch::Approx(1000.0 * mse(off, gt, 96.0)).margin(1e-9));
  CHECK_THROWS_AS(mse(gt, gt, 0.0), std::invalid_argument);
}

TEST_CASE("mse matches a loop oracle and respects frame consistency") {
  Rng rng(76);
  for (int trial = 0; trial < 30; ++trial) {
    const Pose gt = random_pose(rng, 0.0, 100.0);
    const Pose pred = random_pose(rng, 0.0, 100.0);
    const double h = rng.uniform(50.0, 200.0);

    double acc = 0.0;
    for (int i = 0; i < kNumKeypoints; ++i) {
      const double dx = (pred[i].x - gt[i].x) / h;
      const double dy = (pred[i].y - gt[i].y) / h;
      acc += dx * dx + dy * dy;
    }
    const double base = mse(pred, gt, h);
    CHECK(base == Catch::Approx(acc / kPoseDim).margin(1e-12));

    Pose sg = gt, sp = pred;
    for (int i = 0; i < kNumKeypoints; ++i) {
      sg[i] = {gt[i].x * 2.0, gt[i].y * 2.0};
      sp[i] = {pred[i].x * 2.0, pred[i].y * 2.0};
    }
    CHECK(mse(sp, sg, 2.0 * h) == base);

    const double a = 1.7;
    for (int i = 0; i < kNumKeypoints; ++i) {
      sg[i] = {gt[i].x * a, gt[i].y * a};
      sp[i] = {pred[i].x * a, pred[i].y * a};
    }
    CHECK(mse(sp, sg, a * h) == Catch::Approx(base).margin(1e-12));
  }
}

TEST_CASE("topk_select orders by score with index tiebreaks") {
  Rng rng(77);
  Prediction pred;
  pred.scores = {0.5, 0.9, 0.9, 0.1};
  for (int i = 0; i < 4; ++i) pred.poses.push_back(shifted(random_pose(rng, 0, 1), i * 10.0));

  auto top1 = topk_select(pred, 1);
  REQUIRE(top1.size() == 1);
  CHECK(top1[0][0].x == pred.poses[1][0].x);  // ties resolved to index 1, not 2

  auto all = topk_select(pred, 4);
  REQUIRE(all.size() == 4);
  CHECK(all[0][0].x == pred.poses[1][0].x);
  CHECK(all[1][0].x == pred.poses[2][0].x);
  CHECK(all[2][0].x == pred.poses[0][0].x);
  CHECK(all[3][0].x == pred.poses[3][0].x);

  CHECK(topk_select(pred, 10).size() == 4);  // k clamps to the candidate count
  CHECK_THROWS_AS(topk_select(pred, 0), std::invalid_argument);

  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + rng.uniform_int(8);
    std::vector<double> scores(static_cast<size_t>(n));
    for (auto& s : scores) s = rng.uniform_int(5) * 0.2;  // deliberate ties
    std::vector<int> oracle(scores.size());
    std::iota(oracle.begin(), oracle.end(), 0);
    std::stable_sort(oracle.begin(), oracle.end(), [&](int a, int b) {
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    });
    CHECK(topk_indices(scores, n) == oracle);
  }
}

TEST_CASE("best-of-top-k report matches a hand-built fixture") {
  Rng rng(78);
  const double h = 100.0;
  std::vector<ScoredSample> items;
  double want_top1_pck = 0.0, want_top1_mse = 0.0;
  for (int i = 0; i < 10; ++i) {
    const Pose gt = torso50_pose(rng);  // threshold 10 at alpha 0.2
    const double d_far = (i % 2 == 0) ? 5.0 : 15.0;
    const double d_mid = 2.0 + 0.5 * i;

    ScoredSample item;
    item.id = sample_id(i);
    item.gt = gt;
    item.image_height = h;
    item.pred.scores = {0.9, 0.5, 0.1};
    item.pred.poses = {shifted(gt, d_far), gt, shifted(gt, d_mid)};
    items.push_back(item);

    want_top1_pck += (d_far <= 10.0) ? 1.0 : 0.0;
    want_top1_mse += (d_far / h) * (d_far / h) / 2.0;  // x shifted on all M keypoints
  }
  want_top1_pck /= 10.0;
  want_top1_mse /= 10.0;

  const EvalReport rep = evaluate_samples(items, {1, 2, 3});
  REQUIRE(rep.ks == std::vector<int>{1, 2, 3});
  CHECK(rep.pck_at(1) == Catch::Approx(want_top1_pck).margin(1e-12));
  CHECK(rep.mse_at(1) == Catch::Approx(want_top1_mse).margin(1e-12));
  CHECK(rep.pck_at(2) == 1.0);  // the exact candidate enters at k=2
  CHECK(rep.mse_at(2) == 0.0);
  CHECK(rep.pck_at(3) == 1.0);
  CHECK(rep.mse_at(3) == 0.0);

  REQUIRE(rep.samples.size() == 10);
  CHECK(rep.samples[0].id == "s00000");
  CHECK(rep.samples[1].pck_at[0] == 0.0);             // d_far = 15 misses
  CHECK(rep.samples[0].pck_at[0] == 1.0);             // d_far = 5 within threshold
  CHECK(rep.samples[1].mse_at[1] == 0.0);

  CHECK_THROWS_AS(evaluate_samples({}, {1}), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_samples(items, {}), std::invalid_argument);
  CHECK_THROWS_AS(evaluate_samples(items, {0}), std::invalid_argument);
}

TEST_CASE("top-k metrics weakly improve as k grows") {
  Rng rng(79);
  std::vector<ScoredSample> items;
  for (int i = 0; i < 12; ++i) {
    ScoredSample item;
    item.id = sample_id(i);
    item.gt = random_pose(rng, 0.0, 100.0);
    item.image_height = 96.0;
    const int n = 5;
    for (int c = 0; c < n; ++c) {
      item.pred.scores.push_back(rng.uniform());
      item.pred.poses.push_back(random_pose(rng, 0.0, 100.0));
    }
    items.push_back(item);
  }
  const EvalReport rep = evaluate_samples(items, {1, 2, 3, 4, 5});
  for (size_t i = 1; i < rep.ks.size(); ++i) {
    CHECK(rep.pck[i] >= rep.pck[i - 1]);
    CHECK(rep.mse[i] <= rep.mse[i - 1]);
    for (const SampleRecord& rec : rep.samples) {
      CHECK(rec.pck_at[i] >= rec.pck_at[i - 1]);
      CHECK(rec.mse_at[i] <= rec.mse_at[i - 1]);
    }
  }
}

TEST_CASE("k=1 evaluation equals plain single-pose scoring") {
  Rng rng(80);
  std::vector<ScoredSample> items;
  for (int i = 0; i < 8; ++i) {
    ScoredSample item;
    item.id = sample_id(i);
    item.gt = random_pose(rng, 0.0, 50.0);
    item.image_height = 64.0;
    for (int c = 0; c < 3; ++c) {
      item.pred.scores.push_back(rng.uniform());
      item.pred.poses.push_back(random_pose(rng, 0.0, 50.0));
    }
    items.push_back(item);
  }
  const EvalReport rep = evaluate_samples(items, {1});
  double want_pck = 0.0, want_mse = 0.0;
  for (const ScoredSample& item : items) {
    const Pose best = topk_select(item.pred, 1)[0];
    want_pck += pck(best, item.gt);
    want_mse += mse(best, item.gt, item.image_height);
  }
  CHECK(rep.pck_at(1) == Catch::Approx(want_pck / 8.0).margin(1e-12));
  CHECK(rep.mse_at(1) == Catch::Approx(want_mse / 8.0).margin(1e-12));
}

TEST_CASE("model predictions evaluate deterministically end to end") {
  const ModelConfig cfg = tiny_config();
  PoseGenerator model(cfg);
  const TemplateLibrary lib = tiny_library();

  WorldConfig wcfg;
  wcfg.seed = 9;
  const SynthDataset data = generate_dataset(wcfg, 3);

  const Prediction p = predict(model, lib, make_model_inputs(data.samples[0], cfg));
  REQUIRE(p.size() == 2);
  REQUIRE(p.scales.size() == 2);
  REQUIRE(p.offsets.size() == 2);
  for (double s : p.scores) {
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
  for (const Pose& pose : p.poses)
    for (int i = 0; i < kNumKeypoints; ++i) {
      CHECK(std::abs(pose[i].x) <= 1.0);
      CHECK(std::abs(pose[i].y) <= 1.0);
    }

  const EvalReport a = evaluate(data.samples, model, lib, {1, 3, 5}, 1.0, "tiny");
  const EvalReport b = evaluate(data.samples, model, lib, {1, 3, 5}, 1.0, "tiny");
  REQUIRE(a.samples.size() == 3);
  CHECK(a.method == "tiny");
  CHECK(a.pck == b.pck);
  CHECK(a.mse == b.mse);
  CHECK(a.pck_at(3) >= a.pck_at(1));
  CHECK(a.mse_at(3) <= a.mse_at(1));
  CHECK(a.pck_at(5) == a.pck_at(3));  // only two candidates exist

  TemplateLibrary wrong = lib;
  wrong.templates.push_back(lib.templates[0]);
  CHECK_THROWS_AS(predict(model, wrong, make_model_inputs(data.samples[0], cfg)),
                  std::invalid_argument);
}

TEST_CASE("report serialization carries every row") {
  Rng rng(81);
  std::vector<ScoredSample> items;
  for (int i = 0; i < 2; ++i) {
    ScoredSample item;
    item.id = sample_id(i);
    item.gt = random_pose(rng, 0.0, 10.0);
    item.image_height = 32.0;
    item.pred.scores = {1.0};
    item.pred.poses = {random_pose(rng, 0.0, 10.0)};
    items.push_back(item);
  }
  const EvalReport rep = evaluate_samples(items, {1, 3}, 1000.0, "probe");

  const std::string csv = report_csv(rep);
  CHECK(csv.find("method,k,pck,mse,mse_multiplier") == 0);
  CHECK(csv.find("probe,1,") != std::string::npos);
  CHECK(csv.find("probe,3,") != std::string::npos);

  const std::string rows = sample_records_csv(rep);
  CHECK(rows.find("s00000,1,") != std::string::npos);
  CHECK(rows.find("s00001,3,") != std::string::npos);

  const std::string table = report_table(rep);
  CHECK(table.find("probe") != std::string::npos);
  CHECK(table.find("PCK@0.2") != std::string::npos);

  const std::string path = temp_path("scenepose_report.csv");
  save_report(rep, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "method,k,pck,mse,mse_multiplier");
  std::remove(path.c_str());
}

TEST_CASE("prediction dumps round trip and score identically") {
  const ModelConfig cfg = tiny_config();
  PoseGenerator model(cfg);
  const TemplateLibrary lib = tiny_library();
  WorldConfig wcfg;
  wcfg.seed = 10;
  const SynthDataset data = generate_dataset(wcfg, 3);

  PredictionSet set;
  set.method = "dumped";
  for (const SceneSample& s : data.samples)
    set.records.push_back({s.id, predict(model, lib, make_model_inputs(s, cfg))});

  const std::string path = temp_path("scenepose_preds.json");
  save_predictions(set, path);
  const PredictionSet loaded = load_predictions(path);
  REQUIRE(loaded.records.size() == 3);
  CHECK(loaded.method == "dumped");
  for (size_t i = 0; i < set.records.size(); ++i) {
    CHECK(loaded.records[i].id == set.records[i].id);
    CHECK(loaded.records[i].pred.scores == set.records[i].pred.scores);
    for (int kp = 0; kp < kNumKeypoints; ++kp) {
      CHECK(loaded.records[i].pred.poses[0][kp].x == set.records[i].pred.poses[0][kp].x);
      CHECK(loaded.records[i].pred.poses[0][kp].y == set.records[i].pred.poses[0][kp].y);
    }
  }

  const EvalReport direct = evaluate(data.samples, model, lib, {1, 3}, 1.0, "dumped");
  const EvalReport scored = score_predictions(loaded, data.samples, {1, 3});
  CHECK(scored.method == "dumped");
  CHECK(scored.pck == direct.pck);
  CHECK(scored.mse == direct.mse);

  PredictionSet orphan = loaded;
  orphan.records[0].id = "missing";
  CHECK_THROWS_AS(score_predictions(orphan, data.samples, {1}), std::runtime_error);

  std::ofstream(path) << "{\"format\": \"other\"}";
  CHECK_THROWS_AS(load_predictions(path), std::runtime_error);
  std::remove(path.c_str());
}
