#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "scenepose/eval.hpp"
#include "scenepose/losses.hpp"
#include "scenepose/model.hpp"
#include "scenepose/scene_prep.hpp"
#include "scenepose/templates.hpp"

namespace scenepose {

// ---------------------------------------------------------------------------
// Optimizer configuration
// ---------------------------------------------------------------------------

struct OptimConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double backbone_lr_mult = 0.1;
  int batch_size = 8;
  int epochs_per_stage = 1;
  int max_stages = 5;
  double mining_threshold = 0.7;
  int patience = 2;
  double holdout_fraction = 0.1;
  double weight_cap = 100.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("optim: learning_rate must be > 0");
    if (weight_decay < 0.0) throw std::invalid_argument("optim: weight_decay must be >= 0");
    if (backbone_lr_mult < 0.0) throw std::invalid_argument("optim: backbone_lr_mult must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("optim: batch_size must be >= 1");
    if (epochs_per_stage < 1) throw std::invalid_argument("optim: epochs_per_stage must be >= 1");
    if (max_stages < 1) throw std::invalid_argument("optim: max_stages must be >= 1");
    if (mining_threshold <= 0.0 || mining_threshold >= 1.0)
      throw std::invalid_argument("optim: mining_threshold must be in (0,1)");
    if (patience < 1) throw std::invalid_argument("optim: patience must be >= 1");
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
      throw std::invalid_argument("optim: holdout_fraction must be in [0,1)");
    if (weight_cap < 1.0) throw std::invalid_argument("optim: weight_cap must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"backbone_lr_mult", c.backbone_lr_mult},
                     {"batch_size", c.batch_size},
                     {"epochs_per_stage", c.epochs_per_stage},
                     {"max_stages", c.max_stages},
                     {"mining_threshold", c.mining_threshold},
                     {"patience", c.patience},
                     {"holdout_fraction", c.holdout_fraction},
                     {"weight_cap", c.weight_cap},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, OptimConfig& c) {
  OptimConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.backbone_lr_mult = j.value("backbone_lr_mult", d.backbone_lr_mult);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs_per_stage = j.value("epochs_per_stage", d.epochs_per_stage);
  c.max_stages = j.value("max_stages", d.max_stages);
  c.mining_threshold = j.value("mining_threshold", d.mining_threshold);
  c.patience = j.value("patience", d.patience);
  c.holdout_fraction = j.value("holdout_fraction", d.holdout_fraction);
  c.weight_cap = j.value("weight_cap", d.weight_cap);
  c.seed = j.value("seed", d.seed);
}

/// Plain SGD with decoupled weight decay folded into the gradient:
/// p -= lr * lr_mult * (g + wd * p). No momentum.
inline void sgd_step(ParamStore& params, double lr, double weight_decay) {
  for (ParamEntry& e : params.entries()) {
    e.var->ensure_grad();  // params outside the current graph decay with zero gradient
    Tensor& p = e.var->value;
    const Tensor& g = e.var->grad;
    const double step = lr * e.lr_mult;
    for (std::size_t i = 0; i < p.data.size(); ++i)
      p.data[i] -= step * (g.data[i] + weight_decay * p.data[i]);
  }
}

/// Rewrites the learning-rate multiplier of every parameter whose name
/// starts with `prefix` (e.g. "backbone.").
inline void set_lr_multiplier(ParamStore& params, const std::string& prefix, double mult) {
  for (ParamEntry& e : params.entries())
    if (e.name.rfind(prefix, 0) == 0) e.lr_mult = mult;
}

/// Deterministic train/holdout split: indices are shuffled by the seed and
/// the first ceil(fraction * n) go to the holdout.
struct SplitIndices {
  std::vector<int> train;
  std::vector<int> holdout;
};

namespace detail {

constexpr std::uint64_t kSplitStream = 0x5917A0;
constexpr std::uint64_t kEpochStreamBase = 0xE70C0000;

inline void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i)
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.uniform_int(i + 1))]);
}

}  // namespace detail

inline SplitIndices split_dataset(int n, double holdout_fraction, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("split_dataset: empty dataset");
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = Rng::for_stream(seed, detail::kSplitStream);
  detail::shuffle_indices(idx, rng);
  const int held = std::min(n - 1, static_cast<int>(std::ceil(holdout_fraction * n)));
  SplitIndices out;
  out.holdout.assign(idx.begin(), idx.begin() + held);
  out.train.assign(idx.begin() + held, idx.end());
  return out;
}

// ---------------------------------------------------------------------------
// Self-training label state
// ---------------------------------------------------------------------------

/// Per-sample binary template labels across self-training stages. The
/// ground-truth index is always positive and mined positives never revert.
struct LabelState {
  int num_templates = 0;
  int stage = 0;
  std::vector<int> gt_index;
  std::vector<std::vector<std::uint8_t>> labels;
  std::vector<std::vector<std::vector<std::uint8_t>>> history;  // snapshot per stage

  static LabelState init(const std::vector<int>& gt_index, int num_templates) {
    if (num_templates < 1) throw std::invalid_argument("labels: need at least one template");
    LabelState st;
    st.num_templates = num_templates;
    st.gt_index = gt_index;
    st.labels.reserve(gt_index.size());
    for (int gt : gt_index) {
      if (gt < 0 || gt >= num_templates)
        throw std::invalid_argument("labels: gt index out of range");
      std::vector<std::uint8_t> row(static_cast<size_t>(num_templates), 0);
      row[static_cast<size_t>(gt)] = 1;
      st.labels.push_back(std::move(row));
    }
    st.history.push_back(st.labels);
    return st;
  }

  int size() const { return static_cast<int>(gt_index.size()); }

  void validate() const {
    if (labels.size() != gt_index.size()) throw std::logic_error("labels: size mismatch");
    for (size_t s = 0; s < labels.size(); ++s) {
      if (static_cast<int>(labels[s].size()) != num_templates)
        throw std::logic_error("labels: row width mismatch");
      if (labels[s][static_cast<size_t>(gt_index[s])] != 1)
        throw std::logic_error("labels: gt template not positive");
    }
    for (size_t t = 1; t < history.size(); ++t)
      for (size_t s = 0; s < history[t].size(); ++s)
        for (size_t i = 0; i < history[t][s].size(); ++i)
          if (history[t][s][i] < history[t - 1][s][i])
            throw std::logic_error("labels: positive label reverted between stages");
  }
};

/// Flip templates whose score exceeds the threshold to positive. Returns the
/// number of labels that changed; the stage counter advances either way.
inline int apply_mined_scores(LabelState& st, const std::vector<std::vector<double>>& scores,
                              double threshold = 0.7) {
  if (scores.size() != st.labels.size())
    throw std::invalid_argument("apply_mined_scores: score rows != samples");
  int changed = 0;
  for (size_t s = 0; s < scores.size(); ++s) {
    if (static_cast<int>(scores[s].size()) != st.num_templates)
      throw std::invalid_argument("apply_mined_scores: score row width != templates");
    for (int i = 0; i < st.num_templates; ++i) {
      auto& cell = st.labels[s][static_cast<size_t>(i)];
      if (!cell && scores[s][static_cast<size_t>(i)] > threshold) {
        cell = 1;
        ++changed;
      }
    }
  }
  ++st.stage;
  st.history.push_back(st.labels);
  return changed;
}

/// Score every sample with the current model and mine positives from the
/// compatibility head. Calling it twice with a frozen model is a no-op the
/// second time.
inline int self_training_update(const PoseGenerator& model, const std::vector<SceneSample>& data,
                                LabelState& st, double threshold = 0.7) {
  std::vector<std::vector<double>> scores;
  scores.reserve(data.size());
  for (const SceneSample& s : data) {
    const ForwardOutputs out = model.forward(make_model_inputs(s, model.config()));
    std::vector<double> row(static_cast<size_t>(st.num_templates));
    for (int i = 0; i < st.num_templates; ++i) row[static_cast<size_t>(i)] = out.cls->value(0, i);
    scores.push_back(std::move(row));
  }
  return apply_mined_scores(st, scores, threshold);
}

/// Positive-class weight per template: negatives over positives among the
/// given samples, capped. Templates with no positives get the cap.
inline std::vector<double> class_weights(const LabelState& st, const std::vector<int>& samples,
                                         double cap = 100.0) {
  if (samples.empty()) throw std::invalid_argument("class_weights: no samples");
  std::vector<double> w(static_cast<size_t>(st.num_templates), 1.0);
  for (int i = 0; i < st.num_templates; ++i) {
    int pos = 0;
    for (int s : samples) pos += st.labels[static_cast<size_t>(s)][static_cast<size_t>(i)];
    const int neg = static_cast<int>(samples.size()) - pos;
    w[static_cast<size_t>(i)] =
        pos == 0 ? cap : std::min(cap, static_cast<double>(neg) / static_cast<double>(pos));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Classification accuracy (stage-control metric)
// ---------------------------------------------------------------------------

inline double classification_accuracy(const PoseGenerator& model,
                                      const std::vector<SceneSample>& data,
                                      const std::vector<int>& indices,
                                      const std::vector<int>& gt_index) {
  if (indices.empty()) throw std::invalid_argument("classification_accuracy: no samples");
  int hits = 0;
  for (int s : indices) {
    const ForwardOutputs out =
        model.forward(make_model_inputs(data[static_cast<size_t>(s)], model.config()));
    int best = 0;
    for (int i = 1; i < model.config().templates; ++i)
      if (out.cls->value(0, i) > out.cls->value(0, best)) best = i;
    if (best == gt_index[static_cast<size_t>(s)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(indices.size());
}

// ---------------------------------------------------------------------------
// Teacher pretraining
// ---------------------------------------------------------------------------

struct PretrainResult {
  std::vector<double> epoch_losses;  // mean training loss per epoch
  double val_before = 0.0;
  double val_after = 0.0;
  int steps = 0;
};

/// Train the teacher to reconstruct ground-truth offsets from the target
/// view plus heatmaps of the ground-truth template at ground-truth scale.
inline PretrainResult pretrain_teacher(TeacherNet& teacher, const std::vector<SceneSample>& data,
                                       const TemplateLibrary& lib, const OptimConfig& cfg,
                                       std::ostream* log = nullptr) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("pretrain_teacher: empty dataset");
  if (lib.size() < 1) throw std::invalid_argument("pretrain_teacher: empty library");

  struct Item {
    GroundTruthLabel gt;
    Pose gt_crop;
  };
  std::vector<Item> items;
  items.reserve(data.size());
  for (const SceneSample& s : data)
    items.push_back({make_labels(s, lib), pose_to_crop_frame(s.gt_pose, s)});

  const SplitIndices split = split_dataset(static_cast<int>(data.size()), cfg.holdout_fraction,
                                           cfg.seed);

  auto offsets_for = [&](int s) {
    const Item& it = items[static_cast<size_t>(s)];
    const ModelInputs in = make_model_inputs(data[static_cast<size_t>(s)], teacher.config());
    const Pose& tmpl = lib.templates[static_cast<size_t>(it.gt.class_index)];
    const Tensor input = teacher.make_input(in, tmpl, it.gt.scale);
    return teacher.offsets_from(teacher.embed(input));
  };
  auto val_loss = [&]() {
    const std::vector<int>& idx = split.holdout.empty() ? split.train : split.holdout;
    double acc = 0.0;
    for (int s : idx) {
      const Item& it = items[static_cast<size_t>(s)];
      const Var off = offsets_for(s);
      Offsets d;
      for (int j = 0; j < kPoseDim; ++j) d.values[static_cast<size_t>(j)] = off->value.data[j];
      acc += loss_offset(d, lib.templates[static_cast<size_t>(it.gt.class_index)], it.gt_crop);
    }
    return acc / static_cast<double>(idx.size());
  };

  PretrainResult result;
  result.val_before = val_loss();

  std::vector<int> order = split.train;
  for (int epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
    Rng rng = Rng::for_stream(cfg.seed, detail::kEpochStreamBase + static_cast<std::uint64_t>(epoch));
    detail::shuffle_indices(order, rng);
    double epoch_acc = 0.0;
    int epoch_n = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const double inv = 1.0 / static_cast<double>(stop - start);
      teacher.params().zero_grads();
      for (size_t bi = start; bi < stop; ++bi) {
        const int s = order[bi];
        const Item& it = items[static_cast<size_t>(s)];
        const Var off = offsets_for(s);
        const Var loss = loss_offset_graph(off, lib.templates[static_cast<size_t>(it.gt.class_index)],
                                           it.gt_crop);
        const double v = loss->value.data[0];
        if (!std::isfinite(v))
          throw std::runtime_error("pretrain_teacher: loss diverged at step " +
                                   std::to_string(result.steps));
        epoch_acc += v;
        ++epoch_n;
        backward(affine(loss, inv, 0.0));
      }
      sgd_step(teacher.params(), cfg.learning_rate, cfg.weight_decay);
      ++result.steps;
    }
    result.epoch_losses.push_back(epoch_acc / std::max(1, epoch_n));
    if (log)
      (*log) << "teacher epoch " << epoch << " loss " << result.epoch_losses.back() << "\n";
  }
  result.val_after = val_loss();
  return result;
}

// ---------------------------------------------------------------------------
// Full training loop
// ---------------------------------------------------------------------------

struct TrainMetricsRow {
  int step = 0;
  int stage = 0;
  int epoch = 0;
  double loss_total = 0.0;
  double loss_cls = 0.0;
  double loss_offset = 0.0;
  double loss_scale = 0.0;
  double loss_adv = 0.0;
  double loss_dis = 0.0;
  double loss_disc = 0.0;
  double accuracy = -1.0;  // most recent holdout accuracy, -1 before the first eval
};

inline std::string metrics_csv_header() {
  return "step,stage,epoch,loss_total,loss_cls,loss_offset,loss_scale,loss_adv,loss_dis,"
         "loss_disc,accuracy";
}

inline std::string metrics_csv_row(const TrainMetricsRow& r) {
  std::ostringstream out;
  out.precision(10);
  out << r.step << ',' << r.stage << ',' << r.epoch << ',' << r.loss_total << ',' << r.loss_cls
      << ',' << r.loss_offset << ',' << r.loss_scale << ',' << r.loss_adv << ',' << r.loss_dis
      << ',' << r.loss_disc << ',' << r.accuracy;
  return out.str();
}

struct EvalPoint {
  int stage = 0;
  int epoch = 0;  // global epoch index
  double accuracy = 0.0;
};

struct TrainResult {
  LabelState labels;
  std::vector<TrainMetricsRow> metrics;
  std::vector<EvalPoint> evals;
  double final_accuracy = 0.0;
  int total_steps = 0;
  int total_epochs = 0;
  int stages_run = 0;
  bool labels_stabilized = false;
};

/// Alternating generator/discriminator optimization with multi-stage label
/// mining. Stage flow: train up to epochs_per_stage (ending early when the
/// holdout accuracy sits below its stage best for `patience` consecutive
/// epoch-end checks), then mine positives; training stops when mining
/// changes nothing or max_stages is exhausted.
class Trainer {
 public:
  Trainer(PoseGenerator& model, Discriminator& disc, const TemplateLibrary& lib,
          OptimConfig optim, LossWeights weights, const TeacherNet* teacher = nullptr)
      : model_(model), disc_(disc), lib_(lib), optim_(optim), weights_(weights),
        teacher_(teacher) {
    optim_.validate();
    weights_.validate();
    if (lib_.size() != model_.config().templates)
      throw std::invalid_argument("trainer: library size does not match the model");
    if (weights_.lambda_dis > 0.0 && teacher_ == nullptr)
      throw std::invalid_argument("trainer: distillation weight set but no teacher given");
    if (teacher_ && teacher_->config().embed_dim != model_.config().embed_dim)
      throw std::invalid_argument("trainer: teacher embedding dim mismatch");
  }

  TrainResult fit(const std::vector<SceneSample>& data, std::ostream* metrics_out = nullptr) {
    if (data.empty()) throw std::invalid_argument("trainer: empty dataset");
    const int n = static_cast<int>(data.size());
    const int k = lib_.size();

    // immutable per-sample supervision
    struct Item {
      GroundTruthLabel gt;
      Pose gt_crop;
      Tensor teacher_v;  // {1, d} distillation target, empty when unused
    };
    std::vector<Item> items;
    items.reserve(data.size());
    for (const SceneSample& s : data) {
      Item it;
      it.gt = make_labels(s, lib_);
      it.gt_crop = pose_to_crop_frame(s.gt_pose, s);
      if (teacher_ && weights_.lambda_dis > 0.0) {
        const ModelInputs in = make_model_inputs(s, teacher_->config());
        const Tensor input =
            teacher_->make_input(in, lib_.templates[static_cast<size_t>(it.gt.class_index)],
                                 it.gt.scale);
        it.teacher_v = teacher_->embed(input)->value;
      }
      items.push_back(std::move(it));
    }

    // flattened template rows for candidate construction
    std::vector<Tensor> tmpl_rows;
    for (const Pose& t : lib_.templates) {
      Tensor row = Tensor::zeros({1, kPoseDim});
      for (int i = 0; i < kNumKeypoints; ++i) {
        row(0, 2 * i) = t[i].x;
        row(0, 2 * i + 1) = t[i].y;
      }
      tmpl_rows.push_back(std::move(row));
    }

    std::vector<int> gt_index(static_cast<size_t>(n));
    for (int s = 0; s < n; ++s) gt_index[static_cast<size_t>(s)] = items[static_cast<size_t>(s)].gt.class_index;

    TrainResult result;
    result.labels = LabelState::init(gt_index, k);

    const SplitIndices split = split_dataset(n, optim_.holdout_fraction, optim_.seed);
    set_lr_multiplier(model_.params(), "backbone.", optim_.backbone_lr_mult);

    if (metrics_out) (*metrics_out) << metrics_csv_header() << "\n";

    const bool use_adv = weights_.lambda_adv > 0.0;
    const bool use_dis = weights_.lambda_dis > 0.0 && teacher_ != nullptr;
    double last_acc = -1.0;
    int global_epoch = 0;

    for (int stage = 0; stage < optim_.max_stages; ++stage) {
      const std::vector<double> w = class_weights(result.labels, split.train, optim_.weight_cap);
      double best_acc = -1.0;
      int below_best = 0;

      for (int epoch = 0; epoch < optim_.epochs_per_stage; ++epoch, ++global_epoch) {
        std::vector<int> order = split.train;
        Rng rng = Rng::for_stream(optim_.seed,
                                  detail::kEpochStreamBase + static_cast<std::uint64_t>(global_epoch));
        detail::shuffle_indices(order, rng);

        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(optim_.batch_size)) {
          const size_t stop = std::min(order.size(), start + static_cast<size_t>(optim_.batch_size));
          const double inv = 1.0 / static_cast<double>(stop - start);

          // generator phase
          model_.params().zero_grads();
          disc_.params().zero_grads();
          TrainMetricsRow row;
          row.step = result.total_steps;
          row.stage = stage;
          row.epoch = global_epoch;
          row.accuracy = last_acc;
          // detached candidate rows for the D phase: per sample, gt first
          std::vector<std::vector<Tensor>> batch_candidates;

          for (size_t bi = start; bi < stop; ++bi) {
            const int s = order[bi];
            const Item& it = items[static_cast<size_t>(s)];
            const auto& l = result.labels.labels[static_cast<size_t>(s)];
            const int gi = it.gt.class_index;

            const ForwardOutputs out =
                model_.forward(make_model_inputs(data[static_cast<size_t>(s)], model_.config()));

            const Var cls = loss_cls_graph(out.cls, l, w);
            const Var off = loss_offset_graph(row_slice(out.offsets, gi, gi + 1),
                                              lib_.templates[static_cast<size_t>(gi)], it.gt_crop);
            const Var sc = loss_scale_graph(row_slice(out.scales, gi, gi + 1), it.gt.scale);

            Var dis;
            if (use_dis)
              dis = loss_dis_graph(row_slice(out.offset_emb, gi, gi + 1), it.teacher_v);

            Var gen_adv;
            if (use_adv) {
              auto candidate = [&](int i) {
                const Var npose =
                    normalize_pose_row(add_const(row_slice(out.offsets, i, i + 1),
                                                 tmpl_rows[static_cast<size_t>(i)]));
                return concat_cols({npose, row_slice(out.scales, i, i + 1), out.global_vec});
              };
              const Var q_gt = candidate(gi);
              std::vector<Var> q_more;
              for (int i = 0; i < k; ++i)
                if (i != gi && l[static_cast<size_t>(i)]) q_more.push_back(candidate(i));
              Var d_others;
              if (!q_more.empty()) {
                std::vector<Var> d_rows;
                for (const Var& q : q_more) d_rows.push_back(disc_.forward(q));
                d_others = reshape(concat_cols(d_rows),
                                   {static_cast<int>(d_rows.size()), 1});
              }
              AdvGraphTerms terms = loss_adv_graph(disc_.forward(q_gt), d_others);
              gen_adv = terms.generator;

              std::vector<Tensor> qs;
              qs.push_back(q_gt->value);
              for (const Var& q : q_more) qs.push_back(q->value);
              batch_candidates.push_back(std::move(qs));
            }

            const Var total = total_loss_graph(cls, off, sc, gen_adv, dis, weights_);
            const double tv = total->value.data[0];
            if (!std::isfinite(tv))
              throw std::runtime_error("trainer: loss diverged at step " +
                                       std::to_string(result.total_steps));
            row.loss_total += inv * tv;
            row.loss_cls += inv * cls->value.data[0];
            row.loss_offset += inv * off->value.data[0];
            row.loss_scale += inv * sc->value.data[0];
            if (gen_adv) row.loss_adv += inv * gen_adv->value.data[0];
            if (dis) row.loss_dis += inv * dis->value.data[0];
            backward(affine(total, inv, 0.0));
          }
          sgd_step(model_.params(), optim_.learning_rate, optim_.weight_decay);

          // discriminator phase on the same candidates, detached from the
          // generator (pre-update outputs, standard alternation)
          if (use_adv) {
            disc_.params().zero_grads();
            const double dinv = 1.0 / static_cast<double>(batch_candidates.size());
            for (const std::vector<Tensor>& qs : batch_candidates) {
              Var d_others;
              if (qs.size() > 1) {
                Tensor others = Tensor::zeros({static_cast<int>(qs.size()) - 1, qs[0].shape[1]});
                for (size_t r = 1; r < qs.size(); ++r)
                  std::copy(qs[r].data.begin(), qs[r].data.end(),
                            others.data.begin() +
                                static_cast<std::ptrdiff_t>((r - 1) * qs[r].data.size()));
                d_others = disc_.forward(constant(others));
              }
              AdvGraphTerms terms = loss_adv_graph(disc_.forward(constant(qs[0])), d_others);
              row.loss_disc += dinv * terms.discriminator->value.data[0];
              backward(affine(terms.discriminator, dinv, 0.0));
            }
            if (!std::isfinite(row.loss_disc))
              throw std::runtime_error("trainer: discriminator loss diverged at step " +
                                       std::to_string(result.total_steps));
            sgd_step(disc_.params(), optim_.learning_rate, optim_.weight_decay);
          }

          if (metrics_out) (*metrics_out) << metrics_csv_row(row) << "\n";
          result.metrics.push_back(row);
          ++result.total_steps;
        }

        // epoch end: holdout accuracy drives the stage switch
        const std::vector<int>& eval_idx = split.holdout.empty() ? split.train : split.holdout;
        last_acc = classification_accuracy(model_, data, eval_idx, gt_index);
        result.evals.push_back({stage, global_epoch, last_acc});
        ++result.total_epochs;
        if (last_acc < best_acc) {
          if (++below_best >= optim_.patience) {
            ++global_epoch;
            break;
          }
        } else {
          below_best = 0;
          best_acc = last_acc;
        }
      }

      ++result.stages_run;
      if (stage + 1 >= optim_.max_stages) break;
      const int changed =
          self_training_update(model_, data, result.labels, optim_.mining_threshold);
      if (changed == 0) {
        result.labels_stabilized = true;
        break;
      }
    }

    result.final_accuracy = last_acc;
    result.labels.validate();
    return result;
  }

 private:
  PoseGenerator& model_;
  Discriminator& disc_;
  const TemplateLibrary& lib_;
  OptimConfig optim_;
  LossWeights weights_;
  const TeacherNet* teacher_;
};

// ---------------------------------------------------------------------------
// Baseline training
// ---------------------------------------------------------------------------

struct BaselineResult {
  std::vector<double> epoch_losses;
  int steps = 0;
};

/// Mean squared error on raw crop-frame coordinates.
inline BaselineResult train_regression(RegressionBaseline& model,
                                       const std::vector<SceneSample>& data,
                                       const OptimConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_regression: empty dataset");
  std::vector<Tensor> targets;
  targets.reserve(data.size());
  for (const SceneSample& s : data) {
    const Pose crop = pose_to_crop_frame(s.gt_pose, s);
    Tensor row = Tensor::zeros({1, kPoseDim});
    for (int i = 0; i < kNumKeypoints; ++i) {
      row(0, 2 * i) = crop[i].x;
      row(0, 2 * i + 1) = crop[i].y;
    }
    targets.push_back(std::move(row));
  }

  BaselineResult result;
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
    Rng rng = Rng::for_stream(cfg.seed, detail::kEpochStreamBase + static_cast<std::uint64_t>(epoch));
    detail::shuffle_indices(order, rng);
    double acc = 0.0;
    int count = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const double inv = 1.0 / static_cast<double>(stop - start);
      model.params().zero_grads();
      for (size_t bi = start; bi < stop; ++bi) {
        const int s = order[bi];
        const Var pred = model.forward(make_model_inputs(data[static_cast<size_t>(s)], model.config()));
        const Var diff = sub(pred, constant(targets[static_cast<size_t>(s)]));
        const Var loss = affine(sum(mul(diff, diff)), 1.0 / kPoseDim, 0.0);
        const double v = loss->value.data[0];
        if (!std::isfinite(v))
          throw std::runtime_error("train_regression: loss diverged at step " +
                                   std::to_string(result.steps));
        acc += v;
        ++count;
        backward(affine(loss, inv, 0.0));
      }
      sgd_step(model.params(), cfg.learning_rate, cfg.weight_decay);
      ++result.steps;
    }
    result.epoch_losses.push_back(acc / std::max(1, count));
    if (log) (*log) << "regression epoch " << epoch << " loss " << result.epoch_losses.back() << "\n";
  }
  return result;
}

/// Mean squared error against rasterized ground-truth keypoint maps.
inline BaselineResult train_heatmap(HeatmapBaseline& model, const std::vector<SceneSample>& data,
                                    const OptimConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_heatmap: empty dataset");
  const int hs = model.config().heat_size();
  std::vector<Tensor> targets;
  targets.reserve(data.size());
  for (const SceneSample& s : data)
    targets.push_back(rasterize_keypoints(pose_to_crop_frame(s.gt_pose, s), hs,
                                          model.config().heat_sigma));

  BaselineResult result;
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const double inv_numel = 1.0 / static_cast<double>(kNumKeypoints * hs * hs);
  for (int epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
    Rng rng = Rng::for_stream(cfg.seed, detail::kEpochStreamBase + static_cast<std::uint64_t>(epoch));
    detail::shuffle_indices(order, rng);
    double acc = 0.0;
    int count = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const double inv = 1.0 / static_cast<double>(stop - start);
      model.params().zero_grads();
      for (size_t bi = start; bi < stop; ++bi) {
        const int s = order[bi];
        const Var pred = model.forward(make_model_inputs(data[static_cast<size_t>(s)], model.config()));
        const Var diff = sub(pred, constant(targets[static_cast<size_t>(s)]));
        const Var loss = affine(sum(mul(diff, diff)), inv_numel, 0.0);
        const double v = loss->value.data[0];
        if (!std::isfinite(v))
          throw std::runtime_error("train_heatmap: loss diverged at step " +
                                   std::to_string(result.steps));
        acc += v;
        ++count;
        backward(affine(loss, inv, 0.0));
      }
      sgd_step(model.params(), cfg.learning_rate, cfg.weight_decay);
      ++result.steps;
    }
    result.epoch_losses.push_back(acc / std::max(1, count));
    if (log) (*log) << "heatmap epoch " << epoch << " loss " << result.epoch_losses.back() << "\n";
  }
  return result;
}

/// Single-candidate predictions so baselines run through the same scorer.
inline Prediction predict_regression(const RegressionBaseline& model, const ModelInputs& in) {
  const Var out = model.forward(in);
  Prediction p;
  p.scores = {1.0};
  Pose pose;
  for (int i = 0; i < kNumKeypoints; ++i)
    pose[i] = {out->value(0, 2 * i), out->value(0, 2 * i + 1)};
  p.poses = {pose};
  return p;
}

inline Prediction predict_heatmap(const HeatmapBaseline& model, const ModelInputs& in) {
  const Var out = model.forward(in);
  Prediction p;
  p.scores = {1.0};
  p.poses = {decode_heatmaps(out->value)};
  return p;
}

}  // namespace scenepose
