#pragma once

// The pose generation model. A shared CNN encodes three views of the scene
// into one fused feature map; a transformer decoder with one query per pose
// template predicts per-template scales; a second decoder refines each
// template with features pooled from its own scale-conditioned region and
// predicts keypoint offsets. Teacher, discriminator and the two baseline
// predictors live here too.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "scenepose/autodiff.hpp"
#include "scenepose/layers.hpp"
#include "scenepose/pose.hpp"
#include "scenepose/rng.hpp"
#include "scenepose/scene_prep.hpp"
#include "scenepose/tensor.hpp"

namespace scenepose {

struct ModelConfig {
  std::string backbone = "small";  // "small" or "residual"
  int crop_size = 224;             // all three views are resampled to this square
  int out_stride = 8;              // feature map resolution = crop_size / out_stride
  int feat_channels = 128;         // fused map channels
  int embed_dim = 128;             // transformer width
  int heads = 4;
  int ffn_dim = 256;
  int scale_layers = 3;
  int offset_layers = 1;
  int head_hidden = 256;           // hidden width of the MLP heads
  int disc_hidden = 256;
  int roi_size = 7;                // per-template pooled grid
  int templates = 14;              // decoder queries, must match the library
  int heat_upsamples = 1;          // heatmap output = map_size * 2^this
  double heat_sigma = 2.0;         // gaussian stddev in pixels at crop_size 224
  std::uint64_t init_seed = 1234;

  int map_size() const { return crop_size / out_stride; }
  int heat_size() const { return map_size() << heat_upsamples; }

  void validate() const {
    if (backbone != "small" && backbone != "residual")
      throw std::invalid_argument("config: unknown backbone " + backbone);
    if (crop_size < 32 || crop_size % 16 != 0)
      throw std::invalid_argument("config: crop_size must be a multiple of 16, at least 32");
    if (out_stride != 4 && out_stride != 8 && out_stride != 16)
      throw std::invalid_argument("config: out_stride must be 4, 8 or 16");
    if (embed_dim % 4 != 0 || embed_dim % heads != 0)
      throw std::invalid_argument("config: embed_dim must divide by 4 and by heads");
    if (templates < 1) throw std::invalid_argument("config: need at least one template");
    if (scale_layers < 1 || offset_layers < 1)
      throw std::invalid_argument("config: need at least one decoder layer per stage");
    if (roi_size < 1 || heat_upsamples < 0 || heat_upsamples > 3)
      throw std::invalid_argument("config: bad pooling sizes");
    if (feat_channels < 4 || head_hidden < 4 || disc_hidden < 4 || ffn_dim < 4)
      throw std::invalid_argument("config: widths too small");
    if (heat_sigma <= 0.0) throw std::invalid_argument("config: heat_sigma must be positive");
  }

  /// Small profile sized for CPU-only runs.
  static ModelConfig desk() {
    ModelConfig c;
    c.crop_size = 48;
    c.out_stride = 4;  // 12x12 map
    c.feat_channels = 48;
    c.embed_dim = 48;
    c.heads = 4;
    c.ffn_dim = 96;
    c.head_hidden = 64;
    c.disc_hidden = 64;
    c.roi_size = 4;
    c.templates = 4;
    c.heat_upsamples = 1;   // 24x24 heatmaps
    c.heat_sigma = 8.0;     // keeps gaussians about a pixel wide at small sizes
    return c;
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"backbone", c.backbone},
                     {"crop_size", c.crop_size},
                     {"out_stride", c.out_stride},
                     {"feat_channels", c.feat_channels},
                     {"embed_dim", c.embed_dim},
                     {"heads", c.heads},
                     {"ffn_dim", c.ffn_dim},
                     {"scale_layers", c.scale_layers},
                     {"offset_layers", c.offset_layers},
                     {"head_hidden", c.head_hidden},
                     {"disc_hidden", c.disc_hidden},
                     {"roi_size", c.roi_size},
                     {"templates", c.templates},
                     {"heat_upsamples", c.heat_upsamples},
                     {"heat_sigma", c.heat_sigma},
                     {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("backbone").get_to(c.backbone);
  j.at("crop_size").get_to(c.crop_size);
  j.at("out_stride").get_to(c.out_stride);
  j.at("feat_channels").get_to(c.feat_channels);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("heads").get_to(c.heads);
  j.at("ffn_dim").get_to(c.ffn_dim);
  j.at("scale_layers").get_to(c.scale_layers);
  j.at("offset_layers").get_to(c.offset_layers);
  j.at("head_hidden").get_to(c.head_hidden);
  j.at("disc_hidden").get_to(c.disc_hidden);
  j.at("roi_size").get_to(c.roi_size);
  j.at("templates").get_to(c.templates);
  j.at("heat_upsamples").get_to(c.heat_upsamples);
  j.at("heat_sigma").get_to(c.heat_sigma);
  j.at("init_seed").get_to(c.init_seed);
}

// ---------------------------------------------------------------------------
// Input preparation
// ---------------------------------------------------------------------------

struct ModelInputs {
  Tensor full, target, close;  // {3, S, S} each
};

inline ModelInputs make_model_inputs(const SceneSample& s, const ModelConfig& cfg) {
  const PreparedInput p = make_crops(s, cfg.crop_size);
  return {image_to_tensor(p.full_view), image_to_tensor(p.target_view),
          image_to_tensor(p.close_view)};
}

// ---------------------------------------------------------------------------
// Backbone: shared CNN with a small top-down feature pyramid
// ---------------------------------------------------------------------------

struct ResidualBlock {
  Conv2dLayer a, b;

  ResidualBlock() = default;
  ResidualBlock(ParamStore& ps, const std::string& name, int ch, Rng& rng, double lr_mult)
      : a(ps, name + ".a", ch, ch, 3, 1, 1, rng, lr_mult),
        b(ps, name + ".b", ch, ch, 3, 1, 1, rng, lr_mult) {}

  Var forward(const Var& x) const { return relu(add(x, b.forward(relu(a.forward(x))))); }
};

struct Backbone {
  bool residual = false;
  int out_stride = 8;
  Conv2dLayer stem, down1, down2, down3;
  std::vector<ResidualBlock> blocks;
  Conv2dLayer lat4, lat8, lat16;

  Backbone() = default;
  Backbone(ParamStore& ps, const std::string& name, const ModelConfig& cfg, Rng& rng,
           double lr_mult)
      : residual(cfg.backbone == "residual"), out_stride(cfg.out_stride) {
    stem = Conv2dLayer(ps, name + ".stem", 3, 16, 3, 2, 1, rng, lr_mult);
    down1 = Conv2dLayer(ps, name + ".down1", 16, 32, 3, 2, 1, rng, lr_mult);
    down2 = Conv2dLayer(ps, name + ".down2", 32, 64, 3, 2, 1, rng, lr_mult);
    down3 = Conv2dLayer(ps, name + ".down3", 64, 128, 3, 2, 1, rng, lr_mult);
    if (residual) {
      blocks.emplace_back(ps, name + ".res4", 32, rng, lr_mult);
      blocks.emplace_back(ps, name + ".res8", 64, rng, lr_mult);
      blocks.emplace_back(ps, name + ".res16", 128, rng, lr_mult);
    }
    const int c = cfg.feat_channels;
    lat16 = Conv2dLayer(ps, name + ".lat16", 128, c, 1, 1, 0, rng, lr_mult);
    if (out_stride <= 8) lat8 = Conv2dLayer(ps, name + ".lat8", 64, c, 1, 1, 0, rng, lr_mult);
    if (out_stride <= 4) lat4 = Conv2dLayer(ps, name + ".lat4", 32, c, 1, 1, 0, rng, lr_mult);
  }

  /// {3,S,S} -> {feat_channels, S/out_stride, S/out_stride}
  Var forward(const Var& img) const {
    Var c2 = relu(stem.forward(img));
    Var c4 = relu(down1.forward(c2));
    if (residual) c4 = blocks[0].forward(c4);
    Var c8 = relu(down2.forward(c4));
    if (residual) c8 = blocks[1].forward(c8);
    Var c16 = relu(down3.forward(c8));
    if (residual) c16 = blocks[2].forward(c16);
    Var p = lat16.forward(c16);
    if (out_stride == 16) return p;
    p = add(lat8.forward(c8), upsample2x(p));
    if (out_stride == 8) return p;
    return add(lat4.forward(c4), upsample2x(p));
  }
};

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

struct ForwardOutputs {
  Var feat_map;    // {C, Hf, Wf} fused map
  Var global_vec;  // {1, C}
  Var cls;         // {1, K} template scores in (0,1)
  Var scale_emb;   // {K, d}
  Var scales;      // {K, 2} in [0, 2]
  Var offset_emb;  // {K, d}
  Var offsets;     // {K, 2M} in [-0.5, 0.5]
};

class PoseGenerator {
 public:
  explicit PoseGenerator(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng = Rng::for_stream(cfg.init_seed, 0);
    const int c = cfg.feat_channels, d = cfg.embed_dim;
    backbone_ = Backbone(params_, "backbone", cfg, rng, kBackboneLrMult);
    fuse_ = Conv2dLayer(params_, "fuse", 3 * c, c, 1, 1, 0, rng, 1.0);
    cls_head_ = Linear(params_, "cls", c, cfg.templates, rng);
    queries_ = params_.add("queries", init::normal(rng, {cfg.templates, d}, 0.02));
    mem_proj_scale_ = Linear(params_, "mem_scale", c, d, rng);
    mem_proj_offset_ = Linear(params_, "mem_offset", c, d, rng);
    for (int l = 0; l < cfg.scale_layers; ++l)
      scale_dec_.emplace_back(params_, "scale_dec" + std::to_string(l), d, cfg.heads,
                              cfg.ffn_dim, true, rng, 1.0);
    for (int l = 0; l < cfg.offset_layers; ++l)
      offset_dec_.emplace_back(params_, "offset_dec" + std::to_string(l), d, cfg.heads,
                               cfg.ffn_dim, false, rng, 1.0);
    scale_head_ = MLPHead(params_, "scale_head", d, cfg.head_hidden, 2, rng);
    offset_head_ = MLPHead(params_, "offset_head", d, cfg.head_hidden, kPoseDim, rng);
    pe_map_ = positional_encoding_2d(cfg.map_size(), cfg.map_size(), d);
    pe_roi_ = positional_encoding_2d(cfg.roi_size, cfg.roi_size, d);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  ForwardOutputs forward(const ModelInputs& in) const {
    ForwardOutputs out;
    Var f1 = backbone_.forward(constant(in.full));
    Var f2 = backbone_.forward(constant(in.target));
    Var f3 = backbone_.forward(constant(in.close));
    out.feat_map = fuse_.forward(concat_chw({f1, f2, f3}));
    out.global_vec = gap(out.feat_map);
    out.cls = vsigmoid(cls_head_.forward(out.global_vec));

    Var mem = mem_proj_scale_.forward(chw_to_rows(out.feat_map));
    Var pe = constant(pe_map_);
    Var x = queries_;
    for (const auto& layer : scale_dec_) x = layer.forward(x, mem, pe);
    out.scale_emb = x;
    out.scales = affine(vsigmoid(scale_head_.forward(x)), 2.0, 0.0);

    // Each template attends only to features pooled from the region its own
    // predicted scale selects, so refinements stay independent per template.
    const double half_w = cfg_.map_size() / 2.0;
    Var pe_roi = constant(pe_roi_);
    std::vector<Var> rows;
    rows.reserve(static_cast<size_t>(cfg_.templates));
    for (int i = 0; i < cfg_.templates; ++i) {
      Var s_row = row_slice(out.scales, i, i + 1);
      Var sx = col_slice(s_row, 0, 1);
      Var sy = col_slice(s_row, 1, 2);
      Var box = concat_cols({affine(sx, -half_w, half_w), affine(sy, -half_w, half_w),
                             affine(sx, half_w, half_w), affine(sy, half_w, half_w)});
      Var roi = roi_align(out.feat_map, box, cfg_.roi_size, cfg_.roi_size);
      Var roi_mem = mem_proj_offset_.forward(chw_to_rows(roi));
      Var q = row_slice(out.scale_emb, i, i + 1);
      for (const auto& layer : offset_dec_) q = layer.forward(q, roi_mem, pe_roi);
      rows.push_back(q);
    }
    out.offset_emb = rows.size() == 1 ? rows[0]
                                      : reshape(concat_cols(rows), {cfg_.templates,
                                                                    cfg_.embed_dim});
    out.offsets = affine(vtanh(offset_head_.forward(out.offset_emb)), 0.5, 0.0);
    return out;
  }

  static constexpr double kBackboneLrMult = 0.1;

 private:
  ModelConfig cfg_;
  ParamStore params_;
  Backbone backbone_;
  Conv2dLayer fuse_;
  Linear cls_head_;
  Var queries_;
  Linear mem_proj_scale_, mem_proj_offset_;
  std::vector<DecoderLayer> scale_dec_, offset_dec_;
  MLPHead scale_head_, offset_head_;
  Tensor pe_map_, pe_roi_;
};

// ---------------------------------------------------------------------------
// Keypoint heatmaps
// ---------------------------------------------------------------------------

/// Renders one gaussian channel per keypoint over a size*size grid covering
/// the crop frame square [-0.5, 0.5]^2. Amplitude 1 at the keypoint; any
/// keypoint outside the square yields an all-zero channel. Sigma is given in
/// pixels at the 224 reference resolution and scales with the render size.
inline Tensor rasterize_keypoints(const Pose& crop_pose, int size, double sigma_at_224) {
  if (size < 2) throw std::invalid_argument("heatmaps: size too small");
  const double sigma = sigma_at_224 * size / 224.0;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  Tensor out = Tensor::zeros({kNumKeypoints, size, size});
  for (int k = 0; k < kNumKeypoints; ++k) {
    const double x = crop_pose[k].x, y = crop_pose[k].y;
    if (x < -0.5 || x > 0.5 || y < -0.5 || y > 0.5) continue;
    const double px = (x + 0.5) * size;
    const double py = (0.5 - y) * size;
    for (int v = 0; v < size; ++v)
      for (int u = 0; u < size; ++u) {
        const double dx = u + 0.5 - px, dy = v + 0.5 - py;
        out(k, v, u) = std::exp(-(dx * dx + dy * dy) * inv);
      }
  }
  return out;
}

/// Keypoint heatmaps of a template placed at a given scale: the template is
/// refined with zero offsets, so the channels show where the unadjusted
/// template's keypoints land in the target crop.
inline Tensor render_heatmaps(const Pose& tmpl, const Scale& scale, int size,
                              double sigma_at_224 = 2.0) {
  return rasterize_keypoints(refine(tmpl, Offsets{}, scale), size, sigma_at_224);
}

/// Argmax decode of a {M, size, size} heatmap stack back to crop-frame
/// coordinates (ties: first scan-order cell).
inline Pose decode_heatmaps(const Tensor& maps) {
  if (maps.shape.size() != 3 || maps.shape[0] != kNumKeypoints || maps.shape[1] != maps.shape[2])
    throw std::invalid_argument("heatmaps: expected {16, size, size}");
  const int size = maps.shape[1];
  Pose out;
  for (int k = 0; k < kNumKeypoints; ++k) {
    int best_u = 0, best_v = 0;
    double best = maps(k, 0, 0);
    for (int v = 0; v < size; ++v)
      for (int u = 0; u < size; ++u)
        if (maps(k, v, u) > best) {
          best = maps(k, v, u);
          best_u = u;
          best_v = v;
        }
    out[k].x = (best_u + 0.5) / size - 0.5;
    out[k].y = 0.5 - (best_v + 0.5) / size;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Teacher: pose-conditioned embedding used for distillation
// ---------------------------------------------------------------------------

class TeacherNet {
 public:
  explicit TeacherNet(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng = Rng::for_stream(cfg.init_seed, 1);
    c1_ = Conv2dLayer(params_, "t.c1", 3 + kNumKeypoints, 16, 3, 2, 1, rng);
    c2_ = Conv2dLayer(params_, "t.c2", 16, 32, 3, 2, 1, rng);
    c3_ = Conv2dLayer(params_, "t.c3", 32, 64, 3, 2, 1, rng);
    c4_ = Conv2dLayer(params_, "t.c4", 64, 64, 3, 2, 1, rng);
    embed_ = Linear(params_, "t.embed", 64, cfg.embed_dim, rng);
    head_ = Linear(params_, "t.head", cfg.embed_dim, kPoseDim, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Stacks the target view with heatmaps of the reference template placed at
  /// the reference scale.
  Tensor make_input(const ModelInputs& in, const Pose& tmpl, const Scale& scale) const {
    const int s = cfg_.crop_size;
    const Tensor maps = render_heatmaps(tmpl, scale, s, cfg_.heat_sigma);
    Tensor stacked = Tensor::zeros({3 + kNumKeypoints, s, s});
    std::copy(in.target.data.begin(), in.target.data.end(), stacked.data.begin());
    std::copy(maps.data.begin(), maps.data.end(), stacked.data.begin() + in.target.data.size());
    return stacked;
  }

  /// {3+M,S,S} -> embedding {1,d}.
  Var embed(const Tensor& input) const {
    Var x = relu(c1_.forward(constant(input)));
    x = relu(c2_.forward(x));
    x = relu(c3_.forward(x));
    x = relu(c4_.forward(x));
    return embed_.forward(gap(x));
  }

  /// Offset reconstruction head used only while pretraining the teacher.
  Var offsets_from(const Var& embedding) const {
    return affine(vtanh(head_.forward(embedding)), 0.5, 0.0);
  }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  Conv2dLayer c1_, c2_, c3_, c4_;
  Linear embed_;
  Linear head_;
};

// ---------------------------------------------------------------------------
// Discriminator over refined pose candidates
// ---------------------------------------------------------------------------

class Discriminator {
 public:
  explicit Discriminator(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng = Rng::for_stream(cfg.init_seed, 2);
    mlp_ = MLPHead(params_, "d.mlp", kPoseDim + 2 + cfg.feat_channels, cfg.disc_hidden, 1, rng);
  }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// rows {n, 2M+2+C} -> realism scores {n,1} in (0,1).
  Var forward(const Var& rows) const { return vsigmoid(mlp_.forward(rows)); }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  MLPHead mlp_;
};

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Predicts per-keypoint heatmaps over the target crop and decodes by argmax.
class HeatmapBaseline {
 public:
  explicit HeatmapBaseline(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng = Rng::for_stream(cfg.init_seed, 3);
    const int c = cfg.feat_channels;
    backbone_ = Backbone(params_, "backbone", cfg, rng, PoseGenerator::kBackboneLrMult);
    fuse_ = Conv2dLayer(params_, "fuse", 3 * c, c, 1, 1, 0, rng);
    mix_ = Conv2dLayer(params_, "mix", c, c, 3, 1, 1, rng);
    head_ = Conv2dLayer(params_, "head", c, kNumKeypoints, 1, 1, 0, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// -> {M, heat_size, heat_size}, raw values.
  Var forward(const ModelInputs& in) const {
    Var f1 = backbone_.forward(constant(in.full));
    Var f2 = backbone_.forward(constant(in.target));
    Var f3 = backbone_.forward(constant(in.close));
    Var x = relu(mix_.forward(fuse_.forward(concat_chw({f1, f2, f3}))));
    for (int i = 0; i < cfg_.heat_upsamples; ++i) x = upsample2x(x);
    return head_.forward(x);
  }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  Backbone backbone_;
  Conv2dLayer fuse_, mix_, head_;
};

/// Predicts the 2M crop-frame coordinates directly from the fused vector.
class RegressionBaseline {
 public:
  explicit RegressionBaseline(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng = Rng::for_stream(cfg.init_seed, 4);
    const int c = cfg.feat_channels;
    backbone_ = Backbone(params_, "backbone", cfg, rng, PoseGenerator::kBackboneLrMult);
    fuse_ = Conv2dLayer(params_, "fuse", 3 * c, c, 1, 1, 0, rng);
    head_ = MLPHead(params_, "head", c, cfg.head_hidden, kPoseDim, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// -> {1, 2M} crop-frame coordinates.
  Var forward(const ModelInputs& in) const {
    Var f1 = backbone_.forward(constant(in.full));
    Var f2 = backbone_.forward(constant(in.target));
    Var f3 = backbone_.forward(constant(in.close));
    Var f = gap(fuse_.forward(concat_chw({f1, f2, f3})));
    return head_.forward(f);
  }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  Backbone backbone_;
  Conv2dLayer fuse_;
  MLPHead head_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct CheckpointInfo {
  ModelConfig config;
  std::string method;           // "full", "regression" or "heatmap"
  std::uint64_t library_hash = 0;
};

namespace detail {

constexpr char kCheckpointMagic[4] = {'S', 'P', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const CheckpointInfo& info,
                            const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  nlohmann::json header;
  header["config"] = info.config;
  header["method"] = info.method;
  header["library_hash"] = info.library_hash;
  auto& plist = header["params"] = nlohmann::json::array();
  for (const auto& e : params.entries())
    plist.push_back({{"name", e.name}, {"shape", e.var->value.shape}});
  const std::string hs = header.dump();

  out.write(detail::kCheckpointMagic, 4);
  detail::write_u32(out, detail::kCheckpointVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(hs.size()));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& e : params.entries()) {
    static_assert(sizeof(double) == 8);
    out.write(reinterpret_cast<const char*>(e.var->value.data.data()),
              static_cast<std::streamsize>(e.var->value.data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline CheckpointInfo read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint32_t version = detail::read_u32(in);
  if (version != detail::kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  const std::uint32_t len = detail::read_u32(in);
  std::string hs(len, '\0');
  in.read(hs.data(), len);
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: corrupt header in " + path + ": " + e.what());
  }
  CheckpointInfo info;
  info.config = header.at("config").get<ModelConfig>();
  info.method = header.at("method").get<std::string>();
  info.library_hash = header.at("library_hash").get<std::uint64_t>();
  return info;
}

/// Fills an existing parameter store; names, order and shapes must match the
/// file exactly. Returns the header.
inline CheckpointInfo load_checkpoint(const std::string& path, ParamStore& params,
                                      std::uint64_t expect_library_hash = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  in.seekg(8);
  const std::uint32_t len = detail::read_u32(in);
  std::string hs(len, '\0');
  in.read(hs.data(), len);
  nlohmann::json header = nlohmann::json::parse(hs);

  CheckpointInfo info;
  info.config = header.at("config").get<ModelConfig>();
  info.method = header.at("method").get<std::string>();
  info.library_hash = header.at("library_hash").get<std::uint64_t>();
  if (expect_library_hash != 0 && info.library_hash != expect_library_hash)
    throw std::runtime_error("checkpoint: template library mismatch for " + path);

  const auto& plist = header.at("params");
  if (plist.size() != params.entries().size())
    throw std::runtime_error("checkpoint: parameter count mismatch for " + path);
  for (std::size_t i = 0; i < plist.size(); ++i) {
    auto& e = params.entries()[i];
    if (plist[i].at("name").get<std::string>() != e.name)
      throw std::runtime_error("checkpoint: parameter name mismatch at " + e.name);
    if (plist[i].at("shape").get<std::vector<int>>() != e.var->value.shape)
      throw std::runtime_error("checkpoint: shape mismatch at " + e.name);
    in.read(reinterpret_cast<char*>(e.var->value.data.data()),
            static_cast<std::streamsize>(e.var->value.data.size() * sizeof(double)));
  }
  if (!in) throw std::runtime_error("checkpoint: truncated data in " + path);
  return info;
}

}  // namespace scenepose
