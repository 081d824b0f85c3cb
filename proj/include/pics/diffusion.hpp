#pragma once

#include "pics/checkpoint.hpp"
#include "pics/config.hpp"
#include "pics/data_pipeline.hpp"
#include "pics/interaction_block.hpp"
#include "pics/shape_prior.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace pics {

/// splitmix64 of (a, b); used to derive independent per-step / per-item seeds.
std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b);

/// Linear beta schedule. alpha_bar is indexed by t in [0, T] with alpha_bar[0] = 1.
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> betas;      // betas[t-1] for t in [1, T]
  std::vector<double> alpha_bar;  // size T + 1

  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  double abar(int t) const;
};

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, for 1 <= t <= T.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);

/// Evenly strided descending subsequence T = t_0 > t_1 > ... > t_{n-1} >= 1.
std::vector<int> ddim_timesteps(int total, int steps);

/// Deterministic (eta = 0) update from abar_t to abar_prev given predicted noise.
Matrix ddim_step(const Matrix& x_t, const Matrix& eps_hat, double abar_t, double abar_prev);
/// Same update with the x0 estimate clamped to [-1, 1] and the noise
/// re-derived from the clamped estimate.
Matrix ddim_step_clipped(const Matrix& x_t, const Matrix& eps_hat, double abar_t, double abar_prev);

/// s * eps_cond + (1 - s) * eps_uncond: affine in s, exact at s = 0 and s = 1.
Matrix cfg_combine(const Matrix& eps_cond, const Matrix& eps_uncond, double scale);

/// Denoiser: patch tokens of [x_t | background | union mask] -> in_proj (+ 2-D
/// sinusoidal position, + time MLP) -> ITB stack -> LN -> out_proj (zero init)
/// -> predicted noise per patch. Object codes come from a patch encoder on the
/// resized crops (or a fused multi-view descriptor); the unconditional branch
/// replaces every code with a learned null code.
struct Model {
  ModelConfig cfg;
  int width = 32;
  int height = 32;
  int channels = 3;

  LinearParams in_proj;
  LinearParams time_fc1;
  LinearParams time_fc2;
  std::vector<ItbParams> blocks;
  LayerNormParams out_norm;
  LinearParams out_proj;
  PatchEncoder encoder;
  FusionParams fusion;
  Tensor null_code;

  static Model init(const ModelConfig& cfg, int width, int height, std::uint64_t seed);

  int grid_width() const { return width / cfg.patch; }
  int grid_height() const { return height / cfg.patch; }
  ItbOptions itb_options() const;

  template <typename F>
  void visit(F&& f) {
    in_proj.visit("in_proj", f);
    time_fc1.visit("time.fc1", f);
    time_fc2.visit("time.fc2", f);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("block" + std::to_string(i), f);
    out_norm.visit("out_norm", f);
    out_proj.visit("out_proj", f);
    encoder.visit("encoder", f);
    fusion.visit("fusion", f);
    f("null_code", null_code);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<Model*>(this)->visit([&](const std::string& name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }
};

/// Everything the denoiser is conditioned on, in image space ([0, 1] values).
struct Conditioning {
  Image background;          // zero on the union of `masks`
  std::vector<Mask> masks;   // amodal masks: routing and erasure
  std::vector<Image> crops;  // box-sized object crops, zero outside the visible mask
  std::vector<Mask> crop_masks;  // visible masks cropped to the boxes
};

Conditioning conditioning_from(const TrainSample& s);

/// Conditioning resolved to model inputs: patchified background channels,
/// per-stage routing, and encoder-ready crops.
struct PreparedCondition {
  Matrix cond_patches;                // [hw, patch^2 * (C + 1)]
  std::vector<RoutingMasks> routing;  // one per block
  std::vector<Image> crop_inputs;     // crop_size^2, values in [-1, 1], 0 off-object
};

/// `rotations` (radians, one per object) are applied to crops and their masks
/// before resizing; empty means none.
PreparedCondition prepare(const Model& model, const Conditioning& cond, std::span<const double> rotations = {});

/// Object codes (or M null codes when `unconditional`).
std::vector<Var> object_codes(Binder& bind, const Model& model, const PreparedCondition& pc, bool unconditional,
                              Rng* view_rng = nullptr);

/// Predicted noise in patch layout [hw, patch^2 * C].
Var denoise(Binder& bind, const Model& model, const PreparedCondition& pc, const Matrix& x_t_patches, int t,
            std::span<const Var> codes, std::vector<OverlapGateReport>* reports = nullptr);

struct ModelState {
  Model model;
  std::vector<Matrix> adam_m;
  std::vector<Matrix> adam_v;
  std::int64_t step = 0;
  std::uint64_t seed = 0;

  static ModelState init(const ModelConfig& cfg, int width, int height, std::uint64_t seed);
};

/// Loss of one batch with (t, eps, dropout, rotation) drawn from `seed`.
/// When `bind` tracks, backward() can follow.
Var batch_loss(Binder& bind, const Model& model, std::span<const TrainSample> batch, const NoiseSchedule& schedule,
               const TrainConfig& cfg, std::uint64_t seed);

/// One Adam step on the batch; returns the loss before the update.
/// Throws NumericError on a non-finite loss.
double train_step(ModelState& state, std::span<const TrainSample> batch, const NoiseSchedule& schedule,
                  const TrainConfig& cfg, std::uint64_t seed);

struct Corpus {
  std::vector<TrainSample> train;
  std::vector<TrainSample> heldout;
};

/// Scene i uses seed derive_seed(seed, i); held-out scenes follow the training
/// ones. Two-object scenes use the pair (0, 1), larger ones select_boxes.
Corpus build_corpus(const CorpusConfig& cfg, std::uint64_t seed);
SceneRecord corpus_scene(const CorpusConfig& cfg, std::uint64_t seed, int index);
TrainSample scene_sample(const SceneRecord& scene);

using StepCallback = std::function<void(std::int64_t step, double loss)>;

/// `steps` optimizer steps on minibatches drawn with replacement from the
/// training split.
void train(ModelState& state, const Corpus& corpus, const NoiseSchedule& schedule, const TrainConfig& cfg,
           int steps, const StepCallback& on_step = {});

struct SampleOptions {
  int steps = 50;
  double cfg_scale = 5.0;
  std::uint64_t seed = 0;
  bool clip_x0 = true;
  std::vector<int> record_steps{0, 24, 49};
  int delta_s_block = 0;  // block whose gate is recorded; negative counts from the end
};

struct DeltaSMap {
  int step = 0;
  Grid values;  // s_a - s_b of the conditional branch, nearest-upsampled to image resolution
};

struct SampleResult {
  Matrix tokens;  // [H*W, C] final sample in [-1, 1] model space
  Image image;    // mapped to [0, 1] and clamped
  std::vector<DeltaSMap> delta_s;
};

SampleResult ddim_sample(const Model& model, const NoiseSchedule& schedule, const Conditioning& cond,
                         const SampleOptions& opts);

/// One object per turn in `order`; each turn's output, with the next object's
/// mask erased, is the next turn's background.
Image sequential_baseline(const Model& model, const NoiseSchedule& schedule, const Conditioning& cond,
                          std::span<const int> order, const SampleOptions& opts);

struct SceneMetrics {
  double psnr = 0;
  double ssim = 0;
  double mpsnr = 0;
  double mssim = 0;
};

struct EvalReport {
  std::vector<SceneMetrics> scenes;
  SceneMetrics mean;
};

/// Samples every scene and scores it against its target, overall and on the
/// overlap of the two amodal masks.
EvalReport eval_recomposition(const Model& model, const NoiseSchedule& schedule, std::span<const TrainSample> scenes,
                              const SampleOptions& opts);

/// Rounds parameters and optimizer moments to f32, the checkpoint precision.
void quantize(ModelState& state);
Checkpoint to_checkpoint(const ModelState& state);
ModelState from_checkpoint(const Checkpoint& ckpt);
/// Quantizes `state` in place, then writes it.
void save_state(const fs::path& path, ModelState& state);
ModelState load_state(const fs::path& path);

}  // namespace pics
