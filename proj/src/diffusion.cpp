#include "pics/diffusion.hpp"

#include "pics/error.hpp"
#include "pics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

namespace pics {

std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule: need at least one step");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1)) {
    throw std::invalid_argument("schedule: betas must satisfy 0 < start <= end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.alpha_bar.push_back(1.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    s.betas.push_back(beta);
    s.alpha_bar.push_back(s.alpha_bar.back() * (1.0 - beta));
  }
  return s;
}

double NoiseSchedule::abar(int t) const {
  if (t < 0 || t > steps) throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                                                  std::to_string(steps) + "]");
  return alpha_bar[static_cast<std::size_t>(t)];
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps) throw std::out_of_range("q_sample: t = " + std::to_string(t) + " out of range");
  if (x0.shape() != eps.shape()) throw ShapeError("q_sample: x0 and eps shapes differ");
  const double a = schedule.abar(t);
  return Tensor(x0.shape(), Matrix(std::sqrt(a) * x0.matrix() + std::sqrt(1.0 - a) * eps.matrix()));
}

std::vector<int> ddim_timesteps(int total, int steps) {
  if (steps < 1 || steps > total) throw std::invalid_argument("ddim: steps must lie in [1, T]");
  std::vector<int> ts;
  for (int i = 0; i < steps; ++i) {
    ts.push_back(total - static_cast<int>(static_cast<std::int64_t>(i) * total / steps));
  }
  return ts;
}

Matrix ddim_step(const Matrix& x_t, const Matrix& eps_hat, double abar_t, double abar_prev) {
  const Matrix x0 = (x_t - std::sqrt(1.0 - abar_t) * eps_hat) / std::sqrt(abar_t);
  return std::sqrt(abar_prev) * x0 + std::sqrt(1.0 - abar_prev) * eps_hat;
}

Matrix ddim_step_clipped(const Matrix& x_t, const Matrix& eps_hat, double abar_t, double abar_prev) {
  const double sa = std::sqrt(abar_t);
  const double sn = std::sqrt(1.0 - abar_t);
  const Matrix x0 = ((x_t - sn * eps_hat) / sa).cwiseMax(-1.0).cwiseMin(1.0);
  const Matrix eps = sn > 0 ? Matrix((x_t - sa * x0) / sn) : eps_hat;
  return std::sqrt(abar_prev) * x0 + std::sqrt(1.0 - abar_prev) * eps;
}

Matrix cfg_combine(const Matrix& eps_cond, const Matrix& eps_uncond, double scale) {
  if (eps_cond.rows() != eps_uncond.rows() || eps_cond.cols() != eps_uncond.cols()) {
    throw ShapeError("cfg_combine: prediction shapes differ");
  }
  return scale * eps_cond + (1.0 - scale) * eps_uncond;
}

namespace {

// Half the channels encode y, half x, each as interleaved sin/cos pairs.
Matrix position_encoding(int h, int w, Index d) {
  Matrix pe = Matrix::Zero(static_cast<Index>(h) * w, d);
  const Index half = d / 2;
  const Index pairs = half / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Index row = static_cast<Index>(y) * w + x;
      for (Index k = 0; k < pairs; ++k) {
        const double omega = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(pairs));
        pe(row, 2 * k) = std::sin(y * omega);
        pe(row, 2 * k + 1) = std::cos(y * omega);
        pe(row, half + 2 * k) = std::sin(x * omega);
        pe(row, half + 2 * k + 1) = std::cos(x * omega);
      }
    }
  }
  return pe;
}

Matrix time_encoding(int t, Index d) {
  Matrix e = Matrix::Zero(1, d);
  const Index pairs = d / 2;
  for (Index k = 0; k < pairs; ++k) {
    const double omega = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(pairs));
    e(0, 2 * k) = std::sin(t * omega);
    e(0, 2 * k + 1) = std::cos(t * omega);
  }
  return e;
}

Mask union_of(std::span<const Mask> masks) {
  Grid u = masks[0].values();
  for (std::size_t i = 1; i < masks.size(); ++i) u = u.max(masks[i].values());
  return Mask(std::move(u));
}

Mask crop_mask(const Mask& m, const BBox& b) {
  return Mask(Grid(m.values().block(b.y0, b.x0, b.height(), b.width())));
}

json model_config_json(const ModelConfig& m) {
  Config c;
  c.model = m;
  return to_json(c)["model"];
}

}  // namespace

Model Model::init(const ModelConfig& cfg, int width, int height, std::uint64_t seed) {
  if (width % (cfg.patch << (cfg.depth / 2)) || height % (cfg.patch << (cfg.depth / 2))) {
    throw ShapeError("model: image size must be divisible by patch * 2^(depth/2)");
  }
  Rng rng(seed);
  Model m;
  m.cfg = cfg;
  m.width = width;
  m.height = height;
  const Index d = cfg.dim;
  const Index pp = static_cast<Index>(cfg.patch) * cfg.patch;
  m.in_proj = LinearParams::init(pp * (2 * m.channels + 1), d, rng);
  m.time_fc1 = LinearParams::init(d, d, rng);
  m.time_fc2 = LinearParams::init(d, d, rng);
  for (int i = 0; i < cfg.depth; ++i) m.blocks.push_back(ItbParams::init(d, rng, cfg.tau));
  m.out_norm = LayerNormParams::identity(d);
  m.out_proj = LinearParams::zeros(d, pp * m.channels);
  m.encoder = PatchEncoder::init(m.channels, cfg.crop_patch, d, rng);
  m.fusion = FusionParams::init(d, rng);
  m.null_code = Tensor::randn({1, d}, rng, 1.0);
  return m;
}

ItbOptions Model::itb_options() const {
  ItbOptions o;
  o.background = cfg.bg_mode == "identity" ? BackgroundMode::identity_residual : BackgroundMode::zero_residual;
  if (cfg.overlap == "pairwise") o.overlap = OverlapPath::pairwise;
  if (cfg.overlap == "multi") o.overlap = OverlapPath::multi;
  return o;
}

Conditioning conditioning_from(const TrainSample& s) {
  Conditioning c;
  c.background = s.background;
  c.masks = s.masks;
  c.crops = s.crops;
  for (std::size_t i = 0; i < s.visible.size(); ++i) c.crop_masks.push_back(crop_mask(s.visible[i], s.boxes[i]));
  return c;
}

PreparedCondition prepare(const Model& model, const Conditioning& cond, std::span<const double> rotations) {
  const std::size_t n = cond.masks.size();
  if (n == 0 || cond.crops.size() != n || cond.crop_masks.size() != n) {
    throw std::invalid_argument("conditioning: need matching masks, crops and crop masks");
  }
  if (!rotations.empty() && rotations.size() != n) throw std::invalid_argument("conditioning: one rotation per object");
  if (cond.background.width() != model.width || cond.background.height() != model.height ||
      cond.background.channels() != model.channels) {
    throw ShapeError("conditioning: background does not match the model resolution");
  }
  PreparedCondition pc;
  const Mask unite = union_of(cond.masks);
  Image inputs(model.width, model.height, model.channels + 1);
  for (int c = 0; c < model.channels; ++c) {
    inputs.channel(c) = (2.0 * cond.background.channel(c) - 1.0) * (1.0 - unite.values());
  }
  inputs.channel(model.channels) = unite.values();
  pc.cond_patches = patchify(inputs, model.cfg.patch);

  std::map<std::pair<int, int>, RoutingMasks> cache;
  for (const auto& hw : stack_resolutions(model.cfg.depth, model.grid_height(), model.grid_width())) {
    auto it = cache.find(hw);
    if (it == cache.end()) {
      RoutingMasks r = n == 1 ? build_single_routing(cond.masks[0], hw.first, hw.second)
                              : build_routing_masks(cond.masks, hw.first, hw.second);
      it = cache.emplace(hw, std::move(r)).first;
    }
    pc.routing.push_back(it->second);
  }

  for (std::size_t i = 0; i < n; ++i) {
    Image crop = cond.crops[i];
    Mask mask = cond.crop_masks[i];
    if (!rotations.empty() && rotations[i] != 0.0) std::tie(crop, mask) = rotate_augment(crop, mask, rotations[i]);
    for (int c = 0; c < crop.channels(); ++c) crop.channel(c) = 2.0 * crop.channel(c) - mask.values();
    pc.crop_inputs.push_back(resize_bilinear(crop, model.cfg.crop_size, model.cfg.crop_size));
  }
  return pc;
}

std::vector<Var> object_codes(Binder& bind, const Model& model, const PreparedCondition& pc, bool unconditional,
                              Rng* view_rng) {
  Tape& tape = bind.tape();
  std::vector<Var> codes;
  if (unconditional) {
    for (std::size_t i = 0; i < pc.crop_inputs.size(); ++i) codes.push_back(bind(model.null_code));
    return codes;
  }
  const int g = model.cfg.crop_size / model.cfg.crop_patch;
  Var pos = tape.constant(Tensor::from_matrix(position_encoding(g, g, model.cfg.dim)));
  for (std::size_t i = 0; i < pc.crop_inputs.size(); ++i) {
    if (!model.cfg.multiview) {
      codes.push_back(add(encode_object(bind, model.encoder, pc.crop_inputs[i]), pos));
      continue;
    }
    const ViewSet vs = synth_multiview(pc.crop_inputs[i], model.cfg.views, derive_seed(0x766965ull, i));
    std::vector<Var> views;
    for (const Image& v : vs.views) views.push_back(add(encode_object(bind, model.encoder, v), pos));
    std::vector<int> perm(views.size());
    std::iota(perm.begin(), perm.end(), 0);
    if (view_rng) perm = random_permutation(static_cast<int>(views.size()), *view_rng);
    codes.push_back(fuse_multiview(bind, model.fusion, views, perm));
  }
  return codes;
}

Var denoise(Binder& bind, const Model& model, const PreparedCondition& pc, const Matrix& x_t_patches, int t,
            std::span<const Var> codes, std::vector<OverlapGateReport>* reports) {
  Tape& tape = bind.tape();
  const int gh = model.grid_height();
  const int gw = model.grid_width();
  if (x_t_patches.rows() != static_cast<Index>(gh) * gw || x_t_patches.rows() != pc.cond_patches.rows()) {
    throw ShapeError("denoise: token count mismatch");
  }
  Matrix input(x_t_patches.rows(), x_t_patches.cols() + pc.cond_patches.cols());
  input << x_t_patches, pc.cond_patches;
  const Index d = model.cfg.dim;
  Var x = linear(bind, model.in_proj, tape.constant(Tensor::from_matrix(std::move(input))));
  x = add(x, tape.constant(Tensor::from_matrix(position_encoding(gh, gw, d))));
  Var temb = tape.constant(Tensor::from_matrix(time_encoding(t, d)));
  temb = linear(bind, model.time_fc2, gelu(linear(bind, model.time_fc1, temb)));
  x = add_row(x, reshape(temb, {d}));
  Var z = itb_stack_forward(bind, model.blocks, x, gh, gw, codes, pc.routing, model.itb_options(), reports);
  return linear(bind, model.out_proj, layer_norm(bind, model.out_norm, z));
}

ModelState ModelState::init(const ModelConfig& cfg, int width, int height, std::uint64_t seed) {
  ModelState s;
  s.model = Model::init(cfg, width, height, seed);
  s.seed = seed;
  s.model.visit([&](const std::string&, const Tensor& t) {
    s.adam_m.push_back(Matrix::Zero(t.rows(), t.cols()));
    s.adam_v.push_back(Matrix::Zero(t.rows(), t.cols()));
  });
  return s;
}

Var batch_loss(Binder& bind, const Model& model, std::span<const TrainSample> batch, const NoiseSchedule& schedule,
               const TrainConfig& cfg, std::uint64_t seed) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  Tape& tape = bind.tape();
  std::vector<Var> losses;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainSample& s = batch[i];
    Rng rng(derive_seed(seed, i));
    const int t = std::uniform_int_distribution<int>(1, schedule.steps)(rng);
    const Tensor eps = Tensor::randn({static_cast<Index>(model.width) * model.height, model.channels}, rng);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const bool uncond = coin(rng) < cfg.p_uncond;
    std::vector<double> rotations;
    for (std::size_t k = 0; k < s.crops.size(); ++k) {
      rotations.push_back(coin(rng) < cfg.rotate_prob ? sample_rotation(rng) : 0.0);
    }
    const PreparedCondition pc = prepare(model, conditioning_from(s), rotations);
    const Tensor x0 = Tensor::from_matrix(Matrix(2.0 * s.target.to_tokens().array() - 1.0));
    const Tensor xt = q_sample(x0, t, eps, schedule);
    const Matrix xt_p = patchify(xt.matrix(), model.width, model.height, model.cfg.patch);
    const Matrix eps_p = patchify(eps.matrix(), model.width, model.height, model.cfg.patch);
    const std::vector<Var> codes = object_codes(bind, model, pc, uncond, &rng);
    Var pred = denoise(bind, model, pc, xt_p, t, codes);
    losses.push_back(mse(pred, tape.constant(Tensor::from_matrix(eps_p))));
  }
  Var total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  return scale(total, 1.0 / static_cast<double>(losses.size()));
}

double train_step(ModelState& state, std::span<const TrainSample> batch, const NoiseSchedule& schedule,
                  const TrainConfig& cfg, std::uint64_t seed) {
  Tape tape;
  Binder bind(tape, true);
  Var loss;
  try {
    loss = batch_loss(bind, state.model, batch, schedule, cfg, seed);
  } catch (const NumericError& e) {
    throw NumericError("training step " + std::to_string(state.step) + ": " + e.what());
  }
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw NumericError("training step " + std::to_string(state.step) + ": non-finite loss");
  tape.backward(loss);

  state.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  std::size_t k = 0;
  state.model.visit([&](const std::string&, Tensor& p) {
    const Matrix g = bind.grad(p);
    Matrix& m = state.adam_m[k];
    Matrix& v = state.adam_v[k];
    ++k;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.matrix().array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  });
  return value;
}

SceneRecord corpus_scene(const CorpusConfig& cfg, std::uint64_t seed, int index) {
  return generate_scene(derive_seed(seed, static_cast<std::uint64_t>(index)), cfg.width, cfg.height, cfg.objects);
}

TrainSample scene_sample(const SceneRecord& scene) {
  BoxPair pair{0, 1};
  if (scene.instances.size() > 2) {
    std::vector<BBox> boxes;
    for (const Instance& inst : scene.instances) boxes.push_back(inst.box);
    if (auto p = select_boxes(boxes)) pair = *p;
  }
  return decompose(scene, pair);
}

Corpus build_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
  Corpus c;
  for (int i = 0; i < cfg.scenes; ++i) c.train.push_back(scene_sample(corpus_scene(cfg, seed, i)));
  for (int i = 0; i < cfg.heldout; ++i) c.heldout.push_back(scene_sample(corpus_scene(cfg, seed, cfg.scenes + i)));
  return c;
}

void train(ModelState& state, const Corpus& corpus, const NoiseSchedule& schedule, const TrainConfig& cfg, int steps,
           const StepCallback& on_step) {
  if (corpus.train.empty()) throw std::invalid_argument("train: empty training split");
  for (int s = 0; s < steps; ++s) {
    Rng rng(derive_seed(state.seed, static_cast<std::uint64_t>(2 * state.step)));
    std::uniform_int_distribution<std::size_t> pick(0, corpus.train.size() - 1);
    std::vector<TrainSample> batch;
    for (int b = 0; b < cfg.batch; ++b) batch.push_back(corpus.train[pick(rng)]);
    const std::int64_t step = state.step;
    const double loss =
        train_step(state, batch, schedule, cfg, derive_seed(state.seed, static_cast<std::uint64_t>(2 * step + 1)));
    if (on_step) on_step(step, loss);
  }
}

SampleResult ddim_sample(const Model& model, const NoiseSchedule& schedule, const Conditioning& cond,
                         const SampleOptions& opts) {
  if (opts.steps > schedule.steps) throw std::invalid_argument("ddim_sample: more steps than the schedule has");
  if (opts.cfg_scale < 0) throw std::invalid_argument("ddim_sample: cfg_scale must be >= 0");
  const PreparedCondition pc = prepare(model, cond);
  const int patch = model.cfg.patch;
  Rng rng(opts.seed);
  Matrix x = Tensor::randn({static_cast<Index>(model.width) * model.height, model.channels}, rng).matrix();
  const std::vector<int> ts = ddim_timesteps(schedule.steps, opts.steps);

  SampleResult result;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    const Matrix xp = patchify(x, model.width, model.height, patch);
    std::vector<OverlapGateReport> reports;
    Matrix eps_c;
    Matrix eps_u;
    {
      Tape tape;
      Binder bind(tape, false);
      eps_c = denoise(bind, model, pc, xp, t, object_codes(bind, model, pc, false), &reports).mat();
    }
    {
      Tape tape;
      Binder bind(tape, false);
      eps_u = denoise(bind, model, pc, xp, t, object_codes(bind, model, pc, true)).mat();
    }
    const Matrix eps = cfg_combine(eps_c, eps_u, opts.cfg_scale);

    const bool record = std::find(opts.record_steps.begin(), opts.record_steps.end(), static_cast<int>(i)) !=
                        opts.record_steps.end();
    if (record && !reports.empty()) {
      const int nb = static_cast<int>(reports.size());
      const int block = opts.delta_s_block < 0 ? nb + opts.delta_s_block : opts.delta_s_block;
      if (block < 0 || block >= nb) throw std::invalid_argument("ddim_sample: delta_s_block out of range");
      const Eigen::VectorXd& ds = reports[static_cast<std::size_t>(block)].delta_s;
      if (ds.size() > 0) {
        const auto [bh, bw] = stack_resolutions(nb, model.grid_height(), model.grid_width())[static_cast<std::size_t>(block)];
        const int sy = model.height / bh;
        const int sx = model.width / bw;
        Grid map(model.height, model.width);
        for (int y = 0; y < model.height; ++y) {
          for (int xx = 0; xx < model.width; ++xx) map(y, xx) = ds(static_cast<Index>(y / sy) * bw + xx / sx);
        }
        result.delta_s.push_back({static_cast<int>(i), std::move(map)});
      }
    }
    const Matrix eps_pix = unpatchify(eps, model.width, model.height, model.channels, patch);
    x = opts.clip_x0 ? ddim_step_clipped(x, eps_pix, schedule.abar(t), schedule.abar(t_prev))
                     : ddim_step(x, eps_pix, schedule.abar(t), schedule.abar(t_prev));
    if (!x.allFinite()) throw NumericError("ddim_sample: non-finite state at step " + std::to_string(i));
  }
  result.tokens = x;
  result.image = clamp(map_channels(Image::from_tokens(x, model.width, model.height), 0.5, 0.5), 0.0, 1.0);
  return result;
}

Image sequential_baseline(const Model& model, const NoiseSchedule& schedule, const Conditioning& cond,
                          std::span<const int> order, const SampleOptions& opts) {
  if (order.empty()) throw std::invalid_argument("sequential_baseline: empty order");
  Image background = cond.background;
  Image last;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto idx = static_cast<std::size_t>(order[k]);
    Conditioning turn{background, {cond.masks.at(idx)}, {cond.crops.at(idx)}, {cond.crop_masks.at(idx)}};
    last = ddim_sample(model, schedule, turn, opts).image;
    if (k + 1 < order.size()) background = masked_background(last, cond.masks.at(static_cast<std::size_t>(order[k + 1])));
  }
  return last;
}

EvalReport eval_recomposition(const Model& model, const NoiseSchedule& schedule, std::span<const TrainSample> scenes,
                              const SampleOptions& opts) {
  EvalReport report;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const TrainSample& s = scenes[i];
    SampleOptions o = opts;
    o.seed = derive_seed(opts.seed, i);
    o.record_steps.clear();
    const Image out = ddim_sample(model, schedule, conditioning_from(s), o).image;
    Grid overlap = s.masks[0].values();
    for (std::size_t k = 1; k < s.masks.size(); ++k) overlap *= s.masks[k].values();
    const Mask region(std::move(overlap));
    SceneMetrics m{psnr(out, s.target), ssim(out, s.target), 0, 0};
    if (region.area() > 0) {
      m.mpsnr = psnr(out, s.target, region);
      m.mssim = ssim(out, s.target, region);
    }
    report.scenes.push_back(m);
  }
  if (!report.scenes.empty()) {
    for (const SceneMetrics& m : report.scenes) {
      report.mean.psnr += m.psnr;
      report.mean.ssim += m.ssim;
      report.mean.mpsnr += m.mpsnr;
      report.mean.mssim += m.mssim;
    }
    const double n = static_cast<double>(report.scenes.size());
    report.mean = {report.mean.psnr / n, report.mean.ssim / n, report.mean.mpsnr / n, report.mean.mssim / n};
  }
  return report;
}

void quantize(ModelState& state) {
  state.model.visit([](const std::string&, Tensor& t) { t = round_to_f32(t); });
  for (auto* moments : {&state.adam_m, &state.adam_v}) {
    for (Matrix& m : *moments) m = m.cast<float>().cast<double>();
  }
}

Checkpoint to_checkpoint(const ModelState& state) {
  Checkpoint ckpt;
  std::size_t k = 0;
  state.model.visit([&](const std::string& name, const Tensor& t) {
    ckpt.tensors.push_back({name, t});
    ckpt.tensors.push_back({"adam.m." + name, Tensor(t.shape(), state.adam_m[k])});
    ckpt.tensors.push_back({"adam.v." + name, Tensor(t.shape(), state.adam_v[k])});
    ++k;
  });
  ckpt.meta = {{"model", model_config_json(state.model.cfg)},
               {"width", state.model.width},
               {"height", state.model.height},
               {"step", state.step},
               {"seed", state.seed}};
  return ckpt;
}

ModelState from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg;
  int width = 0;
  int height = 0;
  ModelState state;
  try {
    cfg = config_from_json(json{{"model", ckpt.meta.at("model")}}).model;
    width = ckpt.meta.at("width").get<int>();
    height = ckpt.meta.at("height").get<int>();
    state = ModelState::init(cfg, width, height, 0);
    state.step = ckpt.meta.at("step").get<std::int64_t>();
    state.seed = ckpt.meta.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  std::map<std::string, const Tensor*> by_name;
  for (const NamedTensor& nt : ckpt.tensors) by_name[nt.name] = &nt.tensor;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing tensor " + name);
    if (it->second->shape() != shape) {
      throw FormatError("checkpoint tensor " + name + " has shape " + shape_string(it->second->shape()) + ", expected " +
                        shape_string(shape));
    }
    return *it->second;
  };
  std::size_t k = 0;
  state.model.visit([&](const std::string& name, Tensor& t) {
    t = fetch(name, t.shape());
    state.adam_m[k] = fetch("adam.m." + name, t.shape()).matrix();
    state.adam_v[k] = fetch("adam.v." + name, t.shape()).matrix();
    ++k;
  });
  return state;
}

void save_state(const fs::path& path, ModelState& state) {
  quantize(state);
  save_checkpoint(path, to_checkpoint(state));
}

ModelState load_state(const fs::path& path) { return from_checkpoint(load_checkpoint(path)); }

}  // namespace pics
