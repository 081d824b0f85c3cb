#include "pics/config.hpp"
#include "pics/data_pipeline.hpp"
#include "pics/diffusion.hpp"
#include "pics/error.hpp"
#include "pics/io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace pics;

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("PICS_LOG");
    const std::string v = env ? env : "info";
    if (v == "error") return Level::error;
    if (v == "warn") return Level::warn;
    if (v == "debug") return Level::debug;
    return Level::info;
  }();
  return level;
}

void log(Level lvl, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (lvl <= log_level()) std::cerr << "[" << names[static_cast<int>(lvl)] << "] " << msg << "\n";
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Seed (overrides config)");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--set", c.overrides, "Override key=value (repeatable)")->take_all();
}

Config resolve(const Common& c) {
  std::optional<fs::path> file;
  if (!c.config_path.empty()) file = c.config_path;
  return resolve_config(file, c.overrides, c.seed);
}

void snapshot(const Common& c, const Config& cfg) {
  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "config.json", to_json(cfg));
}

NoiseSchedule schedule_of(const Config& cfg) {
  return NoiseSchedule::linear(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);
}

SampleOptions sample_options(const Config& cfg) {
  SampleOptions o;
  o.steps = cfg.sample.steps;
  o.cfg_scale = cfg.sample.cfg_scale;
  o.seed = derive_seed(cfg.seed, 0x73616d70ull);
  return o;
}

TrainSample heldout_sample(const Config& cfg, int index) {
  if (index < 0) throw std::invalid_argument("scene index must be >= 0");
  return scene_sample(corpus_scene(cfg.corpus, cfg.seed, cfg.corpus.scenes + index));
}

ModelState load_checked(const std::string& path) {
  if (path.empty()) throw std::invalid_argument("--checkpoint is required");
  if (!fs::exists(path)) throw std::invalid_argument("checkpoint not found: " + path);
  return load_state(path);
}

void write_lines(const fs::path& path, const std::vector<json>& lines) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const json& j : lines) out << j.dump() << "\n";
}

int cmd_gen_corpus(const Common& c) {
  const Config cfg = resolve(c);
  snapshot(c, cfg);
  const fs::path root(c.out);
  json scenes = json::array();
  for (int i = 0; i < cfg.corpus.scenes; ++i) {
    const SceneRecord s = corpus_scene(cfg.corpus, cfg.seed, i);
    validate_scene(s);
    scene_sample(s);  // throws unless the selected pair intersects
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05d", i);
    save_scene(root / "scenes" / name, s);
    scenes.push_back({{"dir", std::string("scenes/") + name}, {"provenance", s.provenance},
                      {"instances", s.instances.size()}});
  }
  write_json(root / "manifest.json", {{"seed", cfg.seed}, {"count", cfg.corpus.scenes}, {"scenes", scenes}});
  log(Level::info, "wrote " + std::to_string(cfg.corpus.scenes) + " scenes to " + root.string());
  return 0;
}

std::vector<BBox> parse_boxes(const json& j, int line) {
  std::vector<BBox> boxes;
  try {
    for (const json& b : j.at("boxes")) boxes.push_back(b.get<BBox>());
  } catch (const std::exception& e) {
    throw FormatError("line " + std::to_string(line) + ": " + e.what());
  }
  for (const BBox& b : boxes) {
    if (!b.valid()) throw FormatError("line " + std::to_string(line) + ": invalid box");
  }
  return boxes;
}

int cmd_select(const Common& c, const std::string& input, std::string mode) {
  const Config cfg = resolve(c);
  snapshot(c, cfg);
  if (mode.empty()) mode = cfg.select.mode;
  int multi = 0;
  if (mode.rfind("multi:", 0) == 0) {
    multi = std::stoi(mode.substr(6));
    if (multi < 3) throw std::invalid_argument("multi:M needs M >= 3");
  } else if (mode != "pair") {
    throw std::invalid_argument("mode must be pair or multi:M");
  }
  std::ifstream in(input);
  if (!in) throw FormatError("cannot open " + input);
  std::vector<json> out;
  std::string text;
  for (int line = 1; std::getline(in, text); ++line) {
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw FormatError("line " + std::to_string(line) + ": not a JSON object");
    const std::vector<BBox> boxes = parse_boxes(j, line);
    json rec = {{"image", j.value("image", json(line))}};
    if (multi) {
      const auto sel = select_multi(boxes, multi, cfg.select.area_threshold);
      rec["selected"] = sel ? json(*sel) : json(-1);
    } else {
      const auto sel = select_boxes(boxes, cfg.select.literal_guard);
      rec["selected"] = sel ? json::array({sel->first, sel->second}) : json(-1);
    }
    if (rec["selected"].is_array()) {
      json picked = json::array();
      for (int idx : rec["selected"]) picked.push_back(boxes[static_cast<std::size_t>(idx)]);
      rec["boxes"] = picked;
    }
    out.push_back(rec);
  }
  write_lines(fs::path(c.out) / "selection.jsonl", out);
  return 0;
}

int cmd_train(const Common& c) {
  const Config cfg = resolve(c);
  snapshot(c, cfg);
  const Corpus corpus = build_corpus(cfg.corpus, cfg.seed);
  ModelState state = ModelState::init(cfg.model, cfg.corpus.width, cfg.corpus.height, cfg.seed);
  std::vector<json> losses;
  train(state, corpus, schedule_of(cfg), cfg.train, cfg.train.steps, [&](std::int64_t step, double loss) {
    losses.push_back({{"step", step}, {"loss", loss}});
    if (step % 10 == 0) log(Level::info, "step " + std::to_string(step) + " loss " + std::to_string(loss));
  });
  write_lines(fs::path(c.out) / "losses.jsonl", losses);
  save_state(fs::path(c.out) / "model.pics", state);
  log(Level::info, "checkpoint written to " + (fs::path(c.out) / "model.pics").string());
  return 0;
}

int cmd_sample(const Common& c, const std::string& ckpt, int scene) {
  const Config cfg = resolve(c);
  snapshot(c, cfg);
  const ModelState state = load_checked(ckpt);
  const TrainSample s = heldout_sample(cfg, scene);
  const SampleResult r = ddim_sample(state.model, schedule_of(cfg), conditioning_from(s), sample_options(cfg));
  const fs::path out(c.out);
  write_ppm(out / "composite.ppm", r.image);
  write_ppm(out / "target.ppm", s.target);
  write_ppm(out / "background.ppm", s.background);
  return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt) {
  const Config cfg = resolve(c);
  snapshot(c, cfg);
  const ModelState state = load_checked(ckpt);
  std::vector<TrainSample> scenes;
  for (int i = 0; i < cfg.corpus.heldout; ++i) scenes.push_back(heldout_sample(cfg, i));
  const EvalReport rep = eval_recomposition(state.model, schedule_of(cfg), scenes, sample_options(cfg));
  std::vector<json> lines;
  for (std::size_t i = 0; i < rep.scenes.size(); ++i) {
    const SceneMetrics& m = rep.scenes[i];
    lines.push_back({{"scene", i}, {"psnr", m.psnr}, {"ssim", m.ssim}, {"mpsnr", m.mpsnr}, {"mssim", m.mssim}});
  }
  lines.push_back({{"scene", "mean"},
                   {"psnr", rep.mean.psnr},
                   {"ssim", rep.mean.ssim},
                   {"mpsnr", rep.mean.mpsnr},
                   {"mssim", rep.mean.mssim}});
  write_lines(fs::path(c.out) / "metrics.jsonl", lines);
  return 0;
}

int cmd_heatmap(const Common& c) {
  const Config cfg = resolve(c);
  snapshot(c, cfg);
  const auto pairs = scene_box_pairs(cfg.heatmap.pairs, cfg.seed, cfg.corpus.width, cfg.corpus.height);
  const Grid heat = overlap_heatmap(pairs, cfg.heatmap.grid);
  write_rescaled_pgm(fs::path(c.out) / "heatmap.pgm", heat);
  const HeatmapStats st = heatmap_stats(heat);
  write_json(fs::path(c.out) / "heatmap_stats.json",
             {{"pairs", pairs.size()}, {"central_mean", st.central_mean}, {"border_mean", st.border_mean}});
  return 0;
}

int cmd_dump_alpha(const Common& c, const std::string& ckpt, int scene) {
  const Config cfg = resolve(c);
  snapshot(c, cfg);
  const ModelState state = load_checked(ckpt);
  const TrainSample s = heldout_sample(cfg, scene);
  Conditioning ab = conditioning_from(s);
  Conditioning ba = ab;
  std::swap(ba.masks[0], ba.masks[1]);
  std::swap(ba.crops[0], ba.crops[1]);
  std::swap(ba.crop_masks[0], ba.crop_masks[1]);
  SampleOptions opts = sample_options(cfg);
  const int last = cfg.sample.steps - 1;
  opts.record_steps = {0, std::min(24, last), last};
  const NoiseSchedule sched = schedule_of(cfg);
  for (const auto& [tag, cond] : {std::pair{"ab", &ab}, std::pair{"ba", &ba}}) {
    const SampleResult r = ddim_sample(state.model, sched, *cond, opts);
    for (const DeltaSMap& m : r.delta_s) {
      write_rescaled_pgm(fs::path(c.out) / ("delta_s_step" + std::to_string(m.step) + "_" + tag + ".pgm"), m.values);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pairwise image compositing toolkit"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint;
  std::string input;
  std::string mode;
  int scene = 0;

  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic scene corpus");
  auto* sel = app.add_subcommand("select", "Select interacting boxes from a JSON-lines annotation file");
  auto* trn = app.add_subcommand("train", "Train the denoiser");
  auto* smp = app.add_subcommand("sample", "Composite one held-out scene");
  auto* evl = app.add_subcommand("eval", "Score held-out recompositions");
  auto* hmp = app.add_subcommand("heatmap", "Overlap heatmap of generated box pairs");
  auto* dmp = app.add_subcommand("dump-alpha", "Write score-difference maps for both object orders");
  for (auto* cmd : {gen, sel, trn, smp, evl, hmp, dmp}) add_common(cmd, common);
  sel->add_option("--input", input, "Annotation file")->required()->check(CLI::ExistingFile);
  sel->add_option("--mode", mode, "pair or multi:M (default from config)");
  for (auto* cmd : {smp, evl, dmp}) cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  for (auto* cmd : {smp, dmp}) cmd->add_option("--scene", scene, "Held-out scene index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_gen_corpus(common);
    if (*sel) return cmd_select(common, input, mode);
    if (*trn) return cmd_train(common);
    if (*smp) return cmd_sample(common, checkpoint, scene);
    if (*evl) return cmd_eval(common, checkpoint);
    if (*hmp) return cmd_heatmap(common);
    if (*dmp) return cmd_dump_alpha(common, checkpoint, scene);
  } catch (const FormatError& e) {
    std::cerr << json{{"error", e.what()}, {"kind", "format"}}.dump() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << json{{"error", e.what()}, {"kind", "invalid_argument"}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"kind", "runtime"}}.dump() << "\n";
    return 1;
  }
  return 0;
}
