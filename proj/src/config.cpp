#include "pics/config.hpp"

#include "pics/error.hpp"

namespace pics {

namespace {

bool compatible(const json& def, const json& v) {
  if (def.is_object()) return v.is_object();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_integer() || def.is_number_unsigned()) return v.is_number_integer() || v.is_number_unsigned();
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  return false;
}

void merge_strict(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw FormatError("config" + (prefix.empty() ? "" : " '" + prefix + "'") + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw FormatError("unknown config key '" + path + "'");
    json& slot = base[key];
    if (!compatible(slot, value)) throw FormatError("config key '" + path + "' has the wrong type");
    if (slot.is_object()) {
      merge_strict(slot, value, path);
    } else {
      slot = value;
    }
  }
}

}  // namespace

json to_json(const Config& c) {
  return {
      {"seed", c.seed},
      {"corpus",
       {{"scenes", c.corpus.scenes},
        {"heldout", c.corpus.heldout},
        {"width", c.corpus.width},
        {"height", c.corpus.height},
        {"objects", c.corpus.objects}}},
      {"model",
       {{"patch", c.model.patch},
        {"dim", c.model.dim},
        {"depth", c.model.depth},
        {"tau", c.model.tau},
        {"crop_size", c.model.crop_size},
        {"crop_patch", c.model.crop_patch},
        {"bg_mode", c.model.bg_mode},
        {"overlap", c.model.overlap},
        {"multiview", c.model.multiview},
        {"views", c.model.views}}},
      {"schedule",
       {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
      {"train",
       {{"steps", c.train.steps},
        {"batch", c.train.batch},
        {"lr", c.train.lr},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"eps", c.train.eps},
        {"p_uncond", c.train.p_uncond},
        {"rotate_prob", c.train.rotate_prob}}},
      {"sample", {{"steps", c.sample.steps}, {"cfg_scale", c.sample.cfg_scale}}},
      {"heatmap", {{"pairs", c.heatmap.pairs}, {"grid", c.heatmap.grid}}},
      {"select",
       {{"mode", c.select.mode},
        {"literal_guard", c.select.literal_guard},
        {"area_threshold", c.select.area_threshold}}},
  };
}

Config config_from_json(const json& j) {
  json doc = to_json(Config{});
  merge_strict(doc, j, "");
  Config c;
  c.seed = doc["seed"].get<std::uint64_t>();
  const json& co = doc["corpus"];
  co["scenes"].get_to(c.corpus.scenes);
  co["heldout"].get_to(c.corpus.heldout);
  co["width"].get_to(c.corpus.width);
  co["height"].get_to(c.corpus.height);
  co["objects"].get_to(c.corpus.objects);
  const json& m = doc["model"];
  m["patch"].get_to(c.model.patch);
  m["dim"].get_to(c.model.dim);
  m["depth"].get_to(c.model.depth);
  m["tau"].get_to(c.model.tau);
  m["crop_size"].get_to(c.model.crop_size);
  m["crop_patch"].get_to(c.model.crop_patch);
  m["bg_mode"].get_to(c.model.bg_mode);
  m["overlap"].get_to(c.model.overlap);
  m["multiview"].get_to(c.model.multiview);
  m["views"].get_to(c.model.views);
  const json& s = doc["schedule"];
  s["steps"].get_to(c.schedule.steps);
  s["beta_start"].get_to(c.schedule.beta_start);
  s["beta_end"].get_to(c.schedule.beta_end);
  const json& t = doc["train"];
  t["steps"].get_to(c.train.steps);
  t["batch"].get_to(c.train.batch);
  t["lr"].get_to(c.train.lr);
  t["beta1"].get_to(c.train.beta1);
  t["beta2"].get_to(c.train.beta2);
  t["eps"].get_to(c.train.eps);
  t["p_uncond"].get_to(c.train.p_uncond);
  t["rotate_prob"].get_to(c.train.rotate_prob);
  doc["sample"]["steps"].get_to(c.sample.steps);
  doc["sample"]["cfg_scale"].get_to(c.sample.cfg_scale);
  doc["heatmap"]["pairs"].get_to(c.heatmap.pairs);
  doc["heatmap"]["grid"].get_to(c.heatmap.grid);
  const json& sel = doc["select"];
  sel["mode"].get_to(c.select.mode);
  sel["literal_guard"].get_to(c.select.literal_guard);
  sel["area_threshold"].get_to(c.select.area_threshold);
  return c;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw FormatError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* slot = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!slot->is_object()) *slot = json::object();
    slot = &(*slot)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *slot = std::move(value);
}

void validate(const Config& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("invalid config: " + what);
  };
  require(c.corpus.scenes >= 1 && c.corpus.heldout >= 0, "corpus sizes");
  require(c.corpus.width > 0 && c.corpus.height > 0, "corpus dimensions");
  require(c.corpus.objects >= 2, "corpus.objects must be >= 2");
  const ModelConfig& m = c.model;
  require(m.dim > 0 && m.patch > 0, "model.dim and model.patch must be positive");
  require(m.depth >= 1 && m.depth % 2 == 1, "model.depth must be a positive odd number");
  require(m.tau > 0, "model.tau must be positive");
  const int stride = m.patch << (m.depth / 2);
  require(c.corpus.width % stride == 0 && c.corpus.height % stride == 0,
          "image size must be divisible by patch * 2^(depth/2)");
  require(m.crop_patch > 0 && m.crop_size > 0 && m.crop_size % m.crop_patch == 0,
          "model.crop_size must be divisible by model.crop_patch");
  require(m.bg_mode == "zero" || m.bg_mode == "identity", "model.bg_mode must be zero or identity");
  require(m.overlap == "auto" || m.overlap == "pairwise" || m.overlap == "multi",
          "model.overlap must be auto, pairwise or multi");
  require(m.views >= 1, "model.views must be >= 1");
  require(c.schedule.steps >= 1, "schedule.steps must be >= 1");
  require(c.schedule.beta_start > 0 && c.schedule.beta_start < c.schedule.beta_end && c.schedule.beta_end < 1,
          "schedule betas must satisfy 0 < start < end < 1");
  require(c.train.steps >= 0 && c.train.batch >= 1, "train.steps / train.batch");
  require(c.train.lr > 0, "train.lr must be positive");
  require(c.train.p_uncond >= 0 && c.train.p_uncond < 1, "train.p_uncond must lie in [0, 1)");
  require(c.train.rotate_prob >= 0 && c.train.rotate_prob <= 1, "train.rotate_prob must lie in [0, 1]");
  require(c.sample.steps >= 1 && c.sample.steps <= c.schedule.steps, "sample.steps must lie in [1, schedule.steps]");
  require(c.sample.cfg_scale >= 0, "sample.cfg_scale must be >= 0");
  require(c.heatmap.pairs >= 1 && c.heatmap.grid >= 1, "heatmap sizes");
  require(c.select.area_threshold >= 0, "select.area_threshold must be >= 0");
}

Config resolve_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides,
                      std::optional<std::uint64_t> seed) {
  json doc = json::object();
  if (file) doc = read_json(*file);
  for (const std::string& o : overrides) apply_override(doc, o);
  if (seed) doc["seed"] = *seed;
  Config c = config_from_json(doc);
  validate(c);
  return c;
}

}  // namespace pics
