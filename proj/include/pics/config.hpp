#pragma once

#include "pics/io.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pics {

struct CorpusConfig {
  int scenes = 200;
  int heldout = 20;
  int width = 32;
  int height = 32;
  int objects = 2;
};

struct ModelConfig {
  int patch = 2;
  int dim = 32;
  int depth = 5;
  double tau = 0.5;
  int crop_size = 16;
  int crop_patch = 4;
  std::string bg_mode = "zero";  // zero | identity
  std::string overlap = "auto";  // auto | pairwise | multi
  bool multiview = false;
  int views = 6;
};

struct ScheduleConfig {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct TrainConfig {
  int steps = 200;
  int batch = 8;
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double p_uncond = 0.1;
  double rotate_prob = 0.5;
};

struct SampleConfig {
  int steps = 50;
  double cfg_scale = 5.0;
};

struct HeatmapConfig {
  int pairs = 10000;
  int grid = 64;
};

struct SelectConfig {
  std::string mode = "pair";  // pair | multi:M
  bool literal_guard = true;
  double area_threshold = 64.0;
};

struct Config {
  std::uint64_t seed = 0;
  CorpusConfig corpus;
  ModelConfig model;
  ScheduleConfig schedule;
  TrainConfig train;
  SampleConfig sample;
  HeatmapConfig heatmap;
  SelectConfig select;
};

json to_json(const Config& c);

/// Strict parse: every key must exist in the defaults with a compatible type.
/// Missing keys keep their defaults. Throws FormatError naming the key.
Config config_from_json(const json& j);

/// Applies "dotted.key=value" onto a config document. The value is parsed as
/// JSON when possible and taken as a string otherwise.
void apply_override(json& doc, const std::string& assignment);

/// Defaults <- file (optional) <- overrides <- seed (optional), then validated.
Config resolve_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides,
                      std::optional<std::uint64_t> seed = std::nullopt);

/// Throws std::invalid_argument on inconsistent settings.
void validate(const Config& c);

}  // namespace pics
