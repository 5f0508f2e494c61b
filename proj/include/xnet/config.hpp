#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xnet/assignment.hpp"
#include "xnet/decoder.hpp"
#include "xnet/heads.hpp"
#include "xnet/matrix.hpp"

namespace xnet {

struct TrainConfig {
  int batch_size = 8;
  double lr = 5e-5;
  double lr_drop_fraction = 0.75;  // lr x0.1 from this fraction of the epochs on
  int epochs = 40;
  int crop = 128;
  double jitter_min = 0.6;
  double jitter_max = 1.5;
  bool flip = true;
  std::uint64_t seed = 0;
  int log_every = 50;       // steps between step metric lines (0 = off)
  int eval_every = 0;       // epochs between held-out evaluations (0 = off)
  double stop_at_ap = 0.0;  // stop once held-out AP@first threshold reaches this (0 = never)
  int threads = 0;          // 0 = OpenMP default
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | coco-json
  std::string annotations;           // coco-json: path to the annotation file
  std::string images;                // coco-json: image directory (default: next to annotations)
  std::string val_annotations;
  std::string val_images;
  int train_count = 2000;
  int val_count = 200;
  std::uint64_t seed = 0;
  int image_size = 128;
  double min_side = 5.0;
  double max_side = 120.0;
  double max_aspect = 4.0;
  int min_boxes = 1;
  int max_boxes = 5;
};

struct EvalConfig {
  std::vector<double> iou_thresholds{0.5};
  int test_max_side = 128;
};

struct RenderConfig {
  bool class_agnostic = false;
  std::string assign = "all";  // all | best-fit
  double min_overlap = 0.3;
};

struct Config {
  MatrixConfig matrix;
  RangeConfig ranges;
  HeadConfig head;
  RenderConfig render;
  LossWeights loss_weights;
  FocalParams focal;
  DecodeParams decode;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;

  // Desk scale: 128 px crops with the base range scaled by the same 1/4
  // ([6,12] px), so every matrix layer sees objects that fit in a crop.
  static Config desk();
  // Full-scale recipe: 512 px crops, base range [24,48] px, test max side 900.
  static Config full();

  RenderOptions render_options() const;
};

nlohmann::json to_json(const Config& cfg);
// Missing keys keep their desk() defaults; unknown keys throw.
Config config_from_json(const nlohmann::json& j);
Config load_config(const std::string& path);

// "section.key" = value; value is parsed as JSON, falling back to a string.
void apply_override(Config& cfg, const std::string& dotted_key, const std::string& value);

}  // namespace xnet
