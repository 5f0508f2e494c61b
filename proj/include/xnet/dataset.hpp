#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "xnet/assignment.hpp"
#include "xnet/tensor.hpp"

namespace xnet {

// Bad or unreadable input data (maps to exit code 2 in the CLI).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Sample {
  Tensor<float> image;  // [3, H, W], values in [0, 1]
  std::vector<GroundTruthBox> boxes;
  std::int64_t image_id = 0;

  std::size_t height() const { return image.dim(1); }
  std::size_t width() const { return image.dim(2); }
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> warnings;
  int num_classes = 3;
};

// Classes: 0 filled rectangle, 1 outlined rectangle, 2 cross.
struct SyntheticSpec {
  int image_size = 128;
  int num_classes = 3;
  double min_side = 5.0;    // geometric-mean side sqrt(w*h) log-uniform, each side kept in [min, max]
  double max_side = 120.0;
  double max_aspect = 4.0;  // w/h log-uniform in [1/max_aspect, max_aspect]
  int min_boxes = 1;
  int max_boxes = 5;
  // Each box keeps a clear gap of halo * (sum of both sides) on some axis
  // from every other box.
  double halo = 0.3;
};

// Deterministic in (count, seed, spec); image k only depends on (seed, k).
// Ids are first_id, first_id+1, ...
Dataset gen_synthetic(int count, std::uint64_t seed, const SyntheticSpec& spec, std::int64_t first_id = 0);

// COCO-style "images"/"annotations" (bbox = [x, y, w, h]) -> corner boxes.
// Category ids map to classes in ascending order of the "categories" array
// (or are used directly when it is absent). Images come from `image_dir`
// (default: the annotation file's directory); a missing image is a warning
// and the image is skipped. Only images with at least one usable annotation
// become samples. With load_pixels = false images are not read and samples
// carry a zero [3, height, width] tensor from the declared size.
// Throws DataError on malformed JSON, with the line number.
Dataset load_coco_json(const std::string& path, const std::string& image_dir = "", bool load_pixels = true);

// Writes <dir>/images/<id>.png and <dir>/annotations.json.
void write_coco(const Dataset& data, const std::string& dir);

Tensor<float> read_png(const std::string& path);
void write_png(const std::string& path, const Tensor<float>& image);

// Bilinear resize of a [C, H, W] image (half-pixel centres).
Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w);

struct AugmentConfig {
  int crop = 128;
  double jitter_min = 0.6;
  double jitter_max = 1.5;
  bool flip = true;
};

struct Augmented {
  Sample sample;
  std::size_t dropped = 0;  // boxes cut below 4 px on a side by the crop
};

// Scale jitter, random crop (zero padding when the image is smaller than the
// crop) and horizontal flip. Retained boxes are clipped to the crop.
Augmented augment(const Sample& in, const AugmentConfig& cfg, std::mt19937_64& rng);

}  // namespace xnet
