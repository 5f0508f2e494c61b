#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "xnet/geometry.hpp"
#include "xnet/matrix.hpp"
#include "xnet/tensor.hpp"

namespace xnet {

struct GroundTruthBox {
  int class_id = 0;
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  Box box() const { return {x1, y1, x2, y2}; }
};

// Admissible object widths/heights of one layer, in input pixels.
struct Range2D {
  double w_min = 0.0;
  double w_max = 0.0;
  double h_min = 0.0;
  double h_max = 0.0;

  bool contains(double w, double h) const { return w >= w_min && w <= w_max && h >= h_min && h <= h_max; }
  Range2D relaxed(double lo_mult, double hi_mult) const {
    return {w_min * lo_mult, w_max * hi_mult, h_min * lo_mult, h_max * hi_mult};
  }
};

struct RangeConfig {
  Range2D base{24.0, 48.0, 24.0, 48.0};  // layer (1,1)
  double lo_mult = 0.8;
  double hi_mult = 1.3;
};

void validate(const RangeConfig& cfg);

struct LayerRange {
  Range2D raw;
  Range2D relaxed;
};

class RangeGrid {
 public:
  RangeGrid(MatrixConfig matrix, RangeConfig cfg, std::map<LayerCoord, LayerRange> ranges)
      : matrix_(matrix), cfg_(cfg), ranges_(std::move(ranges)) {}

  const LayerRange& at(LayerCoord c) const { return ranges_.at(c); }
  bool has(LayerCoord c) const { return ranges_.count(c) != 0; }
  const std::map<LayerCoord, LayerRange>& ranges() const { return ranges_; }
  const MatrixConfig& matrix() const { return matrix_; }
  const RangeConfig& config() const { return cfg_; }

 private:
  MatrixConfig matrix_;
  RangeConfig cfg_;
  std::map<LayerCoord, LayerRange> ranges_;
};

// Doubles the width bounds per column and the height bounds per row starting
// from the base range; live coords only.
RangeGrid compute_ranges(const RangeConfig& cfg, const MatrixConfig& matrix);

// Every live coord whose relaxed range contains the box size. May be empty.
std::vector<LayerCoord> assign_box(const GroundTruthBox& box, const RangeGrid& grid);

enum class AssignMode { all_containing, best_fit };

struct Assignment {
  std::vector<LayerCoord> layers;
  bool clamped = false;
};

// assign_box plus the fallbacks used for training: boxes outside every
// relaxed range go to the live layer nearest in log-size space, so tiny boxes
// land on (1,1), huge ones on (n,n), and extreme aspect ratios on the nearest
// surviving off-diagonal layer. best_fit keeps only the containing layer whose
// raw range centre is nearest in log space.
Assignment assign_with_clamp(const GroundTruthBox& box, const RangeGrid& grid, AssignMode mode);

// Per-layer maps shared by rendered targets and network outputs (one image).
// heat: [classes, h, w]; off/ctr: [2, h, w] with channel 0 = x, 1 = y.
struct LayerMaps {
  Tensor<double> tl_heat;
  Tensor<double> br_heat;
  Tensor<double> tl_off;
  Tensor<double> br_off;
  Tensor<double> tl_ctr;
  Tensor<double> br_ctr;
};

struct LayerTargets {
  LayerMaps maps;
  Tensor<double> tl_mask;  // [2, h, w], 1 where tl_off/tl_ctr carry targets
  Tensor<double> br_mask;
};

struct RenderOptions {
  int num_classes = 3;
  bool class_agnostic = false;
  AssignMode mode = AssignMode::all_containing;
  double min_overlap = 0.3;  // Gaussian radius keeps corners within this IoU
};

struct RenderReport {
  std::size_t boxes = 0;
  std::size_t assignments = 0;  // (box, layer) pairs rendered
  std::size_t clamped = 0;
  std::size_t skipped = 0;      // (box, layer) pairs with a corner off the map
  std::size_t collisions = 0;   // corner cells written twice in one layer
  std::vector<std::string> warnings;
};

struct TargetMaps {
  std::map<LayerCoord, LayerTargets> layers;
  RenderReport report;
};

// Largest corner displacement r (in cells) such that moving both corners of a
// w x h box by up to r keeps IoU >= min_overlap in the translate, shrink and
// grow cases.
double gaussian_radius(double w, double h, double min_overlap);

TargetMaps render_targets(const std::vector<GroundTruthBox>& boxes, const std::vector<LayerSpec>& specs,
                          const RangeGrid& grid, const RenderOptions& options);

// Zero-valued maps for one layer.
LayerTargets empty_targets(const LayerSpec& spec, int heat_channels);

}  // namespace xnet
