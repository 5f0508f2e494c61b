#pragma once

#include <map>
#include <vector>

#include "xnet/assignment.hpp"
#include "xnet/geometry.hpp"
#include "xnet/matrix.hpp"

namespace xnet {

struct CornerCandidate {
  CornerKind kind = CornerKind::top_left;
  int class_id = 0;
  double score = 0.0;
  int cell_y = 0;
  int cell_x = 0;
  double pos_y = 0.0;  // cell + clamped offset, feature cells
  double pos_x = 0.0;
  double center_y = 0.0;  // regressed object centre, input pixels
  double center_x = 0.0;
};

struct Detection {
  int class_id = 0;
  double score = 0.0;
  Box box;
  LayerCoord layer;
};

struct DecodeParams {
  int top_k = 32;
  double peak_threshold = 0.05;
  double center_tolerance = 0.3;  // fraction of box extent, per axis
  double nms_sigma = 0.5;
  double score_floor = 0.001;
  int max_detections = 100;
};

// Cells of heat [classes, h, w] that equal their 3x3 max (plateaus keep every
// cell), at or above `threshold`, best `k` by (score desc, class, y, x).
std::vector<CornerCandidate> extract_peaks(const Tensor<double>& heat, CornerKind kind, int k, double threshold);

// pos = cell + offset with the offset clamped to [-0.5, 0.5]. offsets: [2, h, w].
CornerCandidate refine(CornerCandidate cand, const Tensor<double>& offsets);

// Attaches the regressed centre from centers [2, h, w] (cells of displacement).
CornerCandidate attach_center(CornerCandidate cand, const Tensor<double>& centers, const LayerSpec& spec);

// Pairs corners of one layer: same class, TL strictly above-left of BR, size
// inside the layer's relaxed range, and both regressed centres within
// tolerance * extent of the pair's geometric centre on each axis. Score is the
// geometric mean of the two corner scores.
std::vector<Detection> match_corners(const std::vector<CornerCandidate>& tls, const std::vector<CornerCandidate>& brs,
                                     const LayerSpec& spec, const RangeGrid& grid, const DecodeParams& params);

// Gaussian soft-NMS per class: score *= exp(-iou^2 / sigma) against each kept
// box; boxes below score_floor are dropped. Output is in selection order.
std::vector<Detection> soft_nms(std::vector<Detection> dets, double sigma, double score_floor);

struct ImageSize {
  int height = 0;
  int width = 0;
};

// Full per-image decode over every layer present in both `maps` and `specs`.
// Boxes are clipped to the image; a clipped box that no longer fits its
// layer's relaxed range is dropped.
std::vector<Detection> decode(const std::map<LayerCoord, LayerMaps>& maps, const std::vector<LayerSpec>& specs,
                              const RangeGrid& grid, ImageSize image, const DecodeParams& params);

}  // namespace xnet
