#include "xnet/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace xnet {

namespace {

// Distance from v to [lo, hi] in log space; zero inside.
double log_gap(double v, double lo, double hi) {
  if (v < lo) return std::log(lo / v);
  if (v > hi) return std::log(v / hi);
  return 0.0;
}

double log_centre_dist(double v, double lo, double hi) { return std::abs(std::log(v) - 0.5 * std::log(lo * hi)); }

void splat(Tensor<double>& heat, int channel, int cy, int cx, int radius) {
  const double sigma = (2.0 * radius + 1.0) / 6.0;
  const int h = static_cast<int>(heat.dim(1));
  const int w = static_cast<int>(heat.dim(2));
  double* plane = heat.raw() + static_cast<std::size_t>(channel) * static_cast<std::size_t>(h * w);
  for (int dy = -radius; dy <= radius; ++dy) {
    const int y = cy + dy;
    if (y < 0 || y >= h) continue;
    for (int dx = -radius; dx <= radius; ++dx) {
      const int x = cx + dx;
      if (x < 0 || x >= w) continue;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      double& cell = plane[y * w + x];
      cell = std::max(cell, v);
    }
  }
}

}  // namespace

void validate(const RangeConfig& cfg) {
  const Range2D& b = cfg.base;
  if (!(b.w_min > 0.0 && b.w_min < b.w_max && b.h_min > 0.0 && b.h_min < b.h_max)) {
    throw std::invalid_argument("range base must satisfy 0 < min < max on both axes");
  }
  if (!(cfg.lo_mult > 0.0 && cfg.lo_mult < 1.0 && cfg.hi_mult > 1.0)) {
    throw std::invalid_argument("range multipliers must satisfy 0 < lo_mult < 1 < hi_mult");
  }
}

RangeGrid compute_ranges(const RangeConfig& cfg, const MatrixConfig& matrix) {
  validate(cfg);
  std::map<LayerCoord, LayerRange> ranges;
  for (LayerCoord c : live_coords(matrix)) {
    const double sw = std::ldexp(1.0, c.i - 1);
    const double sh = std::ldexp(1.0, c.j - 1);
    LayerRange r;
    r.raw = {cfg.base.w_min * sw, cfg.base.w_max * sw, cfg.base.h_min * sh, cfg.base.h_max * sh};
    r.relaxed = r.raw.relaxed(cfg.lo_mult, cfg.hi_mult);
    ranges.emplace(c, r);
  }
  return RangeGrid(matrix, cfg, std::move(ranges));
}

std::vector<LayerCoord> assign_box(const GroundTruthBox& box, const RangeGrid& grid) {
  std::vector<LayerCoord> out;
  for (const auto& [coord, range] : grid.ranges()) {
    if (range.relaxed.contains(box.width(), box.height())) out.push_back(coord);
  }
  return out;
}

Assignment assign_with_clamp(const GroundTruthBox& box, const RangeGrid& grid, AssignMode mode) {
  Assignment a;
  a.layers = assign_box(box, grid);
  const double w = box.width();
  const double h = box.height();
  if (a.layers.empty()) {
    a.clamped = true;
    double best = std::numeric_limits<double>::infinity();
    LayerCoord pick{};
    for (const auto& [coord, range] : grid.ranges()) {
      const double gw = log_gap(w, range.relaxed.w_min, range.relaxed.w_max);
      const double gh = log_gap(h, range.relaxed.h_min, range.relaxed.h_max);
      const double d = gw * gw + gh * gh;
      if (d < best) {
        best = d;
        pick = coord;
      }
    }
    a.layers = {pick};
    return a;
  }
  if (mode == AssignMode::best_fit && a.layers.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    LayerCoord pick{};
    for (LayerCoord c : a.layers) {
      const Range2D& r = grid.at(c).raw;
      const double dw = log_centre_dist(w, r.w_min, r.w_max);
      const double dh = log_centre_dist(h, r.h_min, r.h_max);
      const double d = dw * dw + dh * dh;
      if (d < best) {
        best = d;
        pick = c;
      }
    }
    a.layers = {pick};
  }
  return a;
}

double gaussian_radius(double w, double h, double m) {
  // Both corners shifted the same way: overlap (w-r)(h-r) against union.
  const double b1 = w + h;
  const double c1 = w * h * (1.0 - m) / (1.0 + m);
  const double r1 = (b1 - std::sqrt(b1 * b1 - 4.0 * c1)) / 2.0;
  // Both corners pulled inward: (w-2r)(h-2r) >= m w h.
  const double b2 = 2.0 * (w + h);
  const double c2 = (1.0 - m) * w * h;
  const double r2 = (b2 - std::sqrt(b2 * b2 - 16.0 * c2)) / 8.0;
  // Both corners pushed outward: w h >= m (w+2r)(h+2r).
  const double b3 = 2.0 * m * (w + h);
  const double c3 = (m - 1.0) * w * h;
  const double r3 = (-b3 + std::sqrt(b3 * b3 - 16.0 * m * c3)) / (8.0 * m);
  return std::max(0.0, std::min({r1, r2, r3}));
}

LayerTargets empty_targets(const LayerSpec& spec, int heat_channels) {
  const auto h = static_cast<std::size_t>(spec.feat_h);
  const auto w = static_cast<std::size_t>(spec.feat_w);
  const auto k = static_cast<std::size_t>(heat_channels);
  LayerTargets t;
  t.maps.tl_heat = Tensor<double>({k, h, w});
  t.maps.br_heat = Tensor<double>({k, h, w});
  t.maps.tl_off = Tensor<double>({2, h, w});
  t.maps.br_off = Tensor<double>({2, h, w});
  t.maps.tl_ctr = Tensor<double>({2, h, w});
  t.maps.br_ctr = Tensor<double>({2, h, w});
  t.tl_mask = Tensor<double>({2, h, w});
  t.br_mask = Tensor<double>({2, h, w});
  return t;
}

TargetMaps render_targets(const std::vector<GroundTruthBox>& boxes, const std::vector<LayerSpec>& specs,
                          const RangeGrid& grid, const RenderOptions& options) {
  const int heat_channels = options.class_agnostic ? 1 : options.num_classes;
  TargetMaps out;
  std::map<LayerCoord, const LayerSpec*> by_coord;
  for (const LayerSpec& s : specs) {
    by_coord.emplace(s.coord, &s);
    out.layers.emplace(s.coord, empty_targets(s, heat_channels));
  }
  out.report.boxes = boxes.size();

  for (std::size_t b = 0; b < boxes.size(); ++b) {
    const GroundTruthBox& box = boxes[b];
    if (!(box.width() > 0.0 && box.height() > 0.0)) {
      ++out.report.skipped;
      out.report.warnings.push_back("box " + std::to_string(b) + " is degenerate");
      continue;
    }
    const int cls = options.class_agnostic ? 0 : box.class_id;
    if (cls < 0 || cls >= heat_channels) {
      throw std::invalid_argument("box " + std::to_string(b) + " has class " + std::to_string(box.class_id) +
                                  " outside [0, " + std::to_string(heat_channels) + ")");
    }
    const Assignment a = assign_with_clamp(box, grid, options.mode);
    if (a.clamped) ++out.report.clamped;

    for (LayerCoord coord : a.layers) {
      auto it = by_coord.find(coord);
      if (it == by_coord.end()) continue;
      const LayerSpec& spec = *it->second;
      const CellCoord tlx = corner_to_cell(box.x1, spec.stride_w, CornerKind::top_left);
      const CellCoord tly = corner_to_cell(box.y1, spec.stride_h, CornerKind::top_left);
      const CellCoord brx = corner_to_cell(box.x2, spec.stride_w, CornerKind::bottom_right);
      const CellCoord bry = corner_to_cell(box.y2, spec.stride_h, CornerKind::bottom_right);
      const auto inside = [&](const CellCoord& x, const CellCoord& y) {
        return x.cell >= 0 && x.cell < spec.feat_w && y.cell >= 0 && y.cell < spec.feat_h;
      };
      if (!inside(tlx, tly) || !inside(brx, bry)) {
        ++out.report.skipped;
        out.report.warnings.push_back("box " + std::to_string(b) + " has a corner outside layer " + coord.str());
        continue;
      }
      ++out.report.assignments;

      LayerTargets& t = out.layers.at(coord);
      const double w_cells = box.width() / spec.stride_w;
      const double h_cells = box.height() / spec.stride_h;
      const int radius = static_cast<int>(std::floor(gaussian_radius(w_cells, h_cells, options.min_overlap)));
      splat(t.maps.tl_heat, cls, tly.cell, tlx.cell, radius);
      splat(t.maps.br_heat, cls, bry.cell, brx.cell, radius);

      const double cx = 0.5 * (box.x1 + box.x2);
      const double cy = 0.5 * (box.y1 + box.y2);
      const auto write = [&](Tensor<double>& off, Tensor<double>& ctr, Tensor<double>& mask, const CellCoord& x,
                             const CellCoord& y, double px, double py) {
        const auto ux = static_cast<std::size_t>(x.cell);
        const auto uy = static_cast<std::size_t>(y.cell);
        if (mask.at(0, uy, ux) != 0.0) ++out.report.collisions;
        off.at(0, uy, ux) = x.offset;
        off.at(1, uy, ux) = y.offset;
        ctr.at(0, uy, ux) = (cx - px) / spec.stride_w;
        ctr.at(1, uy, ux) = (cy - py) / spec.stride_h;
        mask.at(0, uy, ux) = 1.0;
        mask.at(1, uy, ux) = 1.0;
      };
      write(t.maps.tl_off, t.maps.tl_ctr, t.tl_mask, tlx, tly, box.x1, box.y1);
      write(t.maps.br_off, t.maps.br_ctr, t.br_mask, brx, bry, box.x2, box.y2);
    }
  }
  return out;
}

}  // namespace xnet
