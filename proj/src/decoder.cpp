#include "xnet/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "xnet/kernels.hpp"

namespace xnet {

namespace {

auto detection_key(const Detection& d) {
  return std::make_tuple(-d.score, d.class_id, d.box.y1, d.box.x1, d.box.y2, d.box.x2, d.layer);
}

bool detection_before(const Detection& a, const Detection& b) { return detection_key(a) < detection_key(b); }

}  // namespace

std::vector<CornerCandidate> extract_peaks(const Tensor<double>& heat, CornerKind kind, int k, double threshold) {
  const std::size_t classes = heat.dim(0);
  const std::size_t h = heat.dim(1);
  const std::size_t w = heat.dim(2);
  Tensor<double> pooled(heat.shape());
  kernels::max_pool3x3_forward<double>(classes, h, w, heat.data(), pooled.data());

  std::vector<CornerCandidate> out;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t idx = (c * h + y) * w + x;
        const double v = heat[idx];
        if (v < threshold || v != pooled[idx]) continue;
        CornerCandidate cand;
        cand.kind = kind;
        cand.class_id = static_cast<int>(c);
        cand.score = v;
        cand.cell_y = static_cast<int>(y);
        cand.cell_x = static_cast<int>(x);
        cand.pos_y = static_cast<double>(y);
        cand.pos_x = static_cast<double>(x);
        out.push_back(cand);
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const CornerCandidate& a, const CornerCandidate& b) {
    return std::make_tuple(-a.score, a.class_id, a.cell_y, a.cell_x) <
           std::make_tuple(-b.score, b.class_id, b.cell_y, b.cell_x);
  });
  if (k >= 0 && out.size() > static_cast<std::size_t>(k)) out.resize(static_cast<std::size_t>(k));
  return out;
}

CornerCandidate refine(CornerCandidate cand, const Tensor<double>& offsets) {
  const auto y = static_cast<std::size_t>(cand.cell_y);
  const auto x = static_cast<std::size_t>(cand.cell_x);
  cand.pos_x = cand.cell_x + std::clamp(offsets.at(0, y, x), -0.5, 0.5);
  cand.pos_y = cand.cell_y + std::clamp(offsets.at(1, y, x), -0.5, 0.5);
  return cand;
}

CornerCandidate attach_center(CornerCandidate cand, const Tensor<double>& centers, const LayerSpec& spec) {
  const auto y = static_cast<std::size_t>(cand.cell_y);
  const auto x = static_cast<std::size_t>(cand.cell_x);
  cand.center_x = cell_to_corner(cand.pos_x, spec.stride_w, cand.kind) + centers.at(0, y, x) * spec.stride_w;
  cand.center_y = cell_to_corner(cand.pos_y, spec.stride_h, cand.kind) + centers.at(1, y, x) * spec.stride_h;
  return cand;
}

std::vector<Detection> match_corners(const std::vector<CornerCandidate>& tls, const std::vector<CornerCandidate>& brs,
                                     const LayerSpec& spec, const RangeGrid& grid, const DecodeParams& params) {
  std::vector<Detection> out;
  const Range2D& range = grid.at(spec.coord).relaxed;
  const double tau = params.center_tolerance;
  for (const CornerCandidate& tl : tls) {
    const double x1 = cell_to_corner(tl.pos_x, spec.stride_w, CornerKind::top_left);
    const double y1 = cell_to_corner(tl.pos_y, spec.stride_h, CornerKind::top_left);
    for (const CornerCandidate& br : brs) {
      if (br.class_id != tl.class_id) continue;
      const double x2 = cell_to_corner(br.pos_x, spec.stride_w, CornerKind::bottom_right);
      const double y2 = cell_to_corner(br.pos_y, spec.stride_h, CornerKind::bottom_right);
      if (!(x1 < x2 && y1 < y2)) continue;
      const double w = x2 - x1;
      const double h = y2 - y1;
      if (!range.contains(w, h)) continue;
      const double gx = 0.5 * (x1 + x2);
      const double gy = 0.5 * (y1 + y2);
      const bool tl_ok = std::abs(gx - tl.center_x) <= tau * w && std::abs(gy - tl.center_y) <= tau * h;
      const bool br_ok = std::abs(gx - br.center_x) <= tau * w && std::abs(gy - br.center_y) <= tau * h;
      if (!tl_ok || !br_ok) continue;
      out.push_back({tl.class_id, std::sqrt(tl.score * br.score), Box{x1, y1, x2, y2}, spec.coord});
    }
  }
  return out;
}

std::vector<Detection> soft_nms(std::vector<Detection> dets, double sigma, double score_floor) {
  std::map<int, std::vector<Detection>> by_class;
  for (Detection& d : dets) {
    if (d.score >= score_floor) by_class[d.class_id].push_back(d);
  }
  std::vector<Detection> out;
  for (auto& [cls, remaining] : by_class) {
    while (!remaining.empty()) {
      auto best = std::min_element(remaining.begin(), remaining.end(), detection_before);
      const Detection kept = *best;
      remaining.erase(best);
      out.push_back(kept);
      for (Detection& d : remaining) {
        const double o = iou(kept.box, d.box);
        d.score *= std::exp(-(o * o) / sigma);
      }
      std::erase_if(remaining, [score_floor](const Detection& d) { return d.score < score_floor; });
    }
  }
  return out;
}

std::vector<Detection> decode(const std::map<LayerCoord, LayerMaps>& maps, const std::vector<LayerSpec>& specs,
                              const RangeGrid& grid, ImageSize image, const DecodeParams& params) {
  std::vector<Detection> all;
  for (const LayerSpec& spec : specs) {
    const auto it = maps.find(spec.coord);
    if (it == maps.end()) continue;
    const LayerMaps& m = it->second;
    std::vector<CornerCandidate> tls = extract_peaks(m.tl_heat, CornerKind::top_left, params.top_k, params.peak_threshold);
    std::vector<CornerCandidate> brs = extract_peaks(m.br_heat, CornerKind::bottom_right, params.top_k, params.peak_threshold);
    for (auto& c : tls) c = attach_center(refine(c, m.tl_off), m.tl_ctr, spec);
    for (auto& c : brs) c = attach_center(refine(c, m.br_off), m.br_ctr, spec);
    std::vector<Detection> dets = match_corners(tls, brs, spec, grid, params);
    all.insert(all.end(), dets.begin(), dets.end());
  }

  std::vector<Detection> kept = soft_nms(std::move(all), params.nms_sigma, params.score_floor);
  std::vector<Detection> out;
  for (Detection d : kept) {
    d.box.x1 = std::clamp(d.box.x1, 0.0, static_cast<double>(image.width));
    d.box.x2 = std::clamp(d.box.x2, 0.0, static_cast<double>(image.width));
    d.box.y1 = std::clamp(d.box.y1, 0.0, static_cast<double>(image.height));
    d.box.y2 = std::clamp(d.box.y2, 0.0, static_cast<double>(image.height));
    // a clipped box must still fit its source layer
    if (d.box.x1 < d.box.x2 && d.box.y1 < d.box.y2 && grid.at(d.layer).relaxed.contains(d.box.width(), d.box.height()))
      out.push_back(d);
  }
  std::sort(out.begin(), out.end(), detection_before);
  if (params.max_detections >= 0 && out.size() > static_cast<std::size_t>(params.max_detections)) {
    out.resize(static_cast<std::size_t>(params.max_detections));
  }
  return out;
}

}  // namespace xnet
