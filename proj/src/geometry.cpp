#include "xnet/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace xnet {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

CellCoord corner_to_cell(double coord, int stride, CornerKind kind) {
  double pos = coord / stride;
  if (kind == CornerKind::bottom_right) pos -= 1.0;
  const double cell = std::round(pos);
  return {static_cast<int>(cell), pos - cell};
}

double cell_to_corner(double refined, int stride, CornerKind kind) {
  const double pos = kind == CornerKind::bottom_right ? refined + 1.0 : refined;
  return pos * stride;
}

}  // namespace xnet
