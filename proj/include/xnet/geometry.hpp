#pragma once

namespace xnet {

struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() > 0.0 && height() > 0.0 ? width() * height() : 0.0; }
};

double iou(const Box& a, const Box& b);

enum class CornerKind { top_left, bottom_right };

// A corner coordinate expressed as a feature cell plus a sub-cell residual.
struct CellCoord {
  int cell = 0;
  double offset = 0.0;  // in [-0.5, 0.5]
};

// Pixel <-> feature-cell mapping along one axis. A top-left corner sits on
// the leading edge of its cell (cell + offset = x / stride); a bottom-right
// corner on the trailing edge (cell + offset = x / stride - 1). Both kinds of
// corner of a box at least stride/2 wide land inside [-0.5, extent - 0.5],
// and the mapping is mirror-symmetric under a horizontal flip.
CellCoord corner_to_cell(double coord, int stride, CornerKind kind);
double cell_to_corner(double refined, int stride, CornerKind kind);

}  // namespace xnet
