#pragma once

#include <compare>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "xnet/nn.hpp"

namespace xnet {

// Matrix position. `i` is the column (width-downsampling exponent + 1) and
// `j` the row (height-downsampling exponent + 1); (1,1) is the largest layer.
struct LayerCoord {
  int i = 1;
  int j = 1;

  auto operator<=>(const LayerCoord&) const = default;
  std::string str() const { return "(" + std::to_string(i) + "," + std::to_string(j) + ")"; }
};

struct MatrixConfig {
  int n = 5;            // diagonal levels
  int base_stride = 8;  // stride of layer (1,1), power of two
  int prune_band = 2;   // keep layers with |i - j| <= prune_band
  int channels = 32;    // common width of every matrix layer
  bool top_down = false;  // add each coarser diagonal, upsampled, into the next finer one
};

void validate(const MatrixConfig& cfg);

bool is_live(LayerCoord c, const MatrixConfig& cfg);

// Live coords in ascending (i, j) order.
std::vector<LayerCoord> live_coords(const MatrixConfig& cfg);

struct LayerSpec {
  LayerCoord coord;
  int stride_w = 1;  // input pixels per feature cell, horizontally
  int stride_h = 1;
  int feat_w = 1;
  int feat_h = 1;
  int channels = 1;
};

// Input extents must be multiples of base_stride * 2^(n-1).
int required_divisor(const MatrixConfig& cfg);
void check_input_extents(const MatrixConfig& cfg, std::size_t height, std::size_t width);

// Specs for the live coords, same order as live_coords().
std::vector<LayerSpec> layer_specs(const MatrixConfig& cfg, std::size_t image_h, std::size_t image_w);

// Small strided-conv pyramid producing the n diagonal layers, each projected
// to cfg.channels by a 1x1 lateral conv, with an optional FPN-style top-down
// sum. Level k has stride base_stride*2^(k-1).
template <typename T>
class Backbone {
 public:
  Backbone(const MatrixConfig& cfg, std::mt19937_64& rng);

  // image: [N,3,H,W] -> n tensors [N, channels, H/s_k, W/s_k], largest first.
  std::vector<Var<T>> forward(const Var<T>& image) const;
  void collect(std::vector<NamedParam<T>>& out) const;

 private:
  MatrixConfig cfg_;
  std::vector<Conv2d<T>> stem_;
  std::vector<Conv2d<T>> down_;    // entry k-1 feeds level k; unused for k = 1
  std::vector<Conv2d<T>> refine_;
  std::vector<Conv2d<T>> lateral_;
};

template <typename T>
struct LayerMatrix {
  std::map<LayerCoord, Var<T>> layers;
};

// Fills in the off-diagonal layers. Every stride-(1,2) step shares one weight
// set and every stride-(2,1) step shares another.
template <typename T>
class MatrixGenerator {
 public:
  MatrixGenerator(const MatrixConfig& cfg, std::mt19937_64& rng);

  // Layer (i,j) with i > j is (i-j) width-halving steps from (j,j); with j > i
  // it is (j-i) height-halving steps from (i,i). Pruned coords are skipped.
  LayerMatrix<T> build(const std::vector<Var<T>>& diagonals) const;

  Conv2d<T>& down_width() { return down_width_; }
  Conv2d<T>& down_height() { return down_height_; }
  void collect(std::vector<NamedParam<T>>& out) const;

 private:
  MatrixConfig cfg_;
  Conv2d<T> down_width_;   // stride (h=1, w=2)
  Conv2d<T> down_height_;  // stride (h=2, w=1)
};

extern template class Backbone<float>;
extern template class Backbone<double>;
extern template class MatrixGenerator<float>;
extern template class MatrixGenerator<double>;

}  // namespace xnet
