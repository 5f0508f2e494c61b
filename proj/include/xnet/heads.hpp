#pragma once

#include <map>
#include <random>
#include <vector>

#include "xnet/assignment.hpp"
#include "xnet/matrix.hpp"
#include "xnet/nn.hpp"

namespace xnet {

// Penalty-reduced focal loss on probabilities. Positives are cells whose
// target is exactly 1:   -(1-p)^alpha log p
// everything else:        -(1-t)^beta p^alpha log(1-p)
// p is clamped to [eps, 1-eps] (zero gradient outside).
struct FocalParams {
  double alpha = 2.0;
  double beta = 4.0;
  double eps = 1e-7;
};

// Summed focal loss divided by `normalizer`, or by the number of positive
// cells (at least 1) when normalizer <= 0. Throws if targets leave [0,1].
template <typename T>
Var<T> focal_loss(const Var<T>& pred, const Tensor<double>& target, const FocalParams& params = {},
                  double normalizer = 0.0);

// Smooth-L1 summed over cells where mask != 0, divided by `normalizer` or by
// the masked count when normalizer <= 0. An empty mask gives 0.
template <typename T>
Var<T> smooth_l1(const Var<T>& pred, const Tensor<double>& target, const Tensor<double>& mask,
                 double normalizer = 0.0);

std::size_t count_positives(const Tensor<double>& heat);
std::size_t count_masked(const Tensor<double>& mask);

template <typename T>
struct HeadMaps {
  Var<T> tl_heat;  // [N, classes, h, w], post-sigmoid
  Var<T> br_heat;
  Var<T> tl_off;   // [N, 2, h, w]
  Var<T> br_off;
  Var<T> tl_ctr;   // [N, 2, h, w], centre minus corner in cells
  Var<T> br_ctr;
};

template <typename T>
struct HeadOutput {
  std::map<LayerCoord, HeadMaps<T>> layers;

  // Values of batch item `n` as double-precision maps, for decoding.
  std::map<LayerCoord, LayerMaps> image_maps(std::size_t n) const;
};

struct HeadConfig {
  int num_classes = 3;
  int hidden = 128;
  double heat_prior = 0.1;  // initial heatmap probability
};

// One sub-network shared by every matrix layer: two 3x3 conv + ReLU, then
// 1x1 convs for each output map. Stride 1 throughout and no pooling.
template <typename T>
class Head {
 public:
  Head(const HeadConfig& cfg, int in_channels, std::mt19937_64& rng);

  HeadMaps<T> forward_layer(const Var<T>& features) const;
  HeadOutput<T> forward(const LayerMatrix<T>& matrix) const;

  void collect(std::vector<NamedParam<T>>& out) const;
  const HeadConfig& config() const { return cfg_; }

 private:
  HeadConfig cfg_;
  Conv2d<T> conv1_;
  Conv2d<T> conv2_;
  Conv2d<T> tl_heat_;
  Conv2d<T> br_heat_;
  Conv2d<T> tl_off_;
  Conv2d<T> br_off_;
  Conv2d<T> tl_ctr_;
  Conv2d<T> br_ctr_;
};

// Rendered targets for a batch, stacked along a leading N axis per layer.
struct BatchLayerTargets {
  Tensor<double> tl_heat, br_heat, tl_off, br_off, tl_ctr, br_ctr, tl_mask, br_mask;
};
using BatchTargets = std::map<LayerCoord, BatchLayerTargets>;

BatchTargets stack_targets(const std::vector<TargetMaps>& per_image);

struct LossWeights {
  double heat = 1.0;
  double offset = 1.0;
  double center = 0.1;
};

struct LayerLoss {
  double heat = 0.0;
  double offset = 0.0;
  double center = 0.0;
};

template <typename T>
struct LossBreakdown {
  Var<T> total;  // weights.heat*heat + weights.offset*offset + weights.center*center
  double heat = 0.0;
  double offset = 0.0;
  double center = 0.0;
  std::map<LayerCoord, LayerLoss> per_layer;  // unweighted, sums to the terms above
};

// Heat loss is normalized by the positive-cell count over all layers and both
// corner kinds; regression losses by the masked-element count over all layers.
template <typename T>
LossBreakdown<T> total_loss(const HeadOutput<T>& out, const BatchTargets& targets, const LossWeights& weights,
                            const FocalParams& focal = {});

extern template class Head<float>;
extern template class Head<double>;

}  // namespace xnet
