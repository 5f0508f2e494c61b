#pragma once

#include "xnet/autograd.hpp"
#include "xnet/kernels.hpp"

namespace xnet {

// x: [N, C, H, W], weights: [C', C, kh, kw], bias: [C'].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weights, const Var<T>& bias, const ConvSpec& spec);

// Subgradient 0 at exactly 0.
template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

// Same-shape 3x3 max filter over the two trailing axes (pad 1, stride 1).
template <typename T>
Var<T> max_pool_3x3_stride1(const Var<T>& x);

// Nearest-neighbour x2 over the two trailing axes: [.., H, W] -> [.., 2H, 2W].
template <typename T>
Var<T> upsample2x(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

// Sum of all elements, as a one-element tensor.
template <typename T>
Var<T> sum(const Var<T>& x);

}  // namespace xnet
