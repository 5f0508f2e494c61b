#pragma once

#include <cstddef>
#include <span>

namespace xnet {

struct ConvSpec {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 1;
  std::size_t pad_w = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  // floor((in + 2*pad - kernel) / stride) + 1; throws ShapeError if < 1.
  std::size_t out_height(std::size_t in_h) const;
  std::size_t out_width(std::size_t in_w) const;

  static ConvSpec square(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_h,
                         std::size_t stride_w);
};

// Extents of one conv2d call over an NCHW batch.
struct ConvGeometry {
  ConvSpec spec;
  std::size_t batch = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_h = 1;
  std::size_t out_w = 1;

  static ConvGeometry make(const ConvSpec& spec, std::size_t batch, std::size_t in_h, std::size_t in_w);
  std::size_t weight_size() const {
    return spec.out_channels * spec.in_channels * spec.kernel_h * spec.kernel_w;
  }
  std::size_t input_size() const { return batch * spec.in_channels * in_h * in_w; }
  std::size_t output_size() const { return batch * spec.out_channels * out_h * out_w; }
};

// OpenMP-parallel kernels used by the autograd ops. Convolutions lower to
// im2col + one GEMM per call; elementwise and pooling loops split over planes.
namespace kernels {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                    std::span<T> y);

// Accumulates (+=) into dx, dw, db. dx may be empty to skip the input gradient.
template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw, std::span<T> db);

// 3x3 window, stride 1, out-of-bounds cells ignored. `planes` = N*C.
template <typename T>
void max_pool3x3_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> x, std::span<T> y);

// Routes each output gradient to the first maximal input in row-major window order.
template <typename T>
void max_pool3x3_backward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> x,
                          std::span<const T> dy, std::span<T> dx);

template <typename T>
void relu_forward(std::span<const T> x, std::span<T> y);

template <typename T>
void sigmoid_forward(std::span<const T> x, std::span<T> y);

}  // namespace kernels

// Serial nested-loop versions with identical contracts; kept as the oracle
// for the parallel kernels and as the benchmark baseline.
namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                    std::span<T> y);

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw, std::span<T> db);

template <typename T>
void max_pool3x3_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> x, std::span<T> y);

template <typename T>
void max_pool3x3_backward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> x,
                          std::span<const T> dy, std::span<T> dx);

}  // namespace reference

}  // namespace xnet
