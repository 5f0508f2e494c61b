#include "xnet/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <new>
#include <string>
#include <vector>

#include "xnet/tensor.hpp"

namespace xnet {

namespace {

std::size_t out_extent(std::size_t in, std::size_t pad, std::size_t kernel, std::size_t stride, const char* axis) {
  if (stride == 0) throw ShapeError(axis, std::string("stride must be >= 1 on ") + axis);
  const std::ptrdiff_t span = static_cast<std::ptrdiff_t>(in + 2 * pad) - static_cast<std::ptrdiff_t>(kernel);
  if (span < 0) {
    throw ShapeError(axis, std::string("conv2d output extent < 1 on ") + axis + ": input " + std::to_string(in) +
                               ", pad " + std::to_string(pad) + ", kernel " + std::to_string(kernel));
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMajor<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMajor<T>>;

// Eigen's GEMM rounds differently depending on where its operands sit
// relative to a vector-width boundary, so every operand and result goes
// through 64-byte aligned storage. That makes results a function of the
// shapes alone, which bitwise-reproducible training depends on.
constexpr std::size_t kAlign = 64;

template <typename T>
struct AlignedAlloc {
  using value_type = T;
  AlignedAlloc() = default;
  template <typename U>
  AlignedAlloc(const AlignedAlloc<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlign})); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t{kAlign}); }
  bool operator==(const AlignedAlloc&) const { return true; }
};

template <typename T>
using Buf = std::vector<T, AlignedAlloc<T>>;

// Grow-only per-thread scratch so steady-state training does not allocate.
template <typename T>
T* scratch(Buf<T>& buf, std::size_t n) {
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

template <typename T>
bool aligned(const T* p) {
  return reinterpret_cast<std::uintptr_t>(p) % kAlign == 0;
}

template <typename T>
const T* aligned_copy(const T* p, std::size_t n, Buf<T>& buf) {
  if (aligned(p)) return p;
  T* d = scratch(buf, n);
  std::copy_n(p, n, d);
  return d;
}

bool is_pointwise(const ConvGeometry& g) {
  const ConvSpec& s = g.spec;
  return s.kernel_h == 1 && s.kernel_w == 1 && s.stride_h == 1 && s.stride_w == 1 && s.pad_h == 0 && s.pad_w == 0;
}

// col is K x (N*P), row-major, K = C*kh*kw, P = out_h*out_w.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const ConvSpec& s = g.spec;
  const std::size_t P = g.out_h * g.out_w;
  const std::size_t NP = g.batch * P;
  const auto N = static_cast<std::ptrdiff_t>(g.batch);
#pragma omp parallel for schedule(static) if (g.batch > 1)
  for (std::ptrdiff_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      const T* plane = x + (static_cast<std::size_t>(n) * s.in_channels + c) * g.in_h * g.in_w;
      for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
        for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
          const std::size_t row = (c * s.kernel_h + ki) * s.kernel_w + kj;
          T* dst = col + row * NP + static_cast<std::size_t>(n) * P;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.stride_h + ki) - static_cast<std::ptrdiff_t>(s.pad_h);
            T* out_row = dst + oy * g.out_w;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
              std::fill(out_row, out_row + g.out_w, T(0));
              continue;
            }
            const T* in_row = plane + static_cast<std::size_t>(iy) * g.in_w;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s.stride_w + kj) - static_cast<std::ptrdiff_t>(s.pad_w);
              out_row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) ? T(0) : in_row[ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* dx) {
  const ConvSpec& s = g.spec;
  const std::size_t P = g.out_h * g.out_w;
  const std::size_t NP = g.batch * P;
  const auto N = static_cast<std::ptrdiff_t>(g.batch);
#pragma omp parallel for schedule(static) if (g.batch > 1)
  for (std::ptrdiff_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < s.in_channels; ++c) {
      T* plane = dx + (static_cast<std::size_t>(n) * s.in_channels + c) * g.in_h * g.in_w;
      for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
        for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
          const std::size_t row = (c * s.kernel_h + ki) * s.kernel_w + kj;
          const T* src = col + row * NP + static_cast<std::size_t>(n) * P;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.stride_h + ki) - static_cast<std::ptrdiff_t>(s.pad_h);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            T* in_row = plane + static_cast<std::size_t>(iy) * g.in_w;
            const T* src_row = src + oy * g.out_w;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s.stride_w + kj) - static_cast<std::ptrdiff_t>(s.pad_w);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) in_row[ix] += src_row[ox];
            }
          }
        }
      }
    }
  }
}

// NCP <-> C(NP) permutations between the NCHW layout and the GEMM layout.
template <typename T>
void batch_to_gemm(const ConvGeometry& g, std::size_t channels, const T* src, T* dst) {
  const std::size_t P = g.out_h * g.out_w;
  const std::size_t NP = g.batch * P;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy_n(src + (n * channels + c) * P, P, dst + c * NP + n * P);
    }
  }
}

}  // namespace

std::size_t ConvSpec::out_height(std::size_t in_h) const { return out_extent(in_h, pad_h, kernel_h, stride_h, "height"); }
std::size_t ConvSpec::out_width(std::size_t in_w) const { return out_extent(in_w, pad_w, kernel_w, stride_w, "width"); }

ConvSpec ConvSpec::square(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_h,
                          std::size_t stride_w) {
  ConvSpec s;
  s.kernel_h = s.kernel_w = kernel;
  s.pad_h = s.pad_w = kernel / 2;
  s.stride_h = stride_h;
  s.stride_w = stride_w;
  s.in_channels = in;
  s.out_channels = out;
  return s;
}

ConvGeometry ConvGeometry::make(const ConvSpec& spec, std::size_t batch, std::size_t in_h, std::size_t in_w) {
  ConvGeometry g;
  g.spec = spec;
  g.batch = batch;
  g.in_h = in_h;
  g.in_w = in_w;
  g.out_h = spec.out_height(in_h);
  g.out_w = spec.out_width(in_w);
  return g;
}

namespace kernels {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                    std::span<T> y) {
  const ConvSpec& s = g.spec;
  const std::size_t K = s.in_channels * s.kernel_h * s.kernel_w;
  const std::size_t P = g.out_h * g.out_w;
  const std::size_t NP = g.batch * P;
  const auto Cout = static_cast<Eigen::Index>(s.out_channels);

  thread_local Buf<T> col_buf, out_buf, w_buf;
  const T* col = nullptr;
  if (is_pointwise(g) && g.batch == 1) {
    col = aligned_copy(x.data(), x.size(), col_buf);
  } else {
    T* c = scratch(col_buf, K * NP);
    if (is_pointwise(g)) {
      batch_to_gemm(g, s.in_channels, x.data(), c);
    } else {
      im2col(g, x.data(), c);
    }
    col = c;
  }

  ConstMapMat<T> W(aligned_copy(w.data(), w.size(), w_buf), Cout, static_cast<Eigen::Index>(K));
  ConstMapMat<T> C(col, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(NP));
  T* out = scratch(out_buf, s.out_channels * NP);
  MapMat<T> Y(out, Cout, static_cast<Eigen::Index>(NP));
  Y.noalias() = W * C;

  const auto N = static_cast<std::ptrdiff_t>(g.batch);
#pragma omp parallel for schedule(static) if (g.batch > 1)
  for (std::ptrdiff_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      const T* src = out + co * NP + static_cast<std::size_t>(n) * P;
      T* dst = y.data() + (static_cast<std::size_t>(n) * s.out_channels + co) * P;
      const T bias = b[co];
      for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + bias;
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw, std::span<T> db) {
  const ConvSpec& s = g.spec;
  const std::size_t K = s.in_channels * s.kernel_h * s.kernel_w;
  const std::size_t P = g.out_h * g.out_w;
  const std::size_t NP = g.batch * P;
  const auto Cout = static_cast<Eigen::Index>(s.out_channels);

  thread_local Buf<T> col_buf, dy_buf, dcol_buf, w_buf, dw_buf;
  const T* dyg = nullptr;
  if (g.batch > 1) {
    T* d = scratch(dy_buf, s.out_channels * NP);
    batch_to_gemm(g, s.out_channels, dy.data(), d);
    dyg = d;
  } else {
    dyg = aligned_copy(dy.data(), dy.size(), dy_buf);
  }
  ConstMapMat<T> DY(dyg, Cout, static_cast<Eigen::Index>(NP));

  const T* col = nullptr;
  if (is_pointwise(g) && g.batch == 1) {
    col = aligned_copy(x.data(), x.size(), col_buf);
  } else {
    T* c = scratch(col_buf, K * NP);
    if (is_pointwise(g)) {
      batch_to_gemm(g, s.in_channels, x.data(), c);
    } else {
      im2col(g, x.data(), c);
    }
    col = c;
  }
  ConstMapMat<T> C(col, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(NP));

  T* dwt = scratch(dw_buf, dw.size());
  MapMat<T> DW(dwt, Cout, static_cast<Eigen::Index>(K));
  DW.noalias() = DY * C.transpose();
  for (std::size_t k = 0; k < dw.size(); ++k) dw[k] += dwt[k];
  for (std::size_t co = 0; co < s.out_channels; ++co) {
    const T* row = dyg + co * NP;
    T acc = T(0);
    for (std::size_t p = 0; p < NP; ++p) acc += row[p];
    db[co] += acc;
  }

  if (dx.empty()) return;
  ConstMapMat<T> W(aligned_copy(w.data(), w.size(), w_buf), Cout, static_cast<Eigen::Index>(K));
  T* dcol = scratch(dcol_buf, K * NP);
  MapMat<T> DC(dcol, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(NP));
  DC.noalias() = W.transpose() * DY;
  if (is_pointwise(g)) {
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t c = 0; c < s.in_channels; ++c) {
        T* dst = dx.data() + (n * s.in_channels + c) * P;
        const T* src = dcol + c * NP + n * P;
        for (std::size_t p = 0; p < P; ++p) dst[p] += src[p];
      }
    }
  } else {
    col2im_add(g, dcol, dx.data());
  }
}

template <typename T>
void max_pool3x3_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> x, std::span<T> y) {
  const auto np = static_cast<std::ptrdiff_t>(planes);
#pragma omp parallel for schedule(static) if (planes * h * w > 4096)
  for (std::ptrdiff_t p = 0; p < np; ++p) {
    const T* in = x.data() + static_cast<std::size_t>(p) * h * w;
    T* out = y.data() + static_cast<std::size_t>(p) * h * w;
    for (std::size_t r = 0; r < h; ++r) {
      const std::size_t r0 = r == 0 ? 0 : r - 1;
      const std::size_t r1 = std::min(h - 1, r + 1);
      for (std::size_t c = 0; c < w; ++c) {
        const std::size_t c0 = c == 0 ? 0 : c - 1;
        const std::size_t c1 = std::min(w - 1, c + 1);
        T m = in[r0 * w + c0];
        for (std::size_t rr = r0; rr <= r1; ++rr) {
          for (std::size_t cc = c0; cc <= c1; ++cc) m = std::max(m, in[rr * w + cc]);
        }
        out[r * w + c] = m;
      }
    }
  }
}

template <typename T>
void max_pool3x3_backward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> x,
                          std::span<const T> dy, std::span<T> dx) {
  const auto np = static_cast<std::ptrdiff_t>(planes);
#pragma omp parallel for schedule(static) if (planes * h * w > 4096)
  for (std::ptrdiff_t p = 0; p < np; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * h * w;
    const T* in = x.data() + base;
    for (std::size_t r = 0; r < h; ++r) {
      const std::size_t r0 = r == 0 ? 0 : r - 1;
      const std::size_t r1 = std::min(h - 1, r + 1);
      for (std::size_t c = 0; c < w; ++c) {
        const std::size_t c0 = c == 0 ? 0 : c - 1;
        const std::size_t c1 = std::min(w - 1, c + 1);
        std::size_t best = r0 * w + c0;
        for (std::size_t rr = r0; rr <= r1; ++rr) {
          for (std::size_t cc = c0; cc <= c1; ++cc) {
            if (in[rr * w + cc] > in[best]) best = rr * w + cc;
          }
        }
        dx[base + best] += dy[base + r * w + c];
      }
    }
  }
}

template <typename T>
void relu_forward(std::span<const T> x, std::span<T> y) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for simd schedule(static) if (n > 65536)
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void sigmoid_forward(std::span<const T> x, std::span<T> y) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static) if (n > 65536)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      y[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
}

#define XNET_INSTANTIATE_KERNELS(T)                                                                          \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,              \
                                  std::span<const T>, std::span<T>);                                        \
  template void conv2d_backward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,             \
                                   std::span<const T>, std::span<T>, std::span<T>, std::span<T>);           \
  template void max_pool3x3_forward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,           \
                                       std::span<T>);                                                       \
  template void max_pool3x3_backward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,          \
                                        std::span<const T>, std::span<T>);                                  \
  template void relu_forward<T>(std::span<const T>, std::span<T>);                                          \
  template void sigmoid_forward<T>(std::span<const T>, std::span<T>);

XNET_INSTANTIATE_KERNELS(float)
XNET_INSTANTIATE_KERNELS(double)

}  // namespace kernels

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                    std::span<T> y) {
  const ConvSpec& s = g.spec;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          T acc = b[co];
          for (std::size_t c = 0; c < s.in_channels; ++c) {
            for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.stride_h + ki) - static_cast<std::ptrdiff_t>(s.pad_h);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
              for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s.stride_w + kj) - static_cast<std::ptrdiff_t>(s.pad_w);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                acc += x[((n * s.in_channels + c) * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)] *
                       w[((co * s.in_channels + c) * s.kernel_h + ki) * s.kernel_w + kj];
              }
            }
          }
          y[((n * s.out_channels + co) * g.out_h + oy) * g.out_w + ox] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw, std::span<T> db) {
  const ConvSpec& s = g.spec;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const T grad = dy[((n * s.out_channels + co) * g.out_h + oy) * g.out_w + ox];
          db[co] += grad;
          for (std::size_t c = 0; c < s.in_channels; ++c) {
            for (std::size_t ki = 0; ki < s.kernel_h; ++ki) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.stride_h + ki) - static_cast<std::ptrdiff_t>(s.pad_h);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
              for (std::size_t kj = 0; kj < s.kernel_w; ++kj) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s.stride_w + kj) - static_cast<std::ptrdiff_t>(s.pad_w);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                const std::size_t xi = ((n * s.in_channels + c) * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix);
                const std::size_t wi = ((co * s.in_channels + c) * s.kernel_h + ki) * s.kernel_w + kj;
                dw[wi] += grad * x[xi];
                if (!dx.empty()) dx[xi] += grad * w[wi];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void max_pool3x3_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> x, std::span<T> y) {
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        T m = -std::numeric_limits<T>::infinity();
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r) + dr;
            const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c) + dc;
            if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) || cc >= static_cast<std::ptrdiff_t>(w)) continue;
            m = std::max(m, x[(p * h + static_cast<std::size_t>(rr)) * w + static_cast<std::size_t>(cc)]);
          }
        }
        y[(p * h + r) * w + c] = m;
      }
    }
  }
}

template <typename T>
void max_pool3x3_backward(std::size_t planes, std::size_t h, std::size_t w, std::span<const T> x,
                          std::span<const T> dy, std::span<T> dx) {
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        std::size_t best = 0;
        bool have = false;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r) + dr;
            const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c) + dc;
            if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) || cc >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = (p * h + static_cast<std::size_t>(rr)) * w + static_cast<std::size_t>(cc);
            if (!have || x[idx] > x[best]) {
              best = idx;
              have = true;
            }
          }
        }
        dx[best] += dy[(p * h + r) * w + c];
      }
    }
  }
}

#define XNET_INSTANTIATE_REFERENCE(T)                                                                        \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,              \
                                  std::span<const T>, std::span<T>);                                        \
  template void conv2d_backward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,             \
                                   std::span<const T>, std::span<T>, std::span<T>, std::span<T>);           \
  template void max_pool3x3_forward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,           \
                                       std::span<T>);                                                       \
  template void max_pool3x3_backward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,          \
                                        std::span<const T>, std::span<T>);

XNET_INSTANTIATE_REFERENCE(float)
XNET_INSTANTIATE_REFERENCE(double)

}  // namespace reference

}  // namespace xnet
