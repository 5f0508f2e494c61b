#include "xnet/ops.hpp"

namespace xnet {

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weights, const Var<T>& bias, const ConvSpec& spec) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw ShapeError("rank", "conv2d input must be [N,C,H,W], got " + shape_str(xs));
  if (xs[1] != spec.in_channels) {
    throw ShapeError("channels", "conv2d input channels " + std::to_string(xs[1]) + " != spec in_channels " +
                                     std::to_string(spec.in_channels));
  }
  require_shape(weights.shape(), {spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w}, "conv2d weights");
  require_shape(bias.shape(), {spec.out_channels}, "conv2d bias");

  const ConvGeometry g = ConvGeometry::make(spec, xs[0], xs[2], xs[3]);
  Tensor<T> out({g.batch, spec.out_channels, g.out_h, g.out_w});
  kernels::conv2d_forward<T>(g, x.value().data(), weights.value().data(), bias.value().data(), out.data());

  return Var<T>::from_op("conv2d", std::move(out), {x, weights, bias}, [g](typename Var<T>::Node& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    std::span<T> dx;
    if (px.requires_grad) dx = px.grad_buffer().data();
    // Weight/bias grads are always computed; throw them away when untracked.
    Tensor<T> scratch_w, scratch_b;
    std::span<T> dw = pw.requires_grad ? pw.grad_buffer().data() : (scratch_w = Tensor<T>(pw.value.shape())).data();
    std::span<T> db = pb.requires_grad ? pb.grad_buffer().data() : (scratch_b = Tensor<T>(pb.value.shape())).data();
    kernels::conv2d_backward<T>(g, px.value.data(), pw.value.data(), self.grad.data(), dx, dw, db);
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  kernels::relu_forward<T>(x.value().data(), out.data());
  return Var<T>::from_op("relu", std::move(out), {x}, [](typename Var<T>::Node& self) {
    auto& p = *self.parents[0];
    auto dx = p.grad_buffer().data();
    auto xv = p.value.data();
    auto dy = self.grad.data();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] > T(0)) dx[i] += dy[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x.shape());
  kernels::sigmoid_forward<T>(x.value().data(), out.data());
  return Var<T>::from_op("sigmoid", std::move(out), {x}, [](typename Var<T>::Node& self) {
    auto& p = *self.parents[0];
    auto dx = p.grad_buffer().data();
    auto s = self.value.data();
    auto dy = self.grad.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * s[i] * (T(1) - s[i]);
  });
}

template <typename T>
Var<T> max_pool_3x3_stride1(const Var<T>& x) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw ShapeError("rank", "max_pool_3x3_stride1 needs at least [H,W], got " + shape_str(xs));
  const std::size_t h = xs[xs.size() - 2];
  const std::size_t w = xs[xs.size() - 1];
  const std::size_t planes = x.value().numel() / (h * w);
  Tensor<T> out(xs);
  kernels::max_pool3x3_forward<T>(planes, h, w, x.value().data(), out.data());
  return Var<T>::from_op("max_pool_3x3_stride1", std::move(out), {x}, [planes, h, w](typename Var<T>::Node& self) {
    auto& p = *self.parents[0];
    kernels::max_pool3x3_backward<T>(planes, h, w, p.value.data(), self.grad.data(), p.grad_buffer().data());
  });
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw ShapeError("rank", "upsample2x needs at least [H,W], got " + shape_str(xs));
  const std::size_t h = xs[xs.size() - 2];
  const std::size_t w = xs[xs.size() - 1];
  const std::size_t planes = x.value().numel() / (h * w);
  Shape os = xs;
  os[os.size() - 2] = 2 * h;
  os[os.size() - 1] = 2 * w;
  Tensor<T> out(os);
  const T* src = x.value().raw();
  T* dst = out.raw();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t c = 0; c < 2 * w; ++c) dst[(p * 2 * h + y) * 2 * w + c] = src[(p * h + y / 2) * w + c / 2];
  return Var<T>::from_op("upsample2x", std::move(out), {x}, [planes, h, w](typename Var<T>::Node& self) {
    T* d = self.parents[0]->grad_buffer().raw();
    const T* dy = self.grad.raw();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t c = 0; c < 2 * w; ++c) d[(p * h + y / 2) * w + c / 2] += dy[(p * 2 * h + y) * 2 * w + c];
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_shape(b.shape(), a.shape(), "add");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return Var<T>::from_op("add", std::move(out), {a, b}, [](typename Var<T>::Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto d = p->grad_buffer().data();
      auto dy = self.grad.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v *= factor;
  return Var<T>::from_op("scale", std::move(out), {x}, [factor](typename Var<T>::Node& self) {
    auto d = self.parents[0]->grad_buffer().data();
    auto dy = self.grad.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * dy[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = T(0);
  for (T v : x.value().data()) acc += v;
  return Var<T>::from_op("sum", Tensor<T>::scalar(acc), {x}, [](typename Var<T>::Node& self) {
    const T g = self.grad[0];
    for (T& d : self.parents[0]->grad_buffer().data()) d += g;
  });
}

#define XNET_INSTANTIATE_OPS(T)                                                               \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, const ConvSpec&);  \
  template Var<T> relu<T>(const Var<T>&);                                                   \
  template Var<T> sigmoid<T>(const Var<T>&);                                                \
  template Var<T> max_pool_3x3_stride1<T>(const Var<T>&);                                   \
  template Var<T> upsample2x<T>(const Var<T>&);                                             \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                     \
  template Var<T> scale<T>(const Var<T>&, T);                                               \
  template Var<T> sum<T>(const Var<T>&);

XNET_INSTANTIATE_OPS(float)
XNET_INSTANTIATE_OPS(double)

}  // namespace xnet
