#include "xnet/heads.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "xnet/ops.hpp"

namespace xnet {

std::size_t count_positives(const Tensor<double>& heat) {
  return static_cast<std::size_t>(std::count(heat.data().begin(), heat.data().end(), 1.0));
}

std::size_t count_masked(const Tensor<double>& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.data().begin(), mask.data().end(), [](double m) { return m != 0.0; }));
}

template <typename T>
Var<T> focal_loss(const Var<T>& pred, const Tensor<double>& target, const FocalParams& params, double normalizer) {
  require_shape(target.shape(), pred.shape(), "focal_loss target");
  for (double t : target.data()) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("focal_loss target outside [0,1]: " + std::to_string(t));
  }
  const double norm = normalizer > 0.0 ? normalizer : std::max<double>(1.0, static_cast<double>(count_positives(target)));
  const double a = params.alpha;
  const double b = params.beta;
  const double lo = params.eps;
  const double hi = 1.0 - params.eps;

  auto p = pred.value().data();
  auto t = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(static_cast<double>(p[i]), lo, hi);
    if (t[i] == 1.0) {
      total -= std::pow(1.0 - q, a) * std::log(q);
    } else {
      total -= std::pow(1.0 - t[i], b) * std::pow(q, a) * std::log(1.0 - q);
    }
  }

  return Var<T>::from_op(
      "focal_loss", Tensor<T>::scalar(static_cast<T>(total / norm)), {pred},
      [target, a, b, lo, hi, norm](typename Var<T>::Node& self) {
        auto& parent = *self.parents[0];
        auto pv = parent.value.data();
        auto d = parent.grad_buffer().data();
        auto tv = target.data();
        const double g = static_cast<double>(self.grad[0]) / norm;
        for (std::size_t i = 0; i < pv.size(); ++i) {
          const double raw = static_cast<double>(pv[i]);
          if (raw < lo || raw > hi) continue;
          double dl;
          if (tv[i] == 1.0) {
            dl = a * std::pow(1.0 - raw, a - 1.0) * std::log(raw) - std::pow(1.0 - raw, a) / raw;
          } else {
            dl = -std::pow(1.0 - tv[i], b) *
                 (a * std::pow(raw, a - 1.0) * std::log(1.0 - raw) - std::pow(raw, a) / (1.0 - raw));
          }
          d[i] += static_cast<T>(g * dl);
        }
      });
}

template <typename T>
Var<T> smooth_l1(const Var<T>& pred, const Tensor<double>& target, const Tensor<double>& mask, double normalizer) {
  require_shape(target.shape(), pred.shape(), "smooth_l1 target");
  require_shape(mask.shape(), pred.shape(), "smooth_l1 mask");
  const double count = static_cast<double>(count_masked(mask));
  const double norm = normalizer > 0.0 ? normalizer : std::max(1.0, count);

  auto p = pred.value().data();
  auto t = target.data();
  auto m = mask.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (m[i] == 0.0) continue;
    const double d = static_cast<double>(p[i]) - t[i];
    total += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
  }
  return Var<T>::from_op(
      "smooth_l1", Tensor<T>::scalar(static_cast<T>(total / norm)), {pred},
      [target, mask, norm](typename Var<T>::Node& self) {
        auto& parent = *self.parents[0];
        auto pv = parent.value.data();
        auto dv = parent.grad_buffer().data();
        auto tv = target.data();
        auto mv = mask.data();
        const double g = static_cast<double>(self.grad[0]) / norm;
        for (std::size_t i = 0; i < pv.size(); ++i) {
          if (mv[i] == 0.0) continue;
          const double d = static_cast<double>(pv[i]) - tv[i];
          const double dl = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
          dv[i] += static_cast<T>(g * dl);
        }
      });
}

template <typename T>
std::map<LayerCoord, LayerMaps> HeadOutput<T>::image_maps(std::size_t n) const {
  const auto slice = [n](const Var<T>& v) {
    const Shape& s = v.shape();
    const std::size_t per = s[1] * s[2] * s[3];
    const auto& src = v.value().storage();
    std::vector<double> out(src.begin() + static_cast<std::ptrdiff_t>(n * per),
                            src.begin() + static_cast<std::ptrdiff_t>((n + 1) * per));
    return Tensor<double>({s[1], s[2], s[3]}, std::move(out));
  };
  std::map<LayerCoord, LayerMaps> out;
  for (const auto& [coord, m] : layers) {
    out.emplace(coord, LayerMaps{slice(m.tl_heat), slice(m.br_heat), slice(m.tl_off), slice(m.br_off),
                                 slice(m.tl_ctr), slice(m.br_ctr)});
  }
  return out;
}

template <typename T>
Head<T>::Head(const HeadConfig& cfg, int in_channels, std::mt19937_64& rng) : cfg_(cfg) {
  const auto in = static_cast<std::size_t>(in_channels);
  const auto hid = static_cast<std::size_t>(cfg.hidden);
  const auto k = static_cast<std::size_t>(cfg.num_classes);
  conv1_ = Conv2d<T>("head.conv1", ConvSpec::square(in, hid, 3, 1, 1), rng);
  conv2_ = Conv2d<T>("head.conv2", ConvSpec::square(hid, hid, 3, 1, 1), rng);
  tl_heat_ = Conv2d<T>("head.tl_heat", ConvSpec::square(hid, k, 1, 1, 1), rng);
  br_heat_ = Conv2d<T>("head.br_heat", ConvSpec::square(hid, k, 1, 1, 1), rng);
  tl_off_ = Conv2d<T>("head.tl_off", ConvSpec::square(hid, 2, 1, 1, 1), rng);
  br_off_ = Conv2d<T>("head.br_off", ConvSpec::square(hid, 2, 1, 1, 1), rng);
  tl_ctr_ = Conv2d<T>("head.tl_ctr", ConvSpec::square(hid, 2, 1, 1, 1), rng);
  br_ctr_ = Conv2d<T>("head.br_ctr", ConvSpec::square(hid, 2, 1, 1, 1), rng);

  const T prior_bias = static_cast<T>(-std::log((1.0 - cfg.heat_prior) / cfg.heat_prior));
  tl_heat_.bias().mutable_value().fill(prior_bias);
  br_heat_.bias().mutable_value().fill(prior_bias);
  // Small regression heads start near zero output.
  for (Conv2d<T>* c : {&tl_off_, &br_off_, &tl_ctr_, &br_ctr_, &tl_heat_, &br_heat_}) {
    for (T& w : c->weight().mutable_value().data()) w *= T(0.1);
  }
}

template <typename T>
HeadMaps<T> Head<T>::forward_layer(const Var<T>& features) const {
  const Var<T> h = relu(conv2_(relu(conv1_(features))));
  return {sigmoid(tl_heat_(h)), sigmoid(br_heat_(h)), tl_off_(h), br_off_(h), tl_ctr_(h), br_ctr_(h)};
}

template <typename T>
HeadOutput<T> Head<T>::forward(const LayerMatrix<T>& matrix) const {
  HeadOutput<T> out;
  for (const auto& [coord, features] : matrix.layers) out.layers.emplace(coord, forward_layer(features));
  return out;
}

template <typename T>
void Head<T>::collect(std::vector<NamedParam<T>>& out) const {
  for (const Conv2d<T>* c : {&conv1_, &conv2_, &tl_heat_, &br_heat_, &tl_off_, &br_off_, &tl_ctr_, &br_ctr_}) {
    c->collect(out);
  }
}

BatchTargets stack_targets(const std::vector<TargetMaps>& per_image) {
  BatchTargets out;
  if (per_image.empty()) return out;
  const std::size_t n = per_image.size();
  const auto stack = [n, &per_image](LayerCoord coord, auto member) {
    const Tensor<double>& first = member(per_image[0].layers.at(coord));
    Shape s{n};
    s.insert(s.end(), first.shape().begin(), first.shape().end());
    std::vector<double> data;
    data.reserve(shape_numel(s));
    for (const auto& img : per_image) {
      const auto it = img.layers.find(coord);
      if (it == img.layers.end()) throw ShapeError("layers", "image targets missing layer " + coord.str());
      const Tensor<double>& t = member(it->second);
      require_shape(t.shape(), first.shape(), "stack_targets " + coord.str());
      data.insert(data.end(), t.data().begin(), t.data().end());
    }
    return Tensor<double>(std::move(s), std::move(data));
  };
  for (const auto& [coord, unused] : per_image[0].layers) {
    BatchLayerTargets b;
    b.tl_heat = stack(coord, [](const LayerTargets& t) -> const Tensor<double>& { return t.maps.tl_heat; });
    b.br_heat = stack(coord, [](const LayerTargets& t) -> const Tensor<double>& { return t.maps.br_heat; });
    b.tl_off = stack(coord, [](const LayerTargets& t) -> const Tensor<double>& { return t.maps.tl_off; });
    b.br_off = stack(coord, [](const LayerTargets& t) -> const Tensor<double>& { return t.maps.br_off; });
    b.tl_ctr = stack(coord, [](const LayerTargets& t) -> const Tensor<double>& { return t.maps.tl_ctr; });
    b.br_ctr = stack(coord, [](const LayerTargets& t) -> const Tensor<double>& { return t.maps.br_ctr; });
    b.tl_mask = stack(coord, [](const LayerTargets& t) -> const Tensor<double>& { return t.tl_mask; });
    b.br_mask = stack(coord, [](const LayerTargets& t) -> const Tensor<double>& { return t.br_mask; });
    out.emplace(coord, std::move(b));
  }
  return out;
}

template <typename T>
LossBreakdown<T> total_loss(const HeadOutput<T>& out, const BatchTargets& targets, const LossWeights& weights,
                            const FocalParams& focal) {
  if (out.layers.size() != targets.size()) {
    throw std::invalid_argument("total_loss: head has " + std::to_string(out.layers.size()) + " layers, targets " +
                                std::to_string(targets.size()));
  }
  for (const auto& [coord, unused] : out.layers) {
    if (!targets.count(coord)) throw std::invalid_argument("total_loss: no targets for layer " + coord.str());
  }

  double positives = 0.0;
  double masked = 0.0;
  for (const auto& [coord, t] : targets) {
    positives += static_cast<double>(count_positives(t.tl_heat) + count_positives(t.br_heat));
    masked += static_cast<double>(count_masked(t.tl_mask) + count_masked(t.br_mask));
  }
  const double heat_norm = std::max(1.0, positives);
  const double reg_norm = std::max(1.0, masked);

  LossBreakdown<T> result;
  Var<T> heat, offset, center;
  const auto accumulate = [](Var<T>& acc, const Var<T>& term) { acc = acc.defined() ? add(acc, term) : term; };
  for (const auto& [coord, m] : out.layers) {
    const BatchLayerTargets& t = targets.at(coord);
    const Var<T> h = add(focal_loss(m.tl_heat, t.tl_heat, focal, heat_norm), focal_loss(m.br_heat, t.br_heat, focal, heat_norm));
    const Var<T> o = add(smooth_l1(m.tl_off, t.tl_off, t.tl_mask, reg_norm), smooth_l1(m.br_off, t.br_off, t.br_mask, reg_norm));
    const Var<T> c = add(smooth_l1(m.tl_ctr, t.tl_ctr, t.tl_mask, reg_norm), smooth_l1(m.br_ctr, t.br_ctr, t.br_mask, reg_norm));
    result.per_layer[coord] = {static_cast<double>(h.value().item()), static_cast<double>(o.value().item()),
                               static_cast<double>(c.value().item())};
    accumulate(heat, h);
    accumulate(offset, o);
    accumulate(center, c);
  }
  result.heat = static_cast<double>(heat.value().item());
  result.offset = static_cast<double>(offset.value().item());
  result.center = static_cast<double>(center.value().item());
  result.total = add(add(scale(heat, static_cast<T>(weights.heat)), scale(offset, static_cast<T>(weights.offset))),
                     scale(center, static_cast<T>(weights.center)));
  return result;
}

#define XNET_INSTANTIATE_HEADS(T)                                                                                   \
  template Var<T> focal_loss<T>(const Var<T>&, const Tensor<double>&, const FocalParams&, double);                 \
  template Var<T> smooth_l1<T>(const Var<T>&, const Tensor<double>&, const Tensor<double>&, double);               \
  template struct HeadOutput<T>;                                                                                    \
  template class Head<T>;                                                                                           \
  template LossBreakdown<T> total_loss<T>(const HeadOutput<T>&, const BatchTargets&, const LossWeights&,           \
                                          const FocalParams&);

XNET_INSTANTIATE_HEADS(float)
XNET_INSTANTIATE_HEADS(double)

}  // namespace xnet
