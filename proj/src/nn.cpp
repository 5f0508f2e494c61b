#include "xnet/nn.hpp"

#include <cmath>

namespace xnet {

template <typename T>
Conv2d<T>::Conv2d(std::string name, const ConvSpec& spec, std::mt19937_64& rng)
    : name_(std::move(name)), spec_(spec) {
  Tensor<T> w({spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w});
  const double fan_in = static_cast<double>(spec.in_channels * spec.kernel_h * spec.kernel_w);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (T& v : w.data()) v = static_cast<T>(dist(rng));
  weight_ = Var<T>::parameter(std::move(w));
  bias_ = Var<T>::parameter(Tensor<T>({spec.out_channels}));
}

template <typename T>
void Conv2d<T>::collect(std::vector<NamedParam<T>>& out) const {
  out.push_back({name_ + ".weight", weight_});
  out.push_back({name_ + ".bias", bias_});
}

template class Conv2d<float>;
template class Conv2d<double>;

}  // namespace xnet
