#pragma once

#include <random>
#include <string>
#include <vector>

#include "xnet/ops.hpp"
#include "xnet/optim.hpp"

namespace xnet {

// A convolution with its own learnable weights (He-normal init, zero bias).
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, const ConvSpec& spec, std::mt19937_64& rng);

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight_, bias_, spec_); }

  const ConvSpec& spec() const { return spec_; }
  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }
  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }

  void collect(std::vector<NamedParam<T>>& out) const;

 private:
  std::string name_;
  ConvSpec spec_;
  Var<T> weight_;
  Var<T> bias_;
};

extern template class Conv2d<float>;
extern template class Conv2d<double>;

}  // namespace xnet
