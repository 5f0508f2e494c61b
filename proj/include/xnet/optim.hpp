#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xnet/autograd.hpp"

namespace xnet {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam(std::vector<NamedParam<T>> params, AdamConfig config);

  // One bias-corrected update from the accumulated grads. Parameters without
  // a grad buffer are treated as having zero gradient. Throws NumericError
  // naming the parameter if any gradient is non-finite.
  void step();
  void zero_grad();

  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  std::uint64_t steps() const { return steps_; }

  const std::vector<NamedParam<T>>& params() const { return params_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

  // Restores optimizer state (checkpoint resume). Shapes must match.
  void load_state(std::uint64_t steps, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v);

 private:
  std::vector<NamedParam<T>> params_;
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace xnet
