#include "xnet/optim.hpp"

#include <cmath>

namespace xnet {

template <typename T>
Adam<T>::Adam(std::vector<NamedParam<T>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

template <typename T>
void Adam<T>::step() {
  for (const auto& p : params_) {
    if (p.var.has_grad() && !p.var.grad().all_finite()) {
      throw NumericError("non-finite gradient for parameter '" + p.name + "'");
    }
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T step_size = static_cast<T>(config_.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(config_.eps);

  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var<T> var = params_[k].var;
    auto value = var.mutable_value().data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    const bool has = var.has_grad();
    const T* g = has ? var.grad().raw() : nullptr;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T gi = has ? g[i] : T(0);
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      value[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

template <typename T>
void Adam<T>::load_state(std::uint64_t steps, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw ShapeError("params", "optimizer state has " + std::to_string(m.size()) + " entries, model has " +
                                   std::to_string(params_.size()));
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    require_shape(m[k].shape(), params_[k].var.shape(), "adam m for " + params_[k].name);
    require_shape(v[k].shape(), params_[k].var.shape(), "adam v for " + params_[k].name);
  }
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace xnet
