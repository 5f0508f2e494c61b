#include "xnet/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

namespace xnet {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void require_shape(const Shape& actual, const Shape& expected, const std::string& what) {
  if (actual.size() != expected.size()) {
    throw ShapeError("rank", what + ": expected rank " + std::to_string(expected.size()) +
                                 " " + shape_str(expected) + ", got " + shape_str(actual));
  }
  for (std::size_t a = 0; a < actual.size(); ++a) {
    if (actual[a] != expected[a]) {
      throw ShapeError("axis " + std::to_string(a),
                       what + ": axis " + std::to_string(a) + " expected " +
                           std::to_string(expected[a]) + ", got " + std::to_string(actual[a]) +
                           " (" + shape_str(expected) + " vs " + shape_str(actual) + ")");
    }
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  for (std::size_t a = 0; a < shape_.size(); ++a) {
    if (shape_[a] == 0) throw ShapeError("axis " + std::to_string(a), "zero extent in shape " + shape_str(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("data", "shape " + shape_str(shape_) + " needs " +
                                 std::to_string(shape_numel(shape_)) + " values, got " +
                                 std::to_string(data_.size()));
  }
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("numel", "item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
std::size_t Tensor<T>::offset_of(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) {
    throw ShapeError("rank", "index of rank " + std::to_string(idx.size()) + " into " + shape_str(shape_));
  }
  std::size_t off = 0;
  std::size_t a = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[a]) {
      throw ShapeError("axis " + std::to_string(a), "index " + std::to_string(i) + " out of range for " + shape_str(shape_));
    }
    off = off * shape_[a] + i;
    ++a;
  }
  return off;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace xnet
