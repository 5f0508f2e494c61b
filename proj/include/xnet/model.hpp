#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "xnet/dataset.hpp"
#include "xnet/heads.hpp"
#include "xnet/matrix.hpp"

namespace xnet {

// Backbone -> layer matrix -> shared corner/centre head.
template <typename T>
class KpxNet {
 public:
  KpxNet(const MatrixConfig& matrix, const HeadConfig& head, std::uint64_t seed)
      : KpxNet(matrix, head, seeded(seed)) {}

  HeadOutput<T> forward(const Var<T>& images) const { return head_.forward(generator_.build(backbone_.forward(images))); }

  // Parameters in a fixed order with unique names.
  std::vector<NamedParam<T>> parameters() const {
    std::vector<NamedParam<T>> out;
    backbone_.collect(out);
    generator_.collect(out);
    head_.collect(out);
    return out;
  }

  const MatrixConfig& matrix_config() const { return matrix_; }
  const HeadConfig& head_config() const { return head_.config(); }

 private:
  struct Rng {
    std::mt19937_64 engine;
  };
  static Rng seeded(std::uint64_t seed) { return Rng{std::mt19937_64(seed)}; }
  KpxNet(const MatrixConfig& matrix, const HeadConfig& head, Rng rng)
      : matrix_(matrix),
        backbone_(matrix, rng.engine),
        generator_(matrix, rng.engine),
        head_(head, matrix.channels, rng.engine) {}

  MatrixConfig matrix_;
  Backbone<T> backbone_;
  MatrixGenerator<T> generator_;
  Head<T> head_;
};

// Stacks same-sized images into [N, 3, H, W], normalized as (v - 0.5) / 0.25.
template <typename T>
Tensor<T> make_batch(const std::vector<const Sample*>& samples) {
  const std::size_t h = samples.at(0)->height();
  const std::size_t w = samples.at(0)->width();
  Tensor<T> out({samples.size(), 3, h, w});
  std::size_t k = 0;
  for (const Sample* s : samples) {
    require_shape(s->image.shape(), {3, h, w}, "make_batch image");
    for (float v : s->image.data()) out[k++] = static_cast<T>((v - 0.5f) / 0.25f);
  }
  return out;
}

}  // namespace xnet
