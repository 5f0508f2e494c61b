#include "xnet/matrix.hpp"

#include <bit>
#include <cstdlib>
#include <stdexcept>

namespace xnet {

namespace {

std::size_t stem_width(std::size_t s) { return 16 * (s + 1); }
std::size_t level_width(int k) { return k == 1 ? 48 : 64; }

}  // namespace

void validate(const MatrixConfig& cfg) {
  if (cfg.n < 1) throw std::invalid_argument("matrix.n must be >= 1");
  if (cfg.base_stride < 1 || !std::has_single_bit(static_cast<unsigned>(cfg.base_stride))) {
    throw std::invalid_argument("matrix.base_stride must be a power of two");
  }
  if (cfg.prune_band < 0) throw std::invalid_argument("matrix.prune_band must be >= 0");
  if (cfg.channels < 1) throw std::invalid_argument("matrix.channels must be >= 1");
}

bool is_live(LayerCoord c, const MatrixConfig& cfg) {
  return c.i >= 1 && c.j >= 1 && c.i <= cfg.n && c.j <= cfg.n && std::abs(c.i - c.j) <= cfg.prune_band;
}

std::vector<LayerCoord> live_coords(const MatrixConfig& cfg) {
  std::vector<LayerCoord> out;
  for (int i = 1; i <= cfg.n; ++i) {
    for (int j = 1; j <= cfg.n; ++j) {
      if (is_live({i, j}, cfg)) out.push_back({i, j});
    }
  }
  return out;
}

int required_divisor(const MatrixConfig& cfg) { return cfg.base_stride << (cfg.n - 1); }

void check_input_extents(const MatrixConfig& cfg, std::size_t height, std::size_t width) {
  const auto d = static_cast<std::size_t>(required_divisor(cfg));
  if (height % d != 0) {
    throw ShapeError("height", "input height " + std::to_string(height) + " is not a multiple of " +
                                   std::to_string(d) + "; pad the image to the next multiple");
  }
  if (width % d != 0) {
    throw ShapeError("width", "input width " + std::to_string(width) + " is not a multiple of " +
                                  std::to_string(d) + "; pad the image to the next multiple");
  }
}

std::vector<LayerSpec> layer_specs(const MatrixConfig& cfg, std::size_t image_h, std::size_t image_w) {
  validate(cfg);
  check_input_extents(cfg, image_h, image_w);
  std::vector<LayerSpec> specs;
  for (LayerCoord c : live_coords(cfg)) {
    LayerSpec s;
    s.coord = c;
    s.stride_w = cfg.base_stride << (c.i - 1);
    s.stride_h = cfg.base_stride << (c.j - 1);
    s.feat_w = static_cast<int>(image_w) / s.stride_w;
    s.feat_h = static_cast<int>(image_h) / s.stride_h;
    s.channels = cfg.channels;
    specs.push_back(s);
  }
  return specs;
}

template <typename T>
Backbone<T>::Backbone(const MatrixConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  validate(cfg);
  const auto stem_steps = static_cast<std::size_t>(std::countr_zero(static_cast<unsigned>(cfg.base_stride)));
  std::size_t width = 3;
  for (std::size_t s = 0; s < stem_steps; ++s) {
    stem_.emplace_back("backbone.stem" + std::to_string(s), ConvSpec::square(width, stem_width(s), 3, 2, 2), rng);
    width = stem_width(s);
  }
  const auto channels = static_cast<std::size_t>(cfg.channels);
  for (int k = 1; k <= cfg.n; ++k) {
    const std::string prefix = "backbone.level" + std::to_string(k);
    if (k > 1) {
      down_.emplace_back(prefix + ".down", ConvSpec::square(width, level_width(k), 3, 2, 2), rng);
      width = level_width(k);
    } else {
      down_.emplace_back();
    }
    refine_.emplace_back(prefix + ".refine", ConvSpec::square(width, level_width(k), 3, 1, 1), rng);
    width = level_width(k);
    lateral_.emplace_back(prefix + ".lateral", ConvSpec::square(width, channels, 1, 1, 1), rng);
  }
}

template <typename T>
std::vector<Var<T>> Backbone<T>::forward(const Var<T>& image) const {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != 3) throw ShapeError("channels", "backbone expects [N,3,H,W], got " + shape_str(s));
  check_input_extents(cfg_, s[2], s[3]);

  Var<T> h = image;
  for (const auto& conv : stem_) h = relu(conv(h));
  std::vector<Var<T>> diagonals;
  for (int k = 1; k <= cfg_.n; ++k) {
    if (k > 1) h = relu(down_[static_cast<std::size_t>(k - 1)](h));
    h = relu(refine_[static_cast<std::size_t>(k - 1)](h));
    diagonals.push_back(lateral_[static_cast<std::size_t>(k - 1)](h));
  }
  if (cfg_.top_down)
    for (std::size_t k = diagonals.size() - 1; k-- > 0;) diagonals[k] = add(diagonals[k], upsample2x(diagonals[k + 1]));
  return diagonals;
}

template <typename T>
void Backbone<T>::collect(std::vector<NamedParam<T>>& out) const {
  for (const auto& c : stem_) c.collect(out);
  for (int k = 1; k <= cfg_.n; ++k) {
    const auto idx = static_cast<std::size_t>(k - 1);
    if (k > 1) down_[idx].collect(out);
    refine_[idx].collect(out);
    lateral_[idx].collect(out);
  }
}

template <typename T>
MatrixGenerator<T>::MatrixGenerator(const MatrixConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg),
      down_width_("matrix.down_width", ConvSpec::square(static_cast<std::size_t>(cfg.channels), static_cast<std::size_t>(cfg.channels), 3, 1, 2), rng),
      down_height_("matrix.down_height", ConvSpec::square(static_cast<std::size_t>(cfg.channels), static_cast<std::size_t>(cfg.channels), 3, 2, 1), rng) {}

template <typename T>
LayerMatrix<T> MatrixGenerator<T>::build(const std::vector<Var<T>>& diagonals) const {
  if (diagonals.size() != static_cast<std::size_t>(cfg_.n)) {
    throw ShapeError("levels", "expected " + std::to_string(cfg_.n) + " diagonal layers, got " +
                                   std::to_string(diagonals.size()));
  }
  for (std::size_t k = 1; k < diagonals.size(); ++k) {
    if (diagonals[k].shape()[2] > diagonals[k - 1].shape()[2]) {
      throw ShapeError("height", "diagonal layers must be ordered largest first");
    }
  }
  LayerMatrix<T> m;
  for (int k = 1; k <= cfg_.n; ++k) {
    m.layers.emplace(LayerCoord{k, k}, diagonals[static_cast<std::size_t>(k - 1)]);
    for (int d = 1; k + d <= cfg_.n && d <= cfg_.prune_band; ++d) {
      m.layers.emplace(LayerCoord{k + d, k}, down_width_(m.layers.at({k + d - 1, k})));
      m.layers.emplace(LayerCoord{k, k + d}, down_height_(m.layers.at({k, k + d - 1})));
    }
  }
  return m;
}

template <typename T>
void MatrixGenerator<T>::collect(std::vector<NamedParam<T>>& out) const {
  down_width_.collect(out);
  down_height_.collect(out);
}

template class Backbone<float>;
template class Backbone<double>;
template class MatrixGenerator<float>;
template class MatrixGenerator<double>;

}  // namespace xnet
