#include "xnet/grad_suite.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "xnet/heads.hpp"
#include "xnet/ops.hpp"

namespace xnet {

namespace {

using V = Var<double>;

// <x, r> for a fixed random r, so every output element gets a distinct upstream gradient.
V probe(const V& x, const Tensor<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.numel(); ++i) s += x.value()[i] * r[i];
  return V::from_op("probe", Tensor<double>::scalar(s), {x}, [r](V::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r.numel(); ++i) g[i] += self.grad[0] * r[i];
  });
}

struct Gen {
  std::mt19937_64 rng;
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  std::size_t pick(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); }
  Tensor<double> tensor(const Shape& s, double lo, double hi) {
    Tensor<double> t(s);
    for (double& v : t.data()) v = uniform(lo, hi);
    return t;
  }
  // |v| in [gap, 1], random sign
  Tensor<double> away_from_zero(const Shape& s, double gap) {
    Tensor<double> t(s);
    for (double& v : t.data()) v = uniform(gap, 1.0) * (uniform(0, 1) < 0.5 ? -1.0 : 1.0);
    return t;
  }
};

struct Case {
  std::function<V()> f;
  std::vector<V> params;
};

template <typename Make>
OpGradReport run(const std::string& name, int instances, Gen& gen, Make make) {
  OpGradReport rep;
  rep.op = name;
  for (int k = 0; k < instances; ++k) {
    Case c = make(gen);
    const GradCheckResult r = grad_check(c.f, c.params);
    ++rep.instances;
    if (rep.instances == 1 || r.max_rel_error > rep.max_rel_error) {
      rep.max_rel_error = r.max_rel_error;
      rep.worst = r;
    }
  }
  return rep;
}

Shape small_nchw(Gen& g) { return {g.pick(1, 2), g.pick(1, 3), g.pick(3, 6), g.pick(3, 6)}; }

}  // namespace

std::vector<OpGradReport> run_grad_suite(int instances, std::uint64_t seed) {
  Gen gen{std::mt19937_64(seed)};
  std::vector<OpGradReport> out;

  out.push_back(run("conv2d", instances, gen, [](Gen& g) {
    static const std::size_t strides[4][2] = {{1, 1}, {2, 2}, {1, 2}, {2, 1}};
    const std::size_t kernel = g.pick(0, 2) == 0 ? 1 : 3;
    const auto* st = strides[g.pick(0, 3)];
    const std::size_t cin = g.pick(1, 3), cout = g.pick(1, 3);
    const ConvSpec spec = ConvSpec::square(cin, cout, kernel, st[0], st[1]);
    V x = V::parameter(g.tensor({g.pick(1, 2), cin, g.pick(3, 6), g.pick(3, 6)}, -1, 1));
    V w = V::parameter(g.tensor({cout, cin, kernel, kernel}, -1, 1));
    V b = V::parameter(g.tensor({cout}, -1, 1));
    const Shape ys{x.shape()[0], cout, spec.out_height(x.shape()[2]), spec.out_width(x.shape()[3])};
    const Tensor<double> r = g.tensor(ys, -1, 1);
    return Case{[=] { return probe(conv2d(x, w, b, spec), r); }, {x, w, b}};
  }));

  out.push_back(run("relu", instances, gen, [](Gen& g) {
    V x = V::parameter(g.away_from_zero(small_nchw(g), 0.01));
    const Tensor<double> r = g.tensor(x.shape(), -1, 1);
    return Case{[=] { return probe(relu(x), r); }, {x}};
  }));

  out.push_back(run("sigmoid", instances, gen, [](Gen& g) {
    V x = V::parameter(g.tensor(small_nchw(g), -4, 4));
    const Tensor<double> r = g.tensor(x.shape(), -1, 1);
    return Case{[=] { return probe(sigmoid(x), r); }, {x}};
  }));

  out.push_back(run("max_pool_3x3", instances, gen, [](Gen& g) {
    // distinct values 0.01 apart, shuffled
    const Shape s = small_nchw(g);
    Tensor<double> t(s);
    std::vector<std::size_t> perm(t.numel());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), g.rng);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = 0.01 * static_cast<double>(perm[i]) - 1.0;
    V x = V::parameter(t);
    const Tensor<double> r = g.tensor(s, -1, 1);
    return Case{[=] { return probe(max_pool_3x3_stride1(x), r); }, {x}};
  }));

  out.push_back(run("upsample2x", instances, gen, [](Gen& g) {
    V x = V::parameter(g.tensor(small_nchw(g), -1, 1));
    Shape s = x.shape();
    s[2] *= 2;
    s[3] *= 2;
    const Tensor<double> r = g.tensor(s, -1, 1);
    return Case{[=] { return probe(upsample2x(x), r); }, {x}};
  }));

  out.push_back(run("add", instances, gen, [](Gen& g) {
    const Shape s = small_nchw(g);
    V a = V::parameter(g.tensor(s, -1, 1));
    V b = V::parameter(g.tensor(s, -1, 1));
    const Tensor<double> r = g.tensor(s, -1, 1);
    return Case{[=] { return probe(add(a, b), r); }, {a, b}};
  }));

  out.push_back(run("scale", instances, gen, [](Gen& g) {
    V x = V::parameter(g.tensor(small_nchw(g), -1, 1));
    const double k = g.uniform(-2, 2);
    const Tensor<double> r = g.tensor(x.shape(), -1, 1);
    return Case{[=] { return probe(scale(x, k), r); }, {x}};
  }));

  out.push_back(run("sum", instances, gen, [](Gen& g) {
    V x = V::parameter(g.tensor(small_nchw(g), -1, 1));
    const double k = g.uniform(0.5, 2);
    return Case{[=] { return scale(sum(x), k); }, {x}};
  }));

  out.push_back(run("focal_loss", instances, gen, [](Gen& g) {
    const Shape s{g.pick(1, 2), g.pick(1, 3), g.pick(3, 6), g.pick(3, 6)};
    V p = V::parameter(g.tensor(s, 0.05, 0.95));
    Tensor<double> t(s);
    for (double& v : t.data()) {
      const double u = g.uniform(0, 1);
      v = u < 0.15 ? 1.0 : (u < 0.5 ? g.uniform(0.0, 0.99) : 0.0);
    }
    const double norm = g.uniform(0, 1) < 0.5 ? 0.0 : g.uniform(1, 5);
    return Case{[=] { return focal_loss(p, t, FocalParams{}, norm); }, {p}};
  }));

  out.push_back(run("smooth_l1", instances, gen, [](Gen& g) {
    const Shape s{g.pick(1, 2), 2, g.pick(3, 6), g.pick(3, 6)};
    Tensor<double> t = g.tensor(s, -1, 1);
    Tensor<double> pred(s);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      // keep |pred - target| off the quadratic/linear seam at 1
      double d = g.uniform(0.0, 2.5);
      if (std::abs(d - 1.0) < 0.01) d += 0.05;
      pred[i] = t[i] + (g.uniform(0, 1) < 0.5 ? -d : d);
    }
    Tensor<double> mask(s);
    for (double& v : mask.data()) v = g.uniform(0, 1) < 0.6 ? 1.0 : 0.0;
    V p = V::parameter(pred);
    return Case{[=] { return smooth_l1(p, t, mask); }, {p}};
  }));

  return out;
}

}  // namespace xnet
