#include <cmath>
#include <functional>
#include <limits>

#include "clb/core/gradcheck.hpp"
#include "clb/core/ops.hpp"
#include "clb/core/rng.hpp"
#include "doctest.h"

using namespace clb;

namespace {

Tensor<double> param(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape), 0.0, true);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

GradCheckReport check(const std::function<Tensor<double>()>& fn, std::vector<Tensor<double>> ts) {
  ParameterSet<double> ps;
  for (std::size_t i = 0; i < ts.size(); ++i) ps.add("p" + std::to_string(i), ts[i]);
  GradCheckOptions opt = default_gradcheck_options<double>();
  opt.samples = 0;
  opt.tolerance = 1e-5;
  opt.abs_floor = 1e-4;
  return finite_difference_check<double>(fn, ps, opt);
}

// Random fixed weights turn any tensor into a scalar with non-trivial
// upstream gradients.
Tensor<double> project(const Tensor<double>& y, std::uint64_t seed) {
  Rng r(seed);
  Tensor<double> w(y.shape());
  for (auto& v : w.values()) v = r.uniform(-1, 1);
  return sum(mul(y, w));
}

}  // namespace

TEST_CASE("tape records only when active and an input requires grad") {
  Tensor<double> a({2}, 1.0, true), b({2}, 2.0);
  auto c = add(a, b);
  CHECK_FALSE(c.requires_grad());
  Tape<double> tape;
  {
    TapeScope<double> s(tape);
    auto d = add(b, b);
    CHECK_FALSE(d.requires_grad());
    auto e = add(a, b);
    CHECK(e.requires_grad());
    {
      NoGradScope<double> ng;
      CHECK_FALSE(mul(a, a).requires_grad());
    }
  }
  CHECK(tape.size() == 1);
}

TEST_CASE("gradients accumulate across uses of a tensor") {
  Tensor<double> x({1}, 3.0, true);
  Tape<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> s(tape);
    loss = add(mul(x, x), x);  // x^2 + x
  }
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("backward rejects a non-finite loss") {
  Tensor<double> x({1}, 0.0, true);
  Tape<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> s(tape);
    loss = scale(x, std::numeric_limits<double>::infinity());
  }
  CHECK_THROWS_AS(tape.backward(loss), NumericError);
  CHECK_THROWS_AS(tape.backward(Tensor<double>({2}, 1.0, true)), ShapeError);
}

TEST_CASE("elementwise backward matches finite differences") {
  Rng rng(1);
  auto a = param({3, 4}, rng), b = param({3, 4}, rng);
  auto away = param({3, 4}, rng, 0.2, 1.0);  // keeps relu/clamp off their kinks
  for (std::size_t i = 0; i < away.numel(); ++i) away[i] *= (i % 2 ? 1.0 : -1.0);
  CHECK(check([&] { return project(add(a, b), 1); }, {a, b}).passed);
  CHECK(check([&] { return project(sub(a, b), 2); }, {a, b}).passed);
  CHECK(check([&] { return project(mul(a, b), 3); }, {a, b}).passed);
  CHECK(check([&] { return project(scale(a, 2.5), 4); }, {a}).passed);
  CHECK(check([&] { return project(exp(a), 5); }, {a}).passed);
  CHECK(check([&] { return project(sigmoid(a), 6); }, {a}).passed);
  CHECK(check([&] { return project(relu(away), 7); }, {away}).passed);
  CHECK(check([&] { return project(clamp(away, -0.5, 0.6), 8); }, {away}).passed);
  CHECK(check([&] { return project(square(a), 9); }, {a}).passed);
  CHECK(check([&] { return mean(mul(a, a)); }, {a}).passed);
  CHECK(check([&] { return project(reshape(a, Shape{4, 3}), 10); }, {a}).passed);
  CHECK(check([&] { return project(concat_rows(a, b), 11); }, {a, b}).passed);
}

TEST_CASE("layer backward matches finite differences") {
  Rng rng(2);
  auto x = param({2, 2, 7, 6}, rng), w = param({3, 2, 3, 2}, rng), b = param({3}, rng);
  CHECK(check([&] { return project(conv2d(x, w, b), 1); }, {x, w, b}).passed);

  auto p = param({2, 2, 5, 6}, rng);
  CHECK(check([&] { return project(maxpool2d(p, 2), 2); }, {p}).passed);

  auto bx = param({5, 3, 2, 2}, rng), g = param({3}, rng, 0.5, 1.5), be = param({3}, rng);
  BatchNormStats<double> st(3);
  CHECK(check([&] { return project(batchnorm(bx, g, be, st, Mode::Train), 3); }, {bx, g, be}).passed);
  CHECK(check([&] { return project(batchnorm(bx, g, be, st, Mode::Eval), 4); }, {bx, g, be}).passed);
  auto fx = param({6, 4}, rng);
  CHECK_THROWS_AS(batchnorm(fx, g, be, st, Mode::Train), ShapeError);
  BatchNormStats<double> st4(4);
  auto g4 = param({4}, rng, 0.5, 1.5), b4 = param({4}, rng);
  CHECK(check([&] { return project(batchnorm(fx, g4, b4, st4, Mode::Train), 5); }, {fx, g4, b4}).passed);

  auto dx = param({3, 5}, rng), dw = param({5, 4}, rng), db = param({4}, rng);
  CHECK(check([&] { return project(dense(dx, dw, db), 6); }, {dx, dw, db}).passed);
}

TEST_CASE("loss backward matches finite differences") {
  Rng rng(3);
  auto z = param({4, 5}, rng, -2, 2);
  std::vector<double> soft(20);
  for (std::size_t n = 0; n < 4; ++n) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += soft[n * 5 + c] = rng.uniform(0.1, 1.0);
    for (std::size_t c = 0; c < 5; ++c) soft[n * 5 + c] /= s;
  }
  Tensor<double> targets({4, 5}, soft);
  CHECK(check([&] { return cross_entropy(softmax_with_temperature(z, 2.0), targets); }, {z}).passed);
  CHECK(check([&] { return project(softmax_with_temperature(z, 0.7, ClassMask{1, 0, 1, 1, 0}), 3); }, {z}).passed);

  std::vector<double> weights{0.1, 0.4, 0.2, 0.3};
  SoftmaxLossOptions opt{2.0, 4.0};
  ClassMask rows(20, 1);
  rows[0] = rows[6] = rows[19] = 0;
  std::vector<double> masked_targets = soft;
  for (std::size_t i = 0; i < 20; ++i) {
    if (!rows[i]) masked_targets[i] = 0.0;
  }
  CHECK(check([&] { return softmax_cross_entropy<double>(z, masked_targets, rows, weights, opt); }, {z}).passed);

  auto p = param({3, 4}, rng, 0.05, 0.95);
  Tensor<double> bt({3, 4});
  for (auto& v : bt.values()) v = rng.uniform();
  CHECK(check([&] { return binary_cross_entropy(p, bt); }, {p}).passed);

  auto mu = param({2, 3}, rng), lv = param({2, 3}, rng);
  CHECK(check([&] { return gaussian_kl(mu, lv); }, {mu, lv}).passed);
}
