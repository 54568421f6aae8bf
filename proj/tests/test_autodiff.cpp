#include <cmath>
#include <random>

#include "doctest.h"
#include "spp/autodiff.hpp"
#include "spp/errors.hpp"

using namespace spp;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

double rel_err(const Tensor& a, const Tensor& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

// Checks the tape gradient of f at x against central differences.
template <class F>
double grad_check(F build, const Tensor& x) {
  Tape tape;
  Var v = tape.leaf(x);
  auto g = grad_of_scalar(build(v), v);
  auto fd = finite_diff_gradient(
      [&](const Tensor& p) {
        Tape t;
        return build(t.leaf(p)).value().item();
      },
      x, 1e-6);
  return rel_err(g, fd);
}

}  // namespace

TEST_CASE("matmul values") {
  Tape t;
  auto c = ad::matmul(t.constant(Tensor::matrix({{1, 2}, {3, 4}})), t.constant(Tensor::matrix({{5}, {6}})));
  CHECK(c.value() == Tensor::matrix({{17}, {39}}));
}

TEST_CASE("softmax rows sum to one and survive huge logits") {
  Tape t;
  auto s = ad::softmax_rows(t.constant(Tensor::matrix({{1000, 1000}, {0, std::log(3.0)}})));
  CHECK(s.value().at(0, 0) == doctest::Approx(0.5));
  CHECK(s.value().at(1, 1) == doctest::Approx(0.75));
}

TEST_CASE("cross entropy of uniform logits is log C") {
  Tape t;
  std::vector<int> labels{0, 2};
  auto l = ad::cross_entropy(t.constant(Tensor(Shape{2, 3})), labels);
  CHECK(l.value().item() == doctest::Approx(std::log(3.0)).epsilon(1e-15));
}

TEST_CASE("gelu uses the tanh form") {
  const double x = 0.7;
  const double expect = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
  CHECK(gelu_value(x) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("gradients of single ops match finite differences") {
  std::mt19937_64 rng(3);
  const auto w = random_tensor({3, 4}, rng);
  const auto b = random_tensor({4}, rng);
  const auto m = random_tensor({4}, rng);
  const auto r = random_tensor({3}, rng);
  const auto x = random_tensor({3, 4}, rng);
  auto c = [](Tape* t, const Tensor& v) { return t->constant(v); };

  CHECK(grad_check([&](Var v) { return ad::sum_squares(ad::matmul(v, c(v.tape(), w.reshaped({4, 3})))); }, x) < 1e-7);
  CHECK(grad_check([&](Var v) { return ad::sum(ad::mul(ad::softmax_rows(v), c(v.tape(), w))); }, x) < 1e-7);
  CHECK(grad_check([&](Var v) { return ad::sum_squares(ad::gelu(v)); }, x) < 1e-7);
  CHECK(grad_check([&](Var v) { return ad::sum_squares(ad::add_row_bias(v, c(v.tape(), b))); }, x) < 1e-7);
  CHECK(grad_check([&](Var v) { return ad::sum_squares(ad::scale_columns(c(v.tape(), w), v)); }, m) < 1e-7);
  CHECK(grad_check([&](Var v) { return ad::sum_squares(ad::scale_rows(c(v.tape(), w), v)); }, r) < 1e-7);
  CHECK(grad_check([&](Var v) { return ad::sum_squares(ad::mean_tokens(v, 3)); }, x) < 1e-7);
  CHECK(grad_check([&](Var v) { return ad::sum_squares(ad::slice(v, 2, 5)); }, x.reshaped({12})) < 1e-7);
  CHECK(grad_check([&](Var v) { return ad::sum(ad::sub(ad::scale(v, 3.0), ad::mul(v, v))); }, x) < 1e-7);
  std::vector<int> labels{1, 0, 3};
  CHECK(grad_check([&](Var v) { return ad::cross_entropy(v, labels); }, x) < 1e-7);
}

TEST_CASE("batched matmul gradient with and without transpose") {
  std::mt19937_64 rng(5);
  const auto a = random_tensor({2, 3, 4}, rng);
  const auto b = random_tensor({2, 4, 2}, rng);
  const auto bt = random_tensor({2, 2, 4}, rng);
  CHECK(grad_check([&](Var v) { return ad::sum_squares(ad::bmm(v, v.tape()->constant(b))); }, a) < 1e-7);
  CHECK(grad_check([&](Var v) { return ad::sum_squares(ad::bmm(v, v.tape()->constant(bt), true)); }, a) < 1e-7);
  CHECK(grad_check([&](Var v) { return ad::sum_squares(ad::bmm(v.tape()->constant(a), v, true)); }, bt) < 1e-7);
}

TEST_CASE("relu gradient away from the kink") {
  Tape t;
  auto x = t.leaf(Tensor::vector({-1.0, 2.0}));
  auto g = grad_of_scalar(ad::sum(ad::relu(x)), x);
  CHECK(g == Tensor::vector({0.0, 1.0}));
}

TEST_CASE("reused node accumulates its gradient") {
  Tape t;
  auto x = t.leaf(Tensor::scalar(3.0));
  auto g = grad_of_scalar(ad::sum(ad::add(ad::mul(x, x), x)), x);
  CHECK(g.item() == 7.0);
}

TEST_CASE("unreachable leaves and constants get zero gradient; foreign and inner vars are rejected") {
  Tape t, other;
  auto x = t.leaf(Tensor::vector({1, 2}));
  auto y = t.leaf(Tensor::vector({5}));
  auto k = t.constant(Tensor::vector({1}));
  auto loss = ad::sum(x);
  auto g = t.gradients(loss, std::vector<Var>{y});
  CHECK(g[0] == Tensor::vector({0}));
  CHECK(t.gradients(loss, std::vector<Var>{k})[0] == Tensor::vector({0}));
  CHECK_THROWS_AS(t.gradients(loss, std::vector<Var>{loss}), LookupError);
  CHECK_THROWS_AS(t.gradients(loss, std::vector<Var>{other.leaf(Tensor::vector({1}))}), LookupError);
  CHECK_THROWS_AS(t.gradients(x, std::vector<Var>{x}), ShapeError);
}

TEST_CASE("shape mismatches raise ShapeError") {
  Tape t;
  auto a = t.constant(Tensor(Shape{2, 3}));
  CHECK_THROWS_AS(ad::matmul(a, a), ShapeError);
  CHECK_THROWS_AS(ad::add(a, t.constant(Tensor(Shape{3, 2}))), ShapeError);
}

TEST_CASE("finite difference step must be positive") {
  CHECK_THROWS(finite_diff_gradient([](const Tensor&) { return 0.0; }, Tensor::vector({1}), 0.0));
}
