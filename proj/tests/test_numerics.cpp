#include <cmath>

#include "doctest.h"
#include "mts2s/gradcheck.hpp"
#include "mts2s/rng.hpp"
#include "mts2s/tensor.hpp"

using namespace mts2s;

TEST_CASE("affine matches hand computations") {
  // zero weights pass the bias through
  Tensor<double> x({2}, {1, 2});
  Tensor<double> w0({2, 2});
  Tensor<double> b({2}, {3, 4});
  Tensor<double> y = affine(x, w0, b);
  CHECK(y[0] == 3);
  CHECK(y[1] == 4);

  // identity
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  Tensor<double> zero_b({2});
  Tensor<double> x2({2}, {1, 0});
  Tensor<double> y2 = affine(x2, eye, zero_b);
  CHECK(y2[0] == 1);
  CHECK(y2[1] == 0);

  // hand matrix multiply: W=[[1,2],[3,4]], x=[2,-1], b=[1,1] -> [1,3]
  Tensor<double> w({2, 2}, {1, 2, 3, 4});
  Tensor<double> x3({2}, {2, -1});
  Tensor<double> b3({2}, {1, 1});
  Tensor<double> y3 = affine(x3, w, b3);
  CHECK(y3[0] == doctest::Approx(1).epsilon(1e-12));
  CHECK(y3[1] == doctest::Approx(3).epsilon(1e-12));
}

TEST_CASE("affine rejects mismatched shapes naming both") {
  Tensor<double> x({3});
  Tensor<double> w({2, 2});
  Tensor<double> b({2});
  CHECK_THROWS_WITH_AS(affine(x, w, b), doctest::Contains("[2x2]"), DimensionError);
}

TEST_CASE("softmax examples") {
  Tensor<double> u({3}, {0, 0, 0});
  Tensor<double> s = softmax(u);
  for (int i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  // stability: no overflow with large inputs
  Tensor<double> big({2}, {1000, 0});
  Tensor<double> sb = softmax(big);
  CHECK(sb[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sb[1] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(sb.all_finite());

  // softmax([ln 1, ln 2, ln 3]) = [1/6, 2/6, 3/6]
  Tensor<double> logs({3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
  Tensor<double> sl = softmax(logs);
  CHECK(sl[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(sl[1] == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(sl[2] == doctest::Approx(3.0 / 6).epsilon(1e-12));

  CHECK_THROWS_AS(softmax(Tensor<double>()), DomainError);
}

TEST_CASE("softmax sums to one for random inputs in [-50,50]") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(16);
    Tensor<double> x({n});
    for (std::size_t i = 0; i < n; ++i) x[i] = rng.uniform(-50, 50);
    Tensor<double> y = softmax(x);
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(y[i] >= 0);
      sum += y[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("l2_distance_sq examples and symmetry") {
  Tensor<double> a({2}, {5, 5});
  CHECK(l2_distance_sq(a, a) == 0);

  Tensor<double> p({2}, {1, 0});
  Tensor<double> q({2}, {0, 1});
  CHECK(l2_distance_sq(p, q) == doctest::Approx(2).epsilon(1e-12));
  CHECK(l2_distance_sq(q, p) == l2_distance_sq(p, q));

  Tensor<double> s({1}, {0});
  Tensor<double> t({1}, {3});
  CHECK(l2_distance_sq(s, t) == doctest::Approx(9).epsilon(1e-12));

  Tensor<double> bad({3});
  CHECK_THROWS_AS(l2_distance_sq(p, bad), DimensionError);
}

TEST_CASE("gradcheck on quadratic and constant losses") {
  ParameterStore<double> store;
  store.add("g", "p", {1}).value[0] = 3.0;

  auto quadratic = [](ParameterStore<double>& s) {
    const double p = s.value("g", "p")[0];
    s.grad("g", "p")[0] += 2.0 * p;
    return p * p;
  };
  GradCheckReport rep = finite_difference_gradcheck(quadratic, store, 1e-5, 1e-4);
  CHECK(rep.max_rel_error < 1e-8);
  CHECK(rep.worst_per_group.at("g").analytic == doctest::Approx(6.0));
  CHECK(rep.worst_per_group.at("g").numeric == doctest::Approx(6.0).epsilon(1e-8));

  auto constant = [](ParameterStore<double>&) { return 42.0; };
  GradCheckReport rep2 = finite_difference_gradcheck(constant, store, 1e-5, 1e-4);
  CHECK(rep2.pass(1e-4));
}

TEST_CASE("gradcheck detects a non-deterministic loss") {
  ParameterStore<double> store;
  store.add("g", "p", {1});
  int calls = 0;
  auto flaky = [&calls](ParameterStore<double>&) { return static_cast<double>(calls++); };
  CHECK_THROWS_AS(finite_difference_gradcheck(flaky, store, 1e-5, 1e-4), ContractError);
}

TEST_CASE("affine backward passes gradcheck") {
  Rng rng(11);
  ParameterStore<double> store;
  auto& W = store.add("aff", "W", {3, 4});
  auto& b = store.add("aff", "b", {3});
  auto& x = store.add("aff", "x", {4});
  for (std::size_t i = 0; i < W.value.size(); ++i) W.value[i] = rng.uniform(-1, 1);
  for (std::size_t i = 0; i < b.value.size(); ++i) b.value[i] = rng.uniform(-1, 1);
  for (std::size_t i = 0; i < x.value.size(); ++i) x.value[i] = rng.uniform(-1, 1);

  // loss = sum of squares of affine output; checks W, b and x gradients.
  auto loss = [](ParameterStore<double>& s) {
    Tensor<double>& W = s.value("aff", "W");
    Tensor<double>& b = s.value("aff", "b");
    Tensor<double>& x = s.value("aff", "x");
    Tensor<double> y = affine(x, W, b);
    double l = 0;
    Tensor<double> dy(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
      l += y[i] * y[i];
      dy[i] = 2 * y[i];
    }
    affine_backward(x, W, dy, s.grad("aff", "W"), s.grad("aff", "b"), s.grad("aff", "x"));
    return l;
  };
  GradCheckReport rep = finite_difference_gradcheck(loss, store, 1e-5, 1e-6);
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("kernels are deterministic") {
  Rng rng1(5), rng2(5);
  Tensor<double> a({8}), b({8});
  for (std::size_t i = 0; i < 8; ++i) {
    a[i] = rng1.uniform(-3, 3);
    b[i] = rng2.uniform(-3, 3);
  }
  CHECK(a.vec() == b.vec());
  Tensor<double> sa = softmax(a), sb = softmax(b);
  CHECK(sa.vec() == sb.vec());
}
