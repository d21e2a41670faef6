#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "giftlab/numerics.hpp"
#include "giftlab/rng.hpp"

using namespace giftlab;
using namespace giftlab::num;

TEST_CASE("log_sum_exp basics") {
  std::vector<double> two_zeros{0.0, 0.0};
  CHECK(log_sum_exp(two_zeros) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  std::vector<double> huge{1000.0, 1000.0};
  CHECK(log_sum_exp(huge) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));

  // log(e^0 + e^{ln 3}) = log(1 + 3) = log 4
  std::vector<double> v{0.0, std::log(3.0)};
  CHECK(log_sum_exp(v) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  CHECK_THROWS_AS(log_sum_exp(std::vector<double>{}), std::invalid_argument);
  std::vector<double> bad{0.0, std::nan("")};
  CHECK_THROWS_AS(log_sum_exp(bad), std::invalid_argument);
}

TEST_CASE("log_sum_exp permutation and shift invariance") {
  Rng rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + rng.below(8);
    std::vector<double> v(n);
    for (double& x : v) x = 60.0 * rng.uniform() - 30.0;
    const double base = log_sum_exp(v);

    std::vector<double> perm = v;
    rng.shuffle(perm);
    CHECK(log_sum_exp(perm) == doctest::Approx(base).epsilon(1e-12));

    const double c = 40.0 * rng.uniform() - 20.0;
    std::vector<double> shifted = v;
    for (double& x : shifted) x += c;
    CHECK(std::abs(log_sum_exp(shifted) - (base + c)) < 1e-10);
  }
}

TEST_CASE("log_softmax values") {
  std::vector<double> z3{0.0, 0.0, 0.0};
  auto ls = log_softmax(z3);
  for (double x : ls) CHECK(x == doctest::Approx(-std::log(3.0)).epsilon(1e-12));

  // shift invariance: [c, c + ln 2] -> [-ln 3, ln 2 - ln 3]
  for (double c : {-17.0, 0.0, 5.5}) {
    std::vector<double> v{c, c + std::log(2.0)};
    auto out = log_softmax(v);
    CHECK(out[0] == doctest::Approx(-std::log(3.0)).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(std::log(2.0) - std::log(3.0)).epsilon(1e-12));
  }

  std::vector<double> v{0.0, std::log(3.0)};
  auto out = log_softmax(v);
  CHECK(out[0] == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(std::log(3.0) - std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("log_softmax exponentiates to a probability vector") {
  Rng rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 2 + rng.below(12);
    std::vector<double> v(n);
    for (double& x : v) x = 60.0 * rng.uniform() - 30.0;
    auto p = softmax(v);
    double sum = 0.0;
    for (double x : p) sum += x;
    CHECK(std::abs(sum - 1.0) < 1e-12);
    check_prob_vector(p, "softmax output", 1e-12);
  }
}

TEST_CASE("soft_cross_entropy values") {
  // near-one-hot target fit perfectly -> ~0
  const double eps = 1e-300;
  std::vector<double> logits{0.0, std::log(eps), std::log(eps)};
  auto lp = log_softmax(logits);
  std::vector<double> onehot{1.0, 0.0, 0.0};
  CHECK(soft_cross_entropy(onehot, lp) == doctest::Approx(0.0).epsilon(1e-9));

  std::vector<double> u4(4, 0.25);
  std::vector<double> lp4 = log_softmax(std::vector<double>{0, 0, 0, 0});
  CHECK(soft_cross_entropy(u4, lp4) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // entropy of [0.5, 0.25, 0.25] = 0.5 ln 2 + 0.5 ln 4
  std::vector<double> t{0.5, 0.25, 0.25};
  std::vector<double> tl{std::log(0.5), std::log(0.25), std::log(0.25)};
  const double expected = 0.5 * std::log(2.0) + 0.5 * std::log(4.0);
  CHECK(soft_cross_entropy(t, tl) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(1.039721).epsilon(1e-6));

  CHECK_THROWS_AS(soft_cross_entropy(t, lp4), std::invalid_argument);
}

TEST_CASE("soft_cross_entropy of a distribution against itself is its entropy") {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + rng.below(10);
    std::vector<double> v(n);
    for (double& x : v) x = 10.0 * rng.uniform() - 5.0;
    auto p = softmax(v);
    auto lp = log_softmax(v);
    CHECK(std::abs(soft_cross_entropy(p, lp) - entropy(p)) < 1e-10);
  }
}

TEST_CASE("kl_divergence values") {
  std::vector<double> p{0.3, 0.7};
  CHECK(kl_divergence(p, p) == doctest::Approx(0.0).epsilon(1e-15));

  std::vector<double> onehot{1.0, 0.0};
  std::vector<double> half{0.5, 0.5};
  CHECK(kl_divergence(onehot, half) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  std::vector<double> p2{0.75, 0.25};
  const double expected = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(kl_divergence(p2, half) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.130812).epsilon(1e-5));

  std::vector<double> q_zero{0.0, 1.0};
  CHECK_THROWS_AS(kl_divergence(p2, q_zero), std::domain_error);
  // one-hot p against q with support: fine under 0 ln 0 := 0
  CHECK(kl_divergence(onehot, std::vector<double>{1.0, 0.0}) == doctest::Approx(0.0));
}

TEST_CASE("kl_divergence nonnegative on random pairs") {
  Rng rng(2024);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 2 + rng.below(6);
    std::vector<double> a(n), b(n);
    for (double& x : a) x = 8.0 * rng.uniform() - 4.0;
    for (double& x : b) x = 8.0 * rng.uniform() - 4.0;
    auto p = softmax(a);
    auto q = softmax(b);
    CHECK(kl_divergence(p, q) >= -1e-14);
    CHECK(std::abs(kl_divergence(p, p)) < 1e-12);
  }
}

TEST_CASE("grad_check on closed-form cases") {
  // quadratic: loss = sum p_i^2, gradient 2p
  std::vector<double> params{0.3, -1.2, 4.0, 0.0};
  auto quad = [](std::span<const double> p) {
    double s = 0.0;
    for (double x : p) s += x * x;
    return s;
  };
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) grad[i] = 2.0 * params[i];
  auto report = grad_check(quad, params, grad, 1e-6);
  CHECK(report.max_rel_error <= 1e-7);

  // constant loss: analytic gradient 0
  auto constant = [](std::span<const double>) { return 3.75; };
  std::vector<double> zeros(params.size(), 0.0);
  auto creport = grad_check(constant, params, zeros, 1e-6);
  CHECK(creport.max_rel_error <= 1e-9);

  // non-finite loss is reported, not thrown
  auto nanfn = [](std::span<const double> p) { return std::log(p[0] - 100.0); };
  auto nreport = grad_check(nanfn, params, zeros, 1e-6);
  CHECK_FALSE(nreport.finite);

  CHECK_THROWS_AS(grad_check(quad, params, grad, 1e-2), std::invalid_argument);
}

TEST_CASE("total_variation") {
  std::vector<double> p{1.0, 0.0};
  std::vector<double> q{0.0, 1.0};
  CHECK(total_variation(p, q) == doctest::Approx(1.0));
  CHECK(total_variation(p, p) == doctest::Approx(0.0));
}
