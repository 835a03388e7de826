#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "drdose/kernel.hpp"
#include "drdose/rng.hpp"
#include "oracles.hpp"

using namespace drdose;

namespace {

// independent recursion: conv(0) = K, conv(s)(x) = int conv(s-1)(y) K(x-y) dy,
// integrated with the oracle Simpson routine at full depth
double conv_oracle(const Kernel& k, int s, double x, double tol) {
  if (s == 0) return k.eval(x);
  const double inner_half = static_cast<double>(s) * k.support;
  const double lo = std::max(-inner_half, x - k.support);
  const double hi = std::min(inner_half, x + k.support);
  if (hi <= lo) return 0.0;
  return oracle::integrate([&](double y) { return conv_oracle(k, s - 1, y, tol * 0.05) * k.eval(x - y); },
                           lo, hi, tol);
}

}  // namespace

TEST_CASE("epanechnikov values") {
  const Kernel k = epanechnikov();
  REQUIRE(k.eval(0.0) == 0.75);
  REQUIRE(k.eval(1.0) == 0.0);
  REQUIRE(k.eval(-1.0) == 0.0);
  REQUIRE(k.eval(1.5) == 0.0);
  REQUIRE(k.eval(0.5) == Catch::Approx(0.75 * 0.75).epsilon(1e-15));
}

TEST_CASE("epanechnikov integrates to one") {
  const Kernel k = epanechnikov();
  const double mass = oracle::integrate([&](double u) { return k.eval(u); }, -1.0, 1.0, 1e-12);
  REQUIRE(std::abs(mass - 1.0) < 1e-10);
  REQUIRE_NOTHROW(check_kernel(k));
}

TEST_CASE("kernel symmetry holds exactly at random points") {
  const Kernel k = epanechnikov();
  Rng rng(101);
  for (int i = 0; i < 100; ++i) {
    const double u = rng.uniform(-1.2, 1.2);
    REQUIRE(k.eval(u) == k.eval(-u));
  }
}

TEST_CASE("check_kernel rejects a broken kernel") {
  Kernel bad{[](double u) { return u > 0.0 && u < 1.0 ? 1.0 : 0.0; }, 1.0, "lopsided"};
  REQUIRE_THROWS(check_kernel(bad));
}

TEST_CASE("adaptive simpson on closed forms") {
  REQUIRE(quad::adaptive_simpson([](double x) { return x * x; }, 0.0, 3.0, 1e-10) ==
          Catch::Approx(9.0).margin(1e-9));
  REQUIRE(quad::adaptive_simpson([](double x) { return std::sin(x); }, 0.0, 3.141592653589793,
                                 1e-10) == Catch::Approx(2.0).margin(1e-9));
}

TEST_CASE("self-convolution values at zero for epanechnikov") {
  const Kernel k = epanechnikov();
  // two kernel factors: int K^2 = 3/5 exactly
  REQUIRE(convolution_at_zero(k, 1) == Catch::Approx(0.6).margin(1e-8));
  // three factors: 1269/2560
  REQUIRE(convolution_at_zero(k, 2) == Catch::Approx(1269.0 / 2560.0).margin(1e-8));
  // four factors: 167/385
  REQUIRE(convolution_at_zero(k, 3) == Catch::Approx(167.0 / 385.0).margin(1e-6));
  // five factors: 6891623/17661952
  REQUIRE(convolution_at_zero(k, 4) == Catch::Approx(6891623.0 / 17661952.0).margin(1e-6));
  REQUIRE_THROWS_AS(convolution_at_zero(k, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(convolution_at_zero(k, 5), std::invalid_argument);
}

TEST_CASE("self-convolution matches the nested quadrature oracle") {
  const Kernel k = epanechnikov();
  REQUIRE(std::abs(convolution_at_zero(k, 1) - conv_oracle(k, 1, 0.0, 1e-10)) < 1e-8);
  REQUIRE(std::abs(convolution_at_zero(k, 2) - conv_oracle(k, 2, 0.0, 1e-10)) < 1e-8);
  REQUIRE(std::abs(convolution_at_zero(k, 3) - conv_oracle(k, 3, 0.0, 1e-9)) < 1e-6);
}

TEST_CASE("self-convolution at zero is monotone non-increasing and bounded") {
  const Kernel k = epanechnikov();
  double prev = 0.75;  // sup K
  for (int s = 1; s <= 4; ++s) {
    const double v = convolution_at_zero(k, s);
    REQUIRE(v <= prev + 1e-9);
    REQUIRE(v > 0.0);
    prev = v;
  }
}

TEST_CASE("kernel moments give the rule-of-thumb constant") {
  const Kernel k = epanechnikov();
  REQUIRE(kernel_nu0(k) == Catch::Approx(0.6).margin(1e-10));
  REQUIRE(kernel_mu2(k) == Catch::Approx(0.2).margin(1e-10));
  const double ck = std::pow(kernel_nu0(k) / (kernel_mu2(k) * kernel_mu2(k)), 0.2);
  REQUIRE(ck == Catch::Approx(std::pow(15.0, 0.2)).margin(1e-8));
  REQUIRE(ck == Catch::Approx(1.7187719275874788).margin(1e-8));
}
