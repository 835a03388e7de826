#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <vector>

#include "drdose/nuisance.hpp"
#include "drdose/rng.hpp"
#include "drdose/simlab.hpp"
#include "drdose/test_engine.hpp"
#include "oracles.hpp"

using namespace drdose;

namespace {

class ConstPropensity final : public PropensityModel {
public:
  explicit ConstPropensity(double c) : c_(c) {}
  double density(double, std::span<const double>) const override { return c_; }
  nlohmann::json to_json() const override { return {{"family", "test_const"}}; }

private:
  double c_;
};

class ZeroOutcome final : public OutcomeModel {
public:
  double value(std::span<const double>, double) const override { return 0.0; }
  nlohmann::json to_json() const override { return {{"family", "test_zero"}}; }
};

// nuisance pair that passes Y through as the pseudo-outcome
NuisanceModel passthrough_nuisance() {
  return NuisanceModel{std::make_shared<ConstPropensity>(0.25), std::make_shared<ZeroOutcome>(),
                       0.01, Provenance::oracle};
}

// theta at a single point by an independent weighted normal-equation solve
double theta_oracle(double a, std::span<const double> A, std::span<const double> xi, double h) {
  std::vector<std::vector<double>> X;
  std::vector<double> w, y;
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double u = (A[i] - a) / h;
    const double kv = std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
    if (kv <= 0.0) continue;
    X.push_back({1.0, u});
    w.push_back(kv);
    y.push_back(xi[i]);
  }
  if (X.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  return oracle::wls_normal_equations(X, y, w)[0];
}

}  // namespace

TEST_CASE("two-point draw constants and moment identities") {
  const double s5 = std::sqrt(5.0);
  const double p_down = (s5 + 1.0) / (2.0 * s5);
  REQUIRE(p_down == Catch::Approx(0.7236067977499789).margin(1e-15));
  const double a = (s5 - 1.0) / 2.0;  // magnitude of the down move
  const double b = (s5 + 1.0) / 2.0;
  // exact algebra: mean zero, second and third moments preserved
  REQUIRE(p_down * (-a) + (1.0 - p_down) * b == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(p_down * a * a + (1.0 - p_down) * b * b == Catch::Approx(1.0).margin(1e-14));
  REQUIRE(p_down * (-a * a * a) + (1.0 - p_down) * b * b * b ==
          Catch::Approx(1.0).margin(1e-14));
}

TEST_CASE("two-point draws match the first three moments by Monte Carlo") {
  const double eps = 1.7;
  const std::size_t n = 1000000;
  std::vector<double> e(n, eps);
  Rng rng(42);
  const auto draws = wild_draw(e, BootDist::two_point, rng);
  double m1 = 0, m2 = 0, m3 = 0;
  for (const double d : draws) {
    m1 += d;
    m2 += d * d;
    m3 += d * d * d;
  }
  m1 /= n;
  m2 /= n;
  m3 /= n;
  const double rootn = std::sqrt(static_cast<double>(n));
  // per-element SDs of x, x^2, x^3 for the golden two-point law
  REQUIRE(std::abs(m1 - 0.0) < 4.0 * eps / rootn);
  REQUIRE(std::abs(m2 - eps * eps) < 4.0 * eps * eps / rootn);
  const double sd3 = std::sqrt(5.0) * std::pow(eps, 3.0);  // E x^6 = 6 eps^6 -> var x^3 = 5 eps^6
  REQUIRE(std::abs(m3 - eps * eps * eps) < 4.0 * sd3 / rootn);
}

TEST_CASE("rademacher draws match the even moments and symmetry") {
  const double eps = 0.9;
  const std::size_t n = 1000000;
  std::vector<double> e(n, eps);
  Rng rng(43);
  const auto draws = wild_draw(e, BootDist::rademacher, rng);
  double m1 = 0, m2 = 0, m4 = 0;
  for (const double d : draws) {
    REQUIRE(std::abs(d) == eps);
    m1 += d;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m1 /= n;
  m2 /= n;
  m4 /= n;
  REQUIRE(std::abs(m1) < 4.0 * eps / std::sqrt(static_cast<double>(n)));
  REQUIRE(m2 == Catch::Approx(eps * eps).margin(1e-12));  // |d| = eps always
  REQUIRE(m4 == Catch::Approx(std::pow(eps, 4.0)).margin(1e-12));
}

TEST_CASE("wild residuals in both modes") {
  const std::vector<double> xi{1.0, 2.0, 3.0};
  const Residuals glob = wild_residuals(xi, {}, ResidualMode::global);
  REQUIRE(glob.eps[0] == -1.0);
  REQUIRE(glob.eps[1] == 0.0);
  REQUIRE(glob.eps[2] == 1.0);

  // local residuals vanish on a linear response
  Rng rng(7);
  const std::size_t n = 80;
  std::vector<double> A(n), lin(n);
  for (std::size_t i = 0; i < n; ++i) {
    A[i] = rng.uniform(0.0, 2.0);
    lin[i] = 0.7 - 0.4 * A[i];
  }
  const auto fits = fit_at_points(A, A, lin, 0.5, epanechnikov());
  const Residuals loc = wild_residuals(lin, fits, ResidualMode::local);
  REQUIRE(loc.fallback_count == 0);
  for (const double e : loc.eps) REQUIRE(std::abs(e) < 1e-10);

  // global residuals sum to zero up to rounding
  std::vector<double> noisy(n);
  for (auto& v : noisy) v = rng.normal() * 10.0;
  const Residuals g2 = wild_residuals(noisy, {}, ResidualMode::global);
  const double s = std::accumulate(g2.eps.begin(), g2.eps.end(), 0.0);
  REQUIRE(std::abs(s) <= 1e-12 * static_cast<double>(n) * 10.0);
}

TEST_CASE("statistic vanishes for constant pseudo-outcomes") {
  Rng rng(8);
  const std::size_t n = 50;
  std::vector<double> A(n), xi(n, 3.25);
  for (auto& a : A) a = rng.uniform(0.0, 1.0);
  const auto r = test_statistic(A, xi, 0.3, epanechnikov(), WeightSpec{0.1, 0.9, 50});
  REQUIRE(r.tn == 0.0);
  REQUIRE(r.center == 3.25);
}

TEST_CASE("statistic is nonnegative and scales quadratically") {
  Rng rng(9);
  const std::size_t n = 150;
  std::vector<double> A(n), xi(n), xi_c(n);
  const double c = 1.3;
  for (std::size_t i = 0; i < n; ++i) {
    A[i] = rng.uniform(0.0, 2.0);
    xi[i] = std::sin(3.0 * A[i]) + rng.normal();
    xi_c[i] = c * xi[i];
  }
  const WeightSpec w{0.2, 1.8, 100};
  const auto r = test_statistic(A, xi, 0.4, epanechnikov(), w);
  const auto rc = test_statistic(A, xi_c, 0.4, epanechnikov(), w);
  REQUIRE(r.tn >= 0.0);
  REQUIRE(rc.tn == Catch::Approx(c * c * r.tn).epsilon(1e-9));
}

TEST_CASE("statistic matches an independent oracle on a seeded dataset") {
  Rng rng(20);
  const std::size_t n = 20;
  std::vector<double> A(n), xi(n);
  for (std::size_t i = 0; i < n; ++i) {
    A[i] = rng.uniform(0.0, 2.0);
    xi[i] = std::sin(2.0 * A[i]) + 0.5 * rng.normal();
  }
  const double h = 0.5;
  const WeightSpec w{0.2, 1.8, 200};
  const auto r = test_statistic(A, xi, h, epanechnikov(), w);

  // independent path: oracle WLS at every grid node, trapezoid assembled by hand
  double center = 0.0;
  for (const double v : xi) center += v;
  center /= static_cast<double>(n);
  const auto grid = w.grid();
  std::vector<double> f(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double th = theta_oracle(grid[g], A, xi, h);
    REQUIRE(std::isfinite(th));
    f[g] = (th - center) * (th - center);
  }
  double integral = 0.0;
  for (std::size_t g = 0; g + 1 < grid.size(); ++g)
    integral += 0.5 * (f[g] + f[g + 1]) * (grid[g + 1] - grid[g]);
  const double tn_oracle = static_cast<double>(n) * std::sqrt(h) * integral;
  REQUIRE(r.tn == Catch::Approx(tn_oracle).epsilon(1e-6));

  // the grid discretization tracks the continuous integral
  const double continuous = oracle::integrate(
      [&](double a) {
        const double th = theta_oracle(a, A, xi, h);
        return (th - center) * (th - center);
      },
      w.lo, w.hi, 1e-10);
  REQUIRE(r.tn == Catch::Approx(static_cast<double>(n) * std::sqrt(h) * continuous).epsilon(5e-3));
}

TEST_CASE("flagged grid points contribute zero and are reported") {
  // two clusters of doses with a hole wider than the window
  std::vector<double> A, xi;
  Rng rng(21);
  for (int i = 0; i < 80; ++i) {
    const double side = i % 2 == 0 ? 0.0 : 2.4;
    A.push_back(side + rng.uniform(0.0, 1.4));
    xi.push_back(rng.normal());
  }
  const WeightSpec w{0.1, 3.6, 40};
  const auto r = test_statistic(A, xi, 0.25, epanechnikov(), w);
  REQUIRE(r.curve.flagged_count() > 0);
  // recompute the integral from the published curve: flagged points drop out
  double integral = 0.0;
  auto val = [&](std::size_t g) {
    if (r.curve.flagged[g]) return 0.0;
    const double d = r.curve.theta[g] - r.center;
    return d * d;
  };
  for (std::size_t g = 0; g + 1 < r.curve.grid.size(); ++g)
    integral += 0.5 * (val(g) + val(g + 1)) * (r.curve.grid[g + 1] - r.curve.grid[g]);
  REQUIRE(r.tn == static_cast<double>(A.size()) * std::sqrt(0.25) * integral);
}

TEST_CASE("degenerate constant input gives p = 1 and zero statistic") {
  Rng rng(22);
  const std::size_t n = 60;
  Matrix L(n, 1);
  std::vector<double> a(n), y(n, 7.5);
  for (std::size_t i = 0; i < n; ++i) {
    L(i, 0) = rng.normal();
    a[i] = rng.uniform(0.0, 2.0);
  }
  const Dataset ds(L, a, y);
  TestConfig cfg;
  cfg.boot_reps = 99;
  cfg.seed = 5;
  const TestResult r = run_test(ds, passthrough_nuisance(), cfg);
  REQUIRE(r.degenerate);
  REQUIRE(r.statistic == 0.0);
  REQUIRE(r.p_value == 1.0);
}

TEST_CASE("seeded runs are bit identical across thread counts") {
  Rng rng(23);
  const Dataset ds = gen_model2(300, 0.3, rng);
  const NuisanceModel nm = oracle_nuisance(SimModelId::model2, 0.3);
  TestConfig cfg;
  cfg.boot_reps = 64;
  cfg.seed = 99;
  const TestResult r1 = run_test(ds, nm, cfg, 1);
  const TestResult r2 = run_test(ds, nm, cfg, 2);
  const TestResult r3 = run_test(ds, nm, cfg, 4);
  REQUIRE(r1.statistic == r2.statistic);
  REQUIRE(r1.p_value == r2.p_value);
  REQUIRE(r1.critical_value == r2.critical_value);
  REQUIRE(r1.p_value == r3.p_value);
  for (std::size_t b = 0; b < r1.boot_stats.size(); ++b) {
    REQUIRE(r1.boot_stats[b] == r2.boot_stats[b]);
    REQUIRE(r1.boot_stats[b] == r3.boot_stats[b]);
  }
  REQUIRE(r1.to_json().dump() == r2.to_json().dump());
}

TEST_CASE("bootstrap statistics ignore a constant shift of the pseudo-outcomes") {
  // passthrough nuisances on lattice outcomes: y and y + 2048 give identical
  // residuals, draws and bootstrap statistics
  Rng rng(24);
  const std::size_t n = 120;
  Matrix L(n, 1);
  std::vector<double> a(n), y(n), y_shift(n);
  for (std::size_t i = 0; i < n; ++i) {
    L(i, 0) = rng.normal();
    a[i] = std::round(rng.uniform(0.0, 2.0) * 4096.0) / 4096.0;
    y[i] = std::round(rng.normal() * 4096.0) / 4096.0;
    y_shift[i] = y[i] + 2048.0;
  }
  TestConfig cfg;
  cfg.boot_reps = 50;
  cfg.seed = 7;
  cfg.bandwidth = 0.5;
  const TestResult r1 = run_test(Dataset(L, a, y), passthrough_nuisance(), cfg);
  const TestResult r2 = run_test(Dataset(L, a, y_shift), passthrough_nuisance(), cfg);
  for (std::size_t b = 0; b < r1.boot_stats.size(); ++b)
    REQUIRE(r1.boot_stats[b] == r2.boot_stats[b]);
  REQUIRE(r1.statistic == Catch::Approx(r2.statistic).epsilon(1e-9));
}

TEST_CASE("p-value and critical value follow the bootstrap conventions") {
  Rng rng(25);
  const Dataset ds = gen_model2(200, 0.0, rng);
  const NuisanceModel nm = oracle_nuisance(SimModelId::model2, 0.0);
  TestConfig cfg;
  cfg.boot_reps = 39;
  cfg.seed = 1;
  const TestResult r = run_test(ds, nm, cfg);
  const int B = cfg.boot_reps;
  // p = (1 + #{boot >= tn}) / (B + 1)
  int count = 0;
  for (const double b : r.boot_stats) count += (b >= r.statistic);
  REQUIRE(r.p_value == Catch::Approx((1.0 + count) / (B + 1.0)).margin(1e-15));
  REQUIRE(r.p_value >= 1.0 / (B + 1.0));
  REQUIRE(r.p_value <= 1.0);
  // critical value = ceil((1-alpha)(B+1))-th order statistic
  std::vector<double> sorted(r.boot_stats);
  std::sort(sorted.begin(), sorted.end());
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * (B + 1)));
  REQUIRE(r.critical_value == sorted[std::min<std::size_t>(rank, sorted.size()) - 1]);
}

TEST_CASE("null mean diagnostic matches the homoskedastic closed form") {
  Rng rng(26);
  const std::size_t n = 5000;
  std::vector<double> A(n), xi(n);
  const double s2 = 0.49;  // noise variance
  for (std::size_t i = 0; i < n; ++i) {
    A[i] = rng.uniform(0.0, 1.0);
    xi[i] = 2.0 + 0.7 * rng.normal();
  }
  const double h = 0.1;
  const WeightSpec w{0.1, 0.9, 100};
  const auto at_obs = fit_at_points(A, A, xi, h, epanechnikov());
  const auto diag = asymptotic_null_params(A, xi, h, epanechnikov(), w, at_obs);
  // uniform density 1 on [0,1], sigma^2(a) = s2: b0h = K2(0) * s2 * 0.8 / sqrt(h)
  const double expect = 0.6 * s2 * 0.8 / std::sqrt(h);
  REQUIRE(diag.b0h == Catch::Approx(expect).epsilon(0.15));
  // printed null-variance constant uses the same integral with the 4-fold factor
  const double ratio = diag.v_plain / diag.b0h;
  REQUIRE(ratio == Catch::Approx(2.0 * (167.0 / 385.0) / 0.6 * std::sqrt(h)).epsilon(1e-6));
  REQUIRE(diag.v_squared_integrand > 0.0);
}

TEST_CASE("scaling residuals by two scales the diagnostics by four exactly") {
  Rng rng(27);
  const std::size_t n = 400;
  std::vector<double> A(n), xi(n), xi2(n);
  for (std::size_t i = 0; i < n; ++i) {
    A[i] = std::round(rng.uniform(0.0, 1.0) * 4096.0) / 4096.0;
    xi[i] = std::round(rng.normal() * 4096.0) / 4096.0;
    xi2[i] = 2.0 * xi[i];
  }
  const double h = 0.15;
  const WeightSpec w{0.1, 0.9, 60};
  const auto f1 = fit_at_points(A, A, xi, h, epanechnikov());
  const auto f2 = fit_at_points(A, A, xi2, h, epanechnikov());
  const auto d1 = asymptotic_null_params(A, xi, h, epanechnikov(), w, f1);
  const auto d2 = asymptotic_null_params(A, xi2, h, epanechnikov(), w, f2);
  REQUIRE(d2.b0h == 4.0 * d1.b0h);
  REQUIRE(d2.v_plain == 4.0 * d1.v_plain);
}

TEST_CASE("bootstrap mean tracks the null mean diagnostic") {
  Rng rng(28);
  const std::size_t n = 5000;
  Matrix L(n, 1);
  std::vector<double> a(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    L(i, 0) = rng.normal();
    a[i] = rng.uniform(0.0, 1.0);
    y[i] = 1.0 + 0.6 * rng.normal();
  }
  const Dataset ds(L, a, y);
  TestConfig cfg;
  cfg.boot_reps = 300;
  cfg.seed = 31;
  // small bandwidth: the O(h) mean-centering term must sit inside the MC band
  cfg.bandwidth = 0.025;
  cfg.weight = WeightSpec{0.1, 0.9, 100};
  const TestResult r = run_test(ds, passthrough_nuisance(), cfg);
  const double mean_boot = oracle::mean(r.boot_stats);
  const double se = oracle::sd(r.boot_stats) / std::sqrt(static_cast<double>(cfg.boot_reps));
  REQUIRE(std::abs(mean_boot - r.diag.b0h) <= 3.0 * se);
}

TEST_CASE("p-values are uniform under an iid noise null") {
  const int reps = 300;
  std::vector<double> pvals;
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng(5000 + static_cast<std::uint64_t>(rep));
    const std::size_t n = 150;
    Matrix L(n, 1);
    std::vector<double> a(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      L(i, 0) = rng.normal();
      a[i] = rng.uniform(0.0, 2.0);
      y[i] = 0.5 + rng.normal();
    }
    const Dataset ds(L, a, y);
    TestConfig cfg;
    cfg.boot_reps = 99;
    cfg.seed = 77000 + static_cast<std::uint64_t>(rep);
    const TestResult r = run_test(ds, passthrough_nuisance(), cfg);
    pvals.push_back(r.p_value);
  }
  const double d = oracle::ks_uniform01(pvals);
  REQUIRE(d < oracle::ks_critical(0.01, pvals.size()));
}

TEST_CASE("weight range outside the data is rejected") {
  Rng rng(29);
  const Dataset ds = gen_model2(100, 0.0, rng);
  const NuisanceModel nm = oracle_nuisance(SimModelId::model2, 0.0);
  TestConfig cfg;
  cfg.weight = WeightSpec{-1.0, 4.0, 50};
  REQUIRE_THROWS_WITH(run_test(ds, nm, cfg),
                      Catch::Matchers::ContainsSubstring("treatment range"));
}
