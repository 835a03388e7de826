#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "drdose/modifier_test.hpp"
#include "drdose/nuisance.hpp"
#include "drdose/rng.hpp"
#include "drdose/simlab.hpp"
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

NuisanceModel passthrough_nuisance() {
  return NuisanceModel{std::make_shared<ConstPropensity>(0.25), std::make_shared<ZeroOutcome>(),
                       0.01, Provenance::oracle};
}

double theta_oracle(double a, const std::vector<double>& A, const std::vector<double>& xi,
                    double h) {
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

TEST_CASE("identical groups give a zero statistic") {
  Rng rng(1);
  const std::size_t m = 30;
  std::vector<double> A, phi;
  std::vector<int> grp;
  std::vector<double> a0(m), p0(m);
  for (std::size_t i = 0; i < m; ++i) {
    a0[i] = rng.uniform(0.0, 2.0);
    p0[i] = rng.normal();
  }
  for (int g = 0; g < 2; ++g)
    for (std::size_t i = 0; i < m; ++i) {
      A.push_back(a0[i]);
      phi.push_back(p0[i]);
      grp.push_back(g);
    }
  const std::vector<double> h{0.6, 0.6};
  const auto r = modifier_statistic(A, phi, grp, 2, h, WeightSpec{0.2, 1.8, 50}, epanechnikov());
  REQUIRE(r.tnp == 0.0);
}

TEST_CASE("curves offset by a constant integrate to c^2 times the range") {
  Rng rng(2);
  const std::size_t m = 200;
  std::vector<double> A, phi;
  std::vector<int> grp;
  const double c = 0.8;
  for (std::size_t i = 0; i < m; ++i) {
    const double a = rng.uniform(0.0, 2.0);
    const double base = 0.3 * a + 0.1;
    A.push_back(a);
    phi.push_back(base);
    grp.push_back(0);
    A.push_back(a);
    phi.push_back(base + c);
    grp.push_back(1);
  }
  const WeightSpec w{0.2, 1.8, 100};
  const std::vector<double> h{0.5, 0.5};
  const auto r = modifier_statistic(A, phi, grp, 2, h, w, epanechnikov());
  REQUIRE(r.tnp == Catch::Approx(c * c * (w.hi - w.lo)).epsilon(1e-9));
}

TEST_CASE("three groups match the pairwise brute-force oracle") {
  Rng rng(3);
  const WeightSpec w{0.3, 1.7, 60};
  std::vector<double> A, phi;
  std::vector<int> grp;
  std::vector<std::vector<double>> As(3), Ps(3);
  const std::vector<double> h{0.55, 0.7, 0.45};
  for (int g = 0; g < 3; ++g) {
    for (int i = 0; i < 40; ++i) {
      const double a = rng.uniform(0.0, 2.0);
      const double v = std::sin((g + 1) * a) + 0.3 * rng.normal();
      A.push_back(a);
      phi.push_back(v);
      grp.push_back(g);
      As[static_cast<std::size_t>(g)].push_back(a);
      Ps[static_cast<std::size_t>(g)].push_back(v);
    }
  }
  const auto r = modifier_statistic(A, phi, grp, 3, h, w, epanechnikov());

  const auto grid = w.grid();
  double expect = 0.0;
  for (int m2 = 1; m2 < 3; ++m2)
    for (int j = 0; j < m2; ++j) {
      std::vector<double> f(grid.size());
      for (std::size_t g = 0; g < grid.size(); ++g) {
        const double tm = theta_oracle(grid[g], As[static_cast<std::size_t>(m2)],
                                       Ps[static_cast<std::size_t>(m2)],
                                       h[static_cast<std::size_t>(m2)]);
        const double tj = theta_oracle(grid[g], As[static_cast<std::size_t>(j)],
                                       Ps[static_cast<std::size_t>(j)],
                                       h[static_cast<std::size_t>(j)]);
        REQUIRE(std::isfinite(tm));
        REQUIRE(std::isfinite(tj));
        f[g] = (tm - tj) * (tm - tj);
      }
      for (std::size_t g = 0; g + 1 < grid.size(); ++g)
        expect += 0.5 * (f[g] + f[g + 1]) * (grid[g + 1] - grid[g]);
    }
  REQUIRE(r.tnp == Catch::Approx(expect).margin(1e-9));
}

TEST_CASE("relabeling groups leaves the statistic unchanged") {
  Rng rng(4);
  std::vector<double> A, phi;
  std::vector<int> grp;
  for (int g = 0; g < 3; ++g)
    for (int i = 0; i < 35; ++i) {
      A.push_back(rng.uniform(0.0, 2.0));
      phi.push_back(0.2 * g + std::cos(A.back()) + 0.2 * rng.normal());
      grp.push_back(g);
    }
  const WeightSpec w{0.3, 1.7, 40};
  const std::vector<double> h{0.5, 0.6, 0.7};
  const auto r1 = modifier_statistic(A, phi, grp, 3, h, w, epanechnikov());

  // permute codes 0->2, 1->0, 2->1 and the bandwidths with them
  std::vector<int> grp2(grp.size());
  for (std::size_t i = 0; i < grp.size(); ++i) grp2[i] = (grp[i] + 2) % 3;
  const std::vector<double> h2{h[1], h[2], h[0]};
  const auto r2 = modifier_statistic(A, phi, grp2, 3, h2, w, epanechnikov());
  REQUIRE(r1.tnp == Catch::Approx(r2.tnp).epsilon(1e-12));
}

TEST_CASE("adding a constant to all pseudo-outcomes leaves the statistic unchanged") {
  Rng rng(5);
  std::vector<double> A, phi, phi_c;
  std::vector<int> grp;
  for (int g = 0; g < 2; ++g)
    for (int i = 0; i < 50; ++i) {
      A.push_back(rng.uniform(0.0, 2.0));
      phi.push_back(0.4 * g * A.back() + rng.normal());
      phi_c.push_back(phi.back() + 11.25);
      grp.push_back(g);
    }
  const WeightSpec w{0.2, 1.8, 50};
  const std::vector<double> h{0.5, 0.5};
  const auto r1 = modifier_statistic(A, phi, grp, 2, h, w, epanechnikov());
  const auto r2 = modifier_statistic(A, phi_c, grp, 2, h, w, epanechnikov());
  REQUIRE(r1.tnp == Catch::Approx(r2.tnp).epsilon(1e-9));
}

TEST_CASE("a group missing from the weight range is an error, not a silent zero") {
  std::vector<double> A, phi;
  std::vector<int> grp;
  Rng rng(6);
  for (int i = 0; i < 30; ++i) {  // group 0 lives in [0, 1]
    A.push_back(rng.uniform(0.0, 1.0));
    phi.push_back(rng.normal());
    grp.push_back(0);
  }
  for (int i = 0; i < 30; ++i) {  // group 1 lives in [3, 4]: outside the range below
    A.push_back(rng.uniform(3.0, 4.0));
    phi.push_back(rng.normal());
    grp.push_back(1);
  }
  const std::vector<double> h{0.4, 0.4};
  REQUIRE_THROWS_WITH(
      modifier_statistic(A, phi, grp, 2, h, WeightSpec{0.1, 0.9, 30}, epanechnikov()),
      Catch::Matchers::ContainsSubstring("group 1"));
}

TEST_CASE("the full test validates group structure") {
  Rng rng(7);
  const Dataset no_group = gen_model2(100, 0.0, rng);
  const NuisanceModel nm = passthrough_nuisance();
  TestConfig cfg;
  REQUIRE_THROWS_WITH(run_modifier_test(no_group, nm, cfg),
                      Catch::Matchers::ContainsSubstring("group"));

  // single group
  Matrix L(40, 1);
  std::vector<double> a(40), y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    L(i, 0) = rng.normal();
    a[i] = rng.uniform(0.0, 2.0);
    y[i] = rng.normal();
  }
  const Dataset one_group(L, a, y, std::vector<int>(40, 0));
  REQUIRE_THROWS_WITH(run_modifier_test(one_group, nm, cfg),
                      Catch::Matchers::ContainsSubstring("at least 2 groups"));

  // a 10-member group is too small for the procedure
  std::vector<int> small(40, 0);
  for (std::size_t i = 0; i < 10; ++i) small[i] = 1;
  const Dataset tiny(L, a, y, small);
  REQUIRE_THROWS_WITH(run_modifier_test(tiny, nm, cfg),
                      Catch::Matchers::ContainsSubstring("at least 20"));
}

TEST_CASE("modifier test is bit identical across thread counts") {
  Rng rng(8);
  const Dataset ds = gen_modifier(400, 0.3, rng);
  const NuisanceModel nm = oracle_nuisance(SimModelId::modifier, 0.3);
  TestConfig cfg;
  cfg.boot_reps = 48;
  cfg.seed = 11;
  const auto r1 = run_modifier_test(ds, nm, cfg, 1);
  const auto r2 = run_modifier_test(ds, nm, cfg, 2);
  REQUIRE(r1.statistic == r2.statistic);
  REQUIRE(r1.p_value == r2.p_value);
  for (std::size_t b = 0; b < r1.boot_stats.size(); ++b)
    REQUIRE(r1.boot_stats[b] == r2.boot_stats[b]);
  REQUIRE(r1.to_json().dump() == r2.to_json().dump());
}

namespace {

class BumpOutcome final : public OutcomeModel {
public:
  explicit BumpOutcome(double delta) : delta_(delta) {}
  double value(std::span<const double>, double a) const override {
    return delta_ * simconst::bump(a);
  }
  nlohmann::json to_json() const override { return {{"family", "test_bump"}}; }

private:
  double delta_;
};

}  // namespace

TEST_CASE("pooled-null bootstrap p-values are approximately uniform") {
  // Labels independent of everything, so the pooled null holds although the
  // common curve (the dose bump) is far from constant. The outcome regression
  // is free of covariate effects here: with covariate-heavy regressions the
  // within-group empirical averages add noise that is shared across a group
  // and visibly inflates the level at desk-scale n (see the scenario suites).
  const int reps = 300;
  const double delta = 0.4;
  std::vector<double> pvals;
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng(9000 + static_cast<std::uint64_t>(rep));
    const std::size_t n = 400;
    Matrix L(n, 4);
    std::vector<double> a(n), y(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      double l[4];
      for (double& v : l) v = rng.normal();
      for (std::size_t j = 0; j < 4; ++j) L(i, j) = l[j];
      const double lam = 1.0 / (1.0 + std::exp(-(0.1 * l[0] + 0.1 * l[1] - 0.1 * l[2] + 0.2 * l[3])));
      a[i] = 5.0 * rng.beta(lam, 1.0 - lam);
      y[i] = delta * simconst::bump(a[i]) + 0.5 * rng.normal();
      labels[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    const Dataset ds(L, a, y, labels);
    NuisanceModel nm;
    nm.propensity = oracle_propensity(SimModelId::model2);
    nm.outcome = std::make_shared<BumpOutcome>(delta);
    nm.trunc_floor = 0.01;
    nm.provenance = Provenance::oracle;
    TestConfig cfg;
    cfg.boot_reps = 99;
    cfg.seed = 31000 + static_cast<std::uint64_t>(rep);
    const auto r = run_modifier_test(ds, nm, cfg);
    pvals.push_back(r.p_value);
  }
  const double d = oracle::ks_uniform01(pvals);
  REQUIRE(d < oracle::ks_critical(0.01, pvals.size()));
}

TEST_CASE("a strong modifier is detected in most seeded runs") {
  int rejections = 0;
  for (int rep = 0; rep < 5; ++rep) {
    Rng rng(600 + static_cast<std::uint64_t>(rep));
    const Dataset ds = gen_modifier(2000, 0.5, rng);
    const NuisanceModel nm = fit_scenario_nuisance(ds, SimModelId::modifier, 3, 0.01);
    TestConfig cfg;
    cfg.boot_reps = 200;
    cfg.seed = 800 + static_cast<std::uint64_t>(rep);
    const auto r = run_modifier_test(ds, nm, cfg, 2);
    rejections += (r.p_value <= 0.05);
  }
  REQUIRE(rejections >= 3);
}
