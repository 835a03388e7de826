#pragma once

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "drdose/dataset.hpp"
#include "drdose/modifier_test.hpp"
#include "drdose/nuisance.hpp"
#include "drdose/parallel.hpp"
#include "drdose/rng.hpp"
#include "drdose/test_engine.hpp"

namespace drdose {

namespace detail {

inline double logit_lambda(const std::array<double, 5>& c, const double* l) {
  return c[0] + c[1] * l[0] + c[2] * l[1] + c[3] * l[2] + c[4] * l[3];
}

}  // namespace detail

// Binary-outcome generator: L ~ N(0, I4); (A/20)|L ~ Beta(lambda, 1-lambda)
// with logit lambda = -0.8 + 0.1 L1 + 0.1 L2 - 0.1 L3 + 0.2 L4;
// Y | L, A ~ Bernoulli(mu), logit mu = 1 + 0.2 L1 + 0.2 L2 + 0.3 L3 - 0.1 L4
// + delta * A * (0.1 - 0.1 L1 + 0.1 L3 - 0.13^2 A^2).
inline Dataset gen_model1(std::size_t n, double delta, Rng& rng) {
  Matrix L(n, 4);
  std::vector<double> a(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double l[4];
    for (double& v : l) v = rng.normal();
    for (std::size_t j = 0; j < 4; ++j) L(i, j) = l[j];
    const double lam = detail::sigmoid(detail::logit_lambda(simconst::model1_lambda, l));
    a[i] = simconst::model1_scale * rng.beta(lam, 1.0 - lam);
    const double eta = 1.0 + 0.2 * l[0] + 0.2 * l[1] + 0.3 * l[2] - 0.1 * l[3] +
                       delta * a[i] * (0.1 - 0.1 * l[0] + 0.1 * l[2] - 0.13 * 0.13 * a[i] * a[i]);
    y[i] = rng.bernoulli(detail::sigmoid(eta)) ? 1.0 : 0.0;
  }
  return Dataset(std::move(L), std::move(a), std::move(y));
}

// Continuous-outcome generator: L ~ N(0, I4); (A/5)|L ~ Beta(lambda, 1-lambda)
// with logit lambda = 0.1 L1 + 0.1 L2 - 0.1 L3 + 0.2 L4;
// Y | L, A ~ N(mu, 0.5^2), mu = 0.2 L1 + 0.2 L2 + 0.3 L3 - 0.1 L4
// + A (-0.1 L1 + 0.1 L3) + delta * exp{-(A-2.5)^2 / 0.25}.
inline Dataset gen_model2(std::size_t n, double delta, Rng& rng) {
  Matrix L(n, 4);
  std::vector<double> a(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double l[4];
    for (double& v : l) v = rng.normal();
    for (std::size_t j = 0; j < 4; ++j) L(i, j) = l[j];
    const double lam = detail::sigmoid(detail::logit_lambda(simconst::model2_lambda, l));
    a[i] = simconst::model2_scale * rng.beta(lam, 1.0 - lam);
    const double mu = 0.2 * l[0] + 0.2 * l[1] + 0.3 * l[2] - 0.1 * l[3] +
                      a[i] * (-0.1 * l[0] + 0.1 * l[2]) + delta * simconst::bump(a[i]);
    y[i] = mu + 0.5 * rng.normal();
  }
  return Dataset(std::move(L), std::move(a), std::move(y));
}

// Effect-modifier generator: (L1, L2, L3, Lt4) ~ N(0, I4), L4 = 1{Lt4 > 1} is
// observed and doubles as the group label; doses as in the continuous model
// with logit lambda = 0.1 L1 + 0.1 L2 - 0.1 L3 + 0.2 L4;
// Y | L, A ~ N(mu, 0.5^2), mu = 0.2 L1 + 0.2 L2 + 0.3 L3 - 0.1 delta L4
// - 0.1 A L1 + 0.1 delta A L4 + exp{-(A-2.5)^2 / 0.25}.
inline Dataset gen_modifier(std::size_t n, double delta, Rng& rng) {
  Matrix L(n, 4);
  std::vector<double> a(n), y(n);
  std::vector<int> grp(n);
  for (std::size_t i = 0; i < n; ++i) {
    double l[4];
    l[0] = rng.normal();
    l[1] = rng.normal();
    l[2] = rng.normal();
    const double lt4 = rng.normal();
    l[3] = lt4 > 1.0 ? 1.0 : 0.0;
    grp[i] = static_cast<int>(l[3]);
    for (std::size_t j = 0; j < 4; ++j) L(i, j) = l[j];
    const double lam = detail::sigmoid(detail::logit_lambda(simconst::model2_lambda, l));
    a[i] = simconst::model2_scale * rng.beta(lam, 1.0 - lam);
    const double mu = 0.2 * l[0] + 0.2 * l[1] + 0.3 * l[2] - 0.1 * delta * l[3] -
                      0.1 * a[i] * l[0] + 0.1 * delta * a[i] * l[3] + simconst::bump(a[i]);
    y[i] = mu + 0.5 * rng.normal();
  }
  return Dataset(std::move(L), std::move(a), std::move(y), std::move(grp));
}

inline Dataset generate(SimModelId model, std::size_t n, double delta, Rng& rng) {
  switch (model) {
    case SimModelId::model1: return gen_model1(n, delta, rng);
    case SimModelId::model2: return gen_model2(n, delta, rng);
    default: return gen_modifier(n, delta, rng);
  }
}

// effect sizes studied in the power experiments
inline std::vector<double> studied_deltas(SimModelId model) {
  if (model == SimModelId::model1) return {0.0, 0.002, 0.004, 0.006, 0.008, 0.01};
  return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
}

// Nuisance estimation recipes for the four study scenarios:
//   1: propensity fit on the true covariates, outcome fit on scrambled ones
//   2: the mirror image
//   3: both fits on the true covariates
//   4: both fits on the flexible cubic basis
// "Correct" outcome designs: logistic with cubic dose terms for the binary
// model, linear with dose interactions otherwise.
inline NuisanceModel fit_scenario_nuisance(const Dataset& ds, SimModelId model, int scenario,
                                           double trunc_floor) {
  if (scenario < 1 || scenario > 4)
    throw std::invalid_argument("scenario must be in {1, 2, 3, 4}");
  const double scale = dose_scale(model);
  NuisanceModel nm;
  nm.trunc_floor = trunc_floor;
  nm.provenance = scenario == 3 ? Provenance::fitted : Provenance::misspecified;

  const auto fit_outcome = [&](CovariateTransform t) -> std::shared_ptr<const OutcomeModel> {
    if (model == SimModelId::model1) return fit_logistic_outcome(ds, t);
    // the modifier generator carries the dose bump unconditionally, so its
    // correctly specified family includes the bump regressor
    if (model == SimModelId::modifier)
      return fit_linear_outcome(ds, t, OutcomeDesign::linear_interact_bump);
    return fit_linear_outcome(ds, t);
  };

  switch (scenario) {
    case 1:
      nm.propensity = fit_beta_propensity(ds, scale, CovariateTransform::identity);
      nm.outcome = fit_outcome(CovariateTransform::kang_schafer);
      break;
    case 2:
      nm.propensity = fit_beta_propensity(ds, scale, CovariateTransform::kang_schafer);
      nm.outcome = fit_outcome(CovariateTransform::identity);
      break;
    case 3:
      nm.propensity = fit_beta_propensity(ds, scale, CovariateTransform::identity);
      nm.outcome = fit_outcome(CovariateTransform::identity);
      break;
    default:
      nm.propensity = fit_beta_propensity(ds, scale, CovariateTransform::identity,
                                          PropensityBasis::cubic);
      nm.outcome = fit_flex_outcome(ds);
      nm.provenance = Provenance::fitted;
      break;
  }
  return nm;
}

struct SimScenario {
  SimModelId model = SimModelId::model2;
  double delta = 0.0;
  std::size_t n = 1000;
  int nuisance_scenario = 3;
  int reps = 300;
  TestConfig test_cfg;
};

struct RejectionEstimate {
  double rate = 0.0;
  double se = 0.0;
  int reps = 0;
  int failed = 0;
  std::vector<double> p_values;  // of the successful replicates, in replicate order
};

namespace detail {

inline constexpr std::uint64_t kDataStream = 0xDA7A;
inline constexpr std::uint64_t kTestStream = 0x7E57;

}  // namespace detail

// Monte Carlo rejection probability of the configured test. Replicate r draws
// its data from stream (master_seed, r) and calibrates its bootstrap from
// streams (master_seed, r, b); failed replicates are counted, not dropped
// silently, and excluded from the rate denominator.
inline RejectionEstimate run_scenario(const SimScenario& sc, std::uint64_t master_seed,
                                      int threads = 0) {
  if (sc.reps < 1) throw std::invalid_argument("run_scenario: reps must be >= 1");
  const std::size_t reps = static_cast<std::size_t>(sc.reps);
  std::vector<double> pvals(reps, -1.0);  // -1 marks a failed replicate
  const Rng base(master_seed);
  parallel_for(reps, threads, [&](std::size_t r) {
    try {
      Rng data_rng = base.substream(r).substream(detail::kDataStream);
      const Dataset ds = generate(sc.model, sc.n, sc.delta, data_rng);
      const NuisanceModel nm =
          fit_scenario_nuisance(ds, sc.model, sc.nuisance_scenario, sc.test_cfg.trunc_floor);
      TestConfig cfg = sc.test_cfg;
      cfg.seed = base.substream(r).substream(detail::kTestStream).id();
      // replicates run in parallel; each test is serial inside
      if (sc.model == SimModelId::modifier) {
        pvals[r] = run_modifier_test(ds, nm, cfg, 1).p_value;
      } else {
        pvals[r] = run_test(ds, nm, cfg, 1).p_value;
      }
    } catch (const std::exception&) {
      pvals[r] = -1.0;
    }
  });

  RejectionEstimate est;
  est.reps = sc.reps;
  std::size_t ok = 0, reject = 0;
  for (const double p : pvals) {
    if (p < 0.0) {
      ++est.failed;
      continue;
    }
    est.p_values.push_back(p);
    ++ok;
    reject += (p <= sc.test_cfg.alpha);
  }
  if (ok > 0) {
    est.rate = static_cast<double>(reject) / static_cast<double>(ok);
    est.se = std::sqrt(est.rate * (1.0 - est.rate) / static_cast<double>(ok));
  }
  return est;
}

// Scenario grid described by a plain-text key=value config.
struct SimGrid {
  SimModelId model = SimModelId::model2;
  std::vector<int> scenarios{3};
  std::vector<double> deltas{0.0};
  std::vector<std::size_t> ns{1000};
  int reps = 300;
  TestConfig test_cfg;
  std::uint64_t seed = 1;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace detail

// Config format: one `key = value` per line, `#` starts a comment. Keys:
// model, scenarios, deltas, ns, reps, boot, alpha, seed, boot_dist, residual,
// grid, trunc, bandwidth, range.
inline SimGrid parse_sim_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("simulate: cannot open config '" + path + "'");
  SimGrid g;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = true;
      for (char ch : line) blank &= std::isspace(static_cast<unsigned char>(ch)) != 0;
      if (blank) continue;
      throw std::runtime_error("simulate: config line " + std::to_string(lineno) +
                               " is not 'key = value'");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "model") g.model = sim_model_from_string(val);
      else if (key == "scenarios") {
        g.scenarios.clear();
        for (const auto& v : detail::split_list(val)) g.scenarios.push_back(std::stoi(v));
      } else if (key == "deltas") {
        g.deltas.clear();
        for (const auto& v : detail::split_list(val)) g.deltas.push_back(std::stod(v));
      } else if (key == "ns") {
        g.ns.clear();
        for (const auto& v : detail::split_list(val)) g.ns.push_back(std::stoul(v));
      } else if (key == "reps") g.reps = std::stoi(val);
      else if (key == "boot") g.test_cfg.boot_reps = std::stoi(val);
      else if (key == "alpha") g.test_cfg.alpha = std::stod(val);
      else if (key == "seed") g.seed = std::stoull(val);
      else if (key == "boot_dist")
        g.test_cfg.boot_dist = val == "rademacher" ? BootDist::rademacher : BootDist::two_point;
      else if (key == "residual")
        g.test_cfg.residual_mode = val == "global" ? ResidualMode::global : ResidualMode::local;
      else if (key == "grid") {
        g.test_cfg.default_grid_points = std::stoi(val);
        if (g.test_cfg.weight) g.test_cfg.weight->grid_points = g.test_cfg.default_grid_points;
      } else if (key == "trunc") g.test_cfg.trunc_floor = std::stod(val);
      else if (key == "bandwidth" && val != "auto") g.test_cfg.bandwidth = std::stod(val);
      else if (key == "bandwidth") g.test_cfg.bandwidth.reset();
      else if (key == "range") {
        const auto parts = detail::split_list(val);
        if (parts.size() != 2) throw std::runtime_error("range needs 'lo,hi'");
        WeightSpec w;
        w.lo = std::stod(parts[0]);
        w.hi = std::stod(parts[1]);
        w.grid_points = g.test_cfg.default_grid_points;
        g.test_cfg.weight = w;
      } else
        throw std::runtime_error("unknown key '" + key + "'");
    } catch (const std::exception& e) {
      throw std::runtime_error("simulate: config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return g;
}

// Per-cell seed derived from the cell contents, so a grid can be reordered or
// resumed without changing any cell's result.
inline std::uint64_t cell_seed(std::uint64_t master, SimModelId model, int scenario,
                               std::size_t n, double delta) {
  std::uint64_t s = mix64(master);
  s = mix64(s ^ mix64(static_cast<std::uint64_t>(model) + 1));
  s = mix64(s ^ mix64(static_cast<std::uint64_t>(scenario)));
  s = mix64(s ^ mix64(static_cast<std::uint64_t>(n)));
  s = mix64(s ^ mix64(std::bit_cast<std::uint64_t>(delta)));
  return s;
}

}  // namespace drdose
