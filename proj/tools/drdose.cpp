// drdose: nonparametric doubly robust hypothesis tests for continuous
// treatments. Subcommands: test, modifier, curve, simulate, convolve.
// JSON results go to stdout, human-readable logs to stderr; runs are
// reproducible from the seed and independent of --threads.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "drdose/kernel.hpp"
#include "drdose/modifier_test.hpp"
#include "drdose/nuisance.hpp"
#include "drdose/simlab.hpp"
#include "drdose/test_engine.hpp"

namespace {

using namespace drdose;

struct CommonOpts {
  std::string csv_path;
  std::string group_col = "group";
  std::string outcome = "linear";
  std::string propensity = "beta";
  std::string misspecify = "none";
  std::string oracle_model;
  double oracle_delta = 0.0;
  double scale = 0.0;  // 0 = derive from the data
  std::string bandwidth = "auto";
  int boot = 200;
  std::string boot_dist = "twopoint";
  std::string residual = "local";
  double alpha = 0.05;
  std::string range;  // "lo,hi"
  int grid = 100;
  double trunc = 0.01;
  std::uint64_t seed = 1;
  int threads = 0;
  std::string save_curve;
  std::string save_nuisance_path;
  std::string load_nuisance_path;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_group) {
  cmd->add_option("csv", o.csv_path, "input CSV file (columns y, a, l1..ld[, group])")
      ->required();
  if (with_group)
    cmd->add_option("--group-col", o.group_col, "name of the group label column");
  cmd->add_option("--outcome", o.outcome, "outcome regression: linear|logistic|flex")
      ->check(CLI::IsMember({"linear", "logistic", "flex"}));
  cmd->add_option("--propensity", o.propensity, "dose model: beta|flex|oracle")
      ->check(CLI::IsMember({"beta", "flex", "oracle"}));
  cmd->add_option("--misspecify", o.misspecify,
                  "feed scrambled covariates to one nuisance: none|ks-outcome|ks-propensity")
      ->check(CLI::IsMember({"none", "ks-outcome", "ks-propensity"}));
  cmd->add_option("--oracle-model", o.oracle_model,
                  "generator truth for oracle nuisances: model1|model2|modifier");
  cmd->add_option("--oracle-delta", o.oracle_delta, "effect size of the oracle nuisance");
  cmd->add_option("--scale", o.scale,
                  "dose scale R of the Beta model (default: 1.001 * max dose)");
  cmd->add_option("--bandwidth", o.bandwidth, "smoothing bandwidth: auto or a positive number");
  cmd->add_option("--boot", o.boot, "number of wild bootstrap replicates");
  cmd->add_option("--boot-dist", o.boot_dist, "wild weight law: twopoint|rademacher")
      ->check(CLI::IsMember({"twopoint", "rademacher"}));
  cmd->add_option("--residual", o.residual, "bootstrap residuals: local|global")
      ->check(CLI::IsMember({"local", "global"}));
  cmd->add_option("--alpha", o.alpha, "significance level");
  cmd->add_option("--range", o.range, "integration range lo,hi (default: central 95% of doses)");
  cmd->add_option("--grid", o.grid, "number of quadrature grid points");
  cmd->add_option("--trunc", o.trunc, "positivity floor for the propensity denominator");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--threads", o.threads, "worker threads (0 = all cores; results identical)");
  cmd->add_option("--save-curve", o.save_curve, "write the fitted curve(s) as CSV");
  cmd->add_option("--save-nuisance", o.save_nuisance_path, "write the fitted nuisances as JSON");
  cmd->add_option("--load-nuisance", o.load_nuisance_path, "reuse nuisances from a JSON file");
}

TestConfig make_config(const CommonOpts& o) {
  TestConfig cfg;
  if (o.bandwidth != "auto") {
    std::size_t pos = 0;
    const double h = std::stod(o.bandwidth, &pos);
    if (pos != o.bandwidth.size())
      throw std::invalid_argument("--bandwidth must be 'auto' or a number");
    cfg.bandwidth = h;
  }
  cfg.boot_reps = o.boot;
  cfg.boot_dist = o.boot_dist == "rademacher" ? BootDist::rademacher : BootDist::two_point;
  cfg.residual_mode = o.residual == "global" ? ResidualMode::global : ResidualMode::local;
  cfg.alpha = o.alpha;
  cfg.trunc_floor = o.trunc;
  cfg.seed = o.seed;
  cfg.default_grid_points = o.grid;
  if (!o.range.empty()) {
    const auto comma = o.range.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("--range must be 'lo,hi'");
    WeightSpec w;
    w.lo = std::stod(o.range.substr(0, comma));
    w.hi = std::stod(o.range.substr(comma + 1));
    w.grid_points = o.grid;
    cfg.weight = w;
  }
  cfg.validate();
  return cfg;
}

NuisanceModel build_nuisance(const CommonOpts& o, const Dataset& ds) {
  if (!o.load_nuisance_path.empty()) {
    NuisanceModel nm = load_nuisance(o.load_nuisance_path);
    nm.trunc_floor = o.trunc;
    return nm;
  }
  const CovariateTransform t_out = o.misspecify == "ks-outcome"
                                       ? CovariateTransform::kang_schafer
                                       : CovariateTransform::identity;
  const CovariateTransform t_prop = o.misspecify == "ks-propensity"
                                        ? CovariateTransform::kang_schafer
                                        : CovariateTransform::identity;
  NuisanceModel nm;
  nm.trunc_floor = o.trunc;
  nm.provenance = o.misspecify != "none" ? Provenance::misspecified : Provenance::fitted;

  std::optional<SimModelId> oracle_id;
  if (!o.oracle_model.empty()) oracle_id = sim_model_from_string(o.oracle_model);

  if (o.propensity == "oracle") {
    if (!oracle_id)
      throw std::invalid_argument("--propensity oracle requires --oracle-model");
    nm.propensity = oracle_propensity(*oracle_id);
    nm.provenance = Provenance::oracle;
  } else {
    double scale = o.scale;
    if (scale <= 0.0) {
      const auto [a_min, a_max] = treatment_range(ds);
      if (a_min <= 0.0)
        throw std::invalid_argument(
            "doses must be positive to fit the Beta model; pass --scale explicitly");
      scale = 1.001 * a_max;
    }
    const PropensityBasis basis =
        o.propensity == "flex" ? PropensityBasis::cubic : PropensityBasis::linear;
    auto fit = fit_beta_propensity(ds, scale, t_prop, basis);
    if (fit->fit_info() && !fit->fit_info()->converged)
      std::cerr << "warning: dose model fit stopped after " << fit->fit_info()->iterations
                << " iterations (gradient " << fit->fit_info()->grad_norm << ")\n";
    nm.propensity = std::move(fit);
  }

  if (o.outcome == "oracle") {
    if (!oracle_id)
      throw std::invalid_argument("--outcome oracle requires --oracle-model");
    nm.outcome = std::make_shared<OracleOutcomeModel>(*oracle_id, o.oracle_delta);
  } else if (o.outcome == "logistic") {
    auto fit = fit_logistic_outcome(ds, t_out);
    if (fit->fit_info() && fit->fit_info()->separation)
      std::cerr << "warning: logistic outcome fit hit complete separation; "
                   "probabilities are clipped\n";
    nm.outcome = std::move(fit);
  } else if (o.outcome == "flex") {
    nm.outcome = fit_flex_outcome(ds, t_out);
  } else {
    nm.outcome = fit_linear_outcome(ds, t_out);
  }
  return nm;
}

int cmd_test(const CommonOpts& o) {
  const CsvSchema schema{.outcome = "y", .treatment = "a", .covariate_prefix = "l",
                         .group = o.group_col};
  const Dataset ds = load_csv(o.csv_path, schema);
  const TestConfig cfg = make_config(o);
  const NuisanceModel nm = build_nuisance(o, ds);
  if (!o.save_nuisance_path.empty()) save_nuisance(nm, o.save_nuisance_path);

  const TestResult res = run_test(ds, nm, cfg, o.threads);
  if (!o.save_curve.empty()) save_curve_csv(res.curve, o.save_curve);
  std::cout << res.to_json().dump(2) << '\n';
  std::cerr << "n = " << res.n << ", h = " << res.bandwidth << ", T = " << res.statistic
            << ", p = " << res.p_value << " ("
            << (res.statistic > res.critical_value ? "reject" : "keep") << " the no-effect null at "
            << cfg.alpha << ")\n";
  return 0;
}

int cmd_modifier(const CommonOpts& o) {
  const CsvSchema schema{.outcome = "y", .treatment = "a", .covariate_prefix = "l",
                         .group = o.group_col};
  const Dataset ds = load_csv(o.csv_path, schema);
  if (!ds.has_group())
    throw std::invalid_argument("modifier test needs a '" + o.group_col + "' column");
  if (ds.n_groups() < 2) throw std::invalid_argument("need >= 2 groups in '" + o.group_col + "'");
  const TestConfig cfg = make_config(o);
  const NuisanceModel nm = build_nuisance(o, ds);
  if (!o.save_nuisance_path.empty()) save_nuisance(nm, o.save_nuisance_path);

  const ModifierTestResult res = run_modifier_test(ds, nm, cfg, o.threads);
  if (!o.save_curve.empty()) {
    save_curve_csv(res.pooled_curve, o.save_curve);
    for (std::size_t g = 0; g < res.group_curves.size(); ++g)
      save_curve_csv(res.group_curves[g], o.save_curve + ".group" + std::to_string(g));
  }
  std::cout << res.to_json().dump(2) << '\n';
  std::cerr << "n = " << res.n << " in " << res.group_sizes.size() << " groups, T = "
            << res.statistic << ", p = " << res.p_value << " ("
            << (res.statistic > res.critical_value ? "reject" : "keep")
            << " the no-modification null at " << cfg.alpha << ")\n";
  return 0;
}

int cmd_curve(const CommonOpts& o, const std::string& out_path) {
  const CsvSchema schema{.outcome = "y", .treatment = "a", .covariate_prefix = "l",
                         .group = o.group_col};
  const Dataset ds = load_csv(o.csv_path, schema);
  const TestConfig cfg = make_config(o);
  const NuisanceModel nm = build_nuisance(o, ds);
  if (!o.save_nuisance_path.empty()) save_nuisance(nm, o.save_nuisance_path);

  const Kernel k = epanechnikov();
  const PseudoOutcomes xi = compute_xi(ds, nm, o.threads);
  const auto [a_min, a_max] = treatment_range(ds);
  const WeightSpec w = cfg.resolve_weight(ds);
  w.validate(a_min, a_max);
  const double h = cfg.bandwidth ? *cfg.bandwidth : rot_bandwidth(ds.treatment(), xi.values, k);
  const CurveEstimate curve = fit_grid(w.grid(), ds.treatment(), xi.values, h, k, 0.2, o.threads);
  if (!out_path.empty()) {
    save_curve_csv(curve, out_path);
  } else {
    std::cout << "a,theta,slope,flagged\n";
    for (std::size_t g = 0; g < curve.grid.size(); ++g)
      std::cout << format_double(curve.grid[g]) << ',' << format_double(curve.theta[g]) << ','
                << format_double(curve.slope[g]) << ',' << static_cast<int>(curve.flagged[g])
                << '\n';
  }
  std::cerr << "fitted effect curve on [" << w.lo << ", " << w.hi << "] with h = " << h << '\n';
  return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& out_path, int threads) {
  const SimGrid grid = parse_sim_grid(config_path);

  std::set<std::string> done;
  const bool to_file = !out_path.empty();
  bool have_header = false;
  if (to_file && std::filesystem::exists(out_path)) {  // resume: skip completed cells
    std::ifstream in(out_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("model,", 0) == 0) {
        have_header = true;
        continue;
      }
      std::istringstream ss(line);
      std::string model, scen, n, delta;
      std::getline(ss, model, ',');
      std::getline(ss, scen, ',');
      std::getline(ss, n, ',');
      std::getline(ss, delta, ',');
      if (!delta.empty()) done.insert(model + "," + scen + "," + n + "," + delta);
    }
    if (!done.empty())
      std::cerr << "resuming: " << done.size() << " cell(s) already in " << out_path << '\n';
  }

  std::ofstream file;
  if (to_file) file.open(out_path, std::ios::app);
  std::ostream& out = to_file ? file : std::cout;
  if (!have_header) {
    out << "model,scenario,n,delta,rate,se,failed\n";
    out.flush();
  }

  for (const int scen : grid.scenarios) {
    for (const std::size_t n : grid.ns) {
      for (const double delta : grid.deltas) {
        std::ostringstream key;
        key << to_string(grid.model) << ',' << scen << ',' << n << ',' << format_double(delta);
        if (done.count(key.str())) continue;
        SimScenario sc;
        sc.model = grid.model;
        sc.delta = delta;
        sc.n = n;
        sc.nuisance_scenario = scen;
        sc.reps = grid.reps;
        sc.test_cfg = grid.test_cfg;
        const auto t0 = std::chrono::steady_clock::now();
        const RejectionEstimate est =
            run_scenario(sc, cell_seed(grid.seed, grid.model, scen, n, delta), threads);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out << key.str() << ',' << format_double(est.rate) << ',' << format_double(est.se) << ','
            << est.failed << '\n';
        out.flush();
        std::cerr << key.str() << ": rate " << est.rate << " +- " << est.se << " (" << est.failed
                  << " failed, " << secs << " s)\n";
      }
    }
  }
  return 0;
}

int cmd_convolve(int s, double tol) {
  const Kernel k = epanechnikov();
  const double value = convolution_at_zero(k, s, tol);
  nlohmann::json j{{"kernel", k.id}, {"s", s}, {"kernel_factors", s + 1}, {"value", value}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nonparametric doubly robust tests for continuous treatment effects"};
  app.require_subcommand(1);

  CommonOpts test_opts, mod_opts, curve_opts;
  std::string curve_out, sim_config, sim_out;
  int sim_threads = 0;
  int conv_s = 1;
  double conv_tol = 1e-9;

  auto* c_test = app.add_subcommand("test", "test whether the dose has any effect on the outcome");
  add_common(c_test, test_opts, true);

  auto* c_mod = app.add_subcommand("modifier",
                                   "test whether a discrete covariate modifies the dose effect");
  add_common(c_mod, mod_opts, true);

  auto* c_curve = app.add_subcommand("curve", "fit and export the dose-response curve");
  add_common(c_curve, curve_opts, true);
  c_curve->add_option("--out", curve_out, "output CSV path (default: stdout)");

  auto* c_sim = app.add_subcommand("simulate", "run a scenario grid from a config file");
  c_sim->add_option("config", sim_config, "plain-text key = value config")->required();
  c_sim->add_option("--out", sim_out, "output CSV path (appends; completed cells are skipped)");
  c_sim->add_option("--threads", sim_threads, "worker threads (0 = all cores)");

  auto* c_conv = app.add_subcommand("convolve", "kernel self-convolution value at zero");
  c_conv->add_option("--s", conv_s, "number of convolution steps (1..4)")->required();
  c_conv->add_option("--tol", conv_tol, "absolute quadrature tolerance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_test->parsed()) return cmd_test(test_opts);
    if (c_mod->parsed()) return cmd_modifier(mod_opts);
    if (c_curve->parsed()) return cmd_curve(curve_opts, curve_out);
    if (c_sim->parsed()) return cmd_simulate(sim_config, sim_out, sim_threads);
    if (c_conv->parsed()) return cmd_convolve(conv_s, conv_tol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
