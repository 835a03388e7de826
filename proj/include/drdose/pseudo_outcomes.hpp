#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "drdose/dataset.hpp"
#include "drdose/nuisance_base.hpp"
#include "drdose/parallel.hpp"

namespace drdose {

enum class PseudoKind { marginal, conditional };

struct PseudoOutcomes {
  std::vector<double> values;
  PseudoKind kind = PseudoKind::marginal;
  std::optional<std::vector<int>> group;
};

namespace detail {

// xi_i = (Y_i - mu(L_i, A_i)) / max(pi(A_i | L_i), floor) * mean_j pi(A_i | L_j)
//        + mean_j mu(L_j, A_i)
// with the j-averages taken over `rows` (the whole sample, or one group). The
// positivity floor applies only to the denominator. Each row's j-sum is
// accumulated serially inside the mixture, so results do not depend on the
// thread count.
inline void fill_pseudo(const Dataset& ds, const NuisanceModel& nm,
                        std::span<const std::uint32_t> rows, std::vector<double>& out,
                        int threads) {
  const auto& L = ds.covariates();
  const auto pmix = nm.propensity->mixture(L, rows);
  const auto omix = nm.outcome->mixture(L, rows);
  const double inv_m = 1.0 / static_cast<double>(rows.size());
  parallel_for(rows.size(), threads, [&](std::size_t idx) {
    const std::uint32_t i = rows[idx];
    const double a = ds.treatment()[i];
    const double mu_i = nm.outcome->value(L.row(i), a);
    if (!std::isfinite(mu_i))
      throw std::runtime_error("pseudo-outcome: outcome model returned a non-finite value at data row " +
                               std::to_string(i + 1));
    const double pi_i = nm.propensity->density(a, L.row(i));
    if (!std::isfinite(pi_i))
      throw std::runtime_error("pseudo-outcome: propensity model returned a non-finite value at data row " +
                               std::to_string(i + 1));
    const double pi_trunc = std::max(pi_i, nm.trunc_floor);
    if (!(pi_trunc > 0.0))
      throw std::runtime_error("pseudo-outcome: propensity is zero (and trunc_floor is zero) at data row " +
                               std::to_string(i + 1));
    const double varpi = pmix->sum(a) * inv_m;
    if (!std::isfinite(varpi))
      throw std::runtime_error("pseudo-outcome: propensity average is non-finite at data row " +
                               std::to_string(i + 1));
    const double m_hat = omix->sum(a) * inv_m;
    if (!std::isfinite(m_hat))
      throw std::runtime_error("pseudo-outcome: outcome average is non-finite at data row " +
                               std::to_string(i + 1));
    const double xi = (ds.outcome()[i] - mu_i) / pi_trunc * varpi + m_hat;
    if (!std::isfinite(xi))
      throw std::runtime_error("pseudo-outcome: non-finite value at data row " + std::to_string(i + 1));
    out[i] = xi;
  });
}

}  // namespace detail

// Doubly robust pseudo-outcome for the marginal effect curve; the empirical
// averages run over the full sample, including j = i.
inline PseudoOutcomes compute_xi(const Dataset& ds, const NuisanceModel& nm, int threads = 0) {
  std::vector<std::uint32_t> all(ds.n());
  std::iota(all.begin(), all.end(), 0u);
  PseudoOutcomes out;
  out.kind = PseudoKind::marginal;
  out.values.assign(ds.n(), 0.0);
  detail::fill_pseudo(ds, nm, all, out.values, threads);
  if (ds.has_group()) out.group = std::vector<int>(ds.group().begin(), ds.group().end());
  return out;
}

// Conditional variant for the effect-modifier test: the empirical averages run
// only over rows sharing the observation's group label.
inline PseudoOutcomes compute_phi(const Dataset& ds, const NuisanceModel& nm, int threads = 0) {
  if (!ds.has_group())
    throw std::invalid_argument("compute_phi: dataset has no group column");
  const auto groups = ds.group_indices();
  for (std::size_t g = 0; g < groups.size(); ++g)
    if (groups[g].size() < 2)
      throw std::invalid_argument("compute_phi: group " + std::to_string(g) +
                                  " has fewer than 2 members");
  PseudoOutcomes out;
  out.kind = PseudoKind::conditional;
  out.values.assign(ds.n(), 0.0);
  for (const auto& rows : groups) detail::fill_pseudo(ds, nm, rows, out.values, threads);
  out.group = std::vector<int>(ds.group().begin(), ds.group().end());
  return out;
}

}  // namespace drdose
