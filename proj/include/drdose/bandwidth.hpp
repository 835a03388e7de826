#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include "drdose/kernel.hpp"

namespace drdose {

// Rule-of-thumb bandwidth for local linear regression:
//
//   h = C_K * [ sigma2 * (a_max - a_min) / sum_i mdd(A_i)^2 ]^{1/5}
//
// where a global quartic pilot is fit to (a, xi) by least squares, mdd is the
// pilot's second derivative, sigma2 its residual variance (RSS / (n - 5)), and
// C_K = (nu0 / mu2^2)^{1/5} with nu0 = int K^2, mu2 = int u^2 K(u) du.
// The result is clamped to [(a_max - a_min)/n, (a_max - a_min)/2], so a pilot
// with vanishing curvature lands on the upper clamp and a perfectly quartic
// pilot (zero residual) lands on the lower clamp.
inline double rot_bandwidth(std::span<const double> a, std::span<const double> xi,
                            const Kernel& k) {
  const std::size_t n = a.size();
  if (n != xi.size()) throw std::invalid_argument("rot_bandwidth: length mismatch");
  if (n < 6) throw std::invalid_argument("rot_bandwidth: need at least 6 observations");
  const auto [mn_it, mx_it] = std::minmax_element(a.begin(), a.end());
  const double a_min = *mn_it, a_max = *mx_it;
  const double range = a_max - a_min;
  if (!(range > 0.0))
    throw std::invalid_argument("rot_bandwidth: degenerate design, all treatment values equal");

  // quartic pilot in centered/scaled coordinates
  const double center = 0.5 * (a_min + a_max);
  const double scale = 0.5 * range;
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), 5);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double t = (a[i] - center) / scale;
    double p = 1.0;
    for (int c = 0; c < 5; ++c) {
      X(static_cast<Eigen::Index>(i), c) = p;
      p *= t;
    }
    y(static_cast<Eigen::Index>(i)) = xi[i];
  }
  const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
  const double rss = (y - X * beta).squaredNorm();
  const double sigma2 = rss / static_cast<double>(n - 5);

  double mean = 0.0, msq = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += xi[i];
  mean /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) msq += (xi[i] - mean) * (xi[i] - mean);
  const double sd_xi = std::sqrt(msq / static_cast<double>(n));

  double curve_sum = 0.0;  // sum of squared second derivatives in dose units
  for (std::size_t i = 0; i < n; ++i) {
    const double t = (a[i] - center) / scale;
    const double gpp = 2.0 * beta(2) + 6.0 * beta(3) * t + 12.0 * beta(4) * t * t;
    const double mdd = gpp / (scale * scale);
    curve_sum += mdd * mdd;
  }

  const double h_lo = range / static_cast<double>(n);
  const double h_hi = 0.5 * range;

  // negligible pilot curvature (e.g. xi linear in a): no information, widest window
  const double rms_curv_scaled = std::sqrt(curve_sum / static_cast<double>(n)) * scale * scale;
  if (!(rms_curv_scaled > 1e-10 * sd_xi)) return h_hi;

  const double nu0 = kernel_nu0(k);
  const double mu2 = kernel_mu2(k);
  const double ck = std::pow(nu0 / (mu2 * mu2), 0.2);
  const double h = ck * std::pow(sigma2 * range / curve_sum, 0.2);
  return std::clamp(h, h_lo, h_hi);
}

}  // namespace drdose
