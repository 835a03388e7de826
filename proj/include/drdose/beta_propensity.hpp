#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drdose/kang_schafer.hpp"
#include "drdose/nuisance_base.hpp"

namespace drdose {

enum class PropensityBasis { linear, cubic };

inline const char* to_string(PropensityBasis b) {
  return b == PropensityBasis::linear ? "linear" : "cubic";
}

namespace detail {

inline std::size_t propensity_feature_count(PropensityBasis b, std::size_t d) {
  return b == PropensityBasis::linear ? d + 1 : 3 * d + 1;
}

// features: [1, l_1..l_d] or [1, l_1..l_d, l_1^2..l_d^2, l_1^3..l_d^3]
inline void propensity_features(PropensityBasis b, std::span<const double> l, double* out) {
  const std::size_t d = l.size();
  out[0] = 1.0;
  for (std::size_t j = 0; j < d; ++j) out[1 + j] = l[j];
  if (b == PropensityBasis::cubic)
    for (std::size_t j = 0; j < d; ++j) {
      out[1 + d + j] = l[j] * l[j];
      out[1 + 2 * d + j] = l[j] * l[j] * l[j];
    }
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// Dose model A/R | L ~ Beta(lambda(L), 1 - lambda(L)) with logit-linear lambda on
// a covariate basis. The density on dose scale is
//   pi(a | l) = (1/R) * sin(pi*lambda)/pi * x^(lambda-1) * (1-x)^(-lambda),  x = a/R,
// using B(lambda, 1-lambda) = pi / sin(pi*lambda). lambda is clipped away from
// {0, 1} so the density and its log stay finite.
class BetaPropensityModel final : public PropensityModel {
public:
  BetaPropensityModel(PropensityBasis basis, CovariateTransform transform,
                      std::vector<double> coefficients, double scale, double lambda_clip = 1e-4)
      : basis_(basis),
        transform_(transform),
        coef_(std::move(coefficients)),
        scale_(scale),
        lambda_clip_(lambda_clip) {
    if (!(scale_ > 0.0)) throw std::invalid_argument("beta propensity: scale must be positive");
    if (!(lambda_clip_ > 0.0 && lambda_clip_ < 0.5))
      throw std::invalid_argument("beta propensity: lambda_clip must be in (0, 0.5)");
  }

  double lambda(std::span<const double> l) const {
    std::vector<double> f(coef_.size());
    fill_features(l, f.data());
    double eta = 0.0;
    for (std::size_t j = 0; j < coef_.size(); ++j) eta += coef_[j] * f[j];
    return std::clamp(detail::sigmoid(eta), lambda_clip_, 1.0 - lambda_clip_);
  }

  double density(double a, std::span<const double> l) const override {
    const double x = a / scale_;
    if (!(x > 0.0 && x < 1.0)) return 0.0;
    const double lam = lambda(l);
    const double logc = std::log(std::sin(std::numbers::pi * lam) / std::numbers::pi);
    return std::exp((lam - 1.0) * std::log(x) - lam * std::log1p(-x) + logc) / scale_;
  }

  std::unique_ptr<PropensityMixture> mixture(const Matrix& L,
                                             std::span<const std::uint32_t> rows) const override;

  nlohmann::json to_json() const override {
    return nlohmann::json{{"family", "beta_propensity"},
                          {"basis", to_string(basis_)},
                          {"transform", to_string(transform_)},
                          {"coefficients", coef_},
                          {"scale", scale_},
                          {"lambda_clip", lambda_clip_}};
  }

  const FitInfo* fit_info() const override { return info_ ? &*info_ : nullptr; }
  void set_fit_info(FitInfo info) { info_ = info; }

  PropensityBasis basis() const { return basis_; }
  CovariateTransform transform() const { return transform_; }
  const std::vector<double>& coefficients() const { return coef_; }
  double scale() const { return scale_; }
  double lambda_clip() const { return lambda_clip_; }

private:
  void fill_features(std::span<const double> l, double* out) const {
    if (transform_ == CovariateTransform::kang_schafer) {
      const auto t = kang_schafer_row(l);
      detail::propensity_features(basis_, std::span<const double>(t.data(), 4), out);
    } else {
      detail::propensity_features(basis_, l, out);
    }
  }

  PropensityBasis basis_;
  CovariateTransform transform_;
  std::vector<double> coef_;
  double scale_;
  double lambda_clip_;
  std::optional<FitInfo> info_;
};

namespace detail {

// caches lambda_j and log(sin(pi*lambda_j)/pi) per row; sum() is one exp per row
class BetaMixture final : public PropensityMixture {
public:
  BetaMixture(const BetaPropensityModel& m, const Matrix& L, std::span<const std::uint32_t> rows)
      : scale_(m.scale()) {
    lam_.reserve(rows.size());
    logc_.reserve(rows.size());
    for (const auto r : rows) {
      const double lam = m.lambda(L.row(r));
      lam_.push_back(lam);
      logc_.push_back(std::log(std::sin(std::numbers::pi * lam) / std::numbers::pi));
    }
  }

  double sum(double a) const override {
    const double x = a / scale_;
    if (!(x > 0.0 && x < 1.0)) return 0.0;
    const double u = std::log(x);
    const double v = std::log1p(-x);
    double s = 0.0;
    for (std::size_t j = 0; j < lam_.size(); ++j)
      s += std::exp(lam_[j] * (u - v) + logc_[j]);
    return s * std::exp(-u) / scale_;
  }

private:
  double scale_;
  std::vector<double> lam_;
  std::vector<double> logc_;
};

}  // namespace detail

inline std::unique_ptr<PropensityMixture> BetaPropensityModel::mixture(
    const Matrix& L, std::span<const std::uint32_t> rows) const {
  return std::make_unique<detail::BetaMixture>(*this, L, rows);
}

// Optional trace of the MLE ascent, for diagnostics and tests.
struct BetaFitTrace {
  std::vector<double> loglik;  // objective after every accepted step
};

// Maximum likelihood fit of the logit-linear Beta dose model by gradient ascent
// with backtracking line search on a column-standardized basis. Convergence when
// the infinity norm of the full-sample gradient drops below 1e-6, capped at 500
// iterations (non-convergence is recorded on the model, not thrown).
inline std::shared_ptr<BetaPropensityModel> fit_beta_propensity(
    const Dataset& ds, double scale, CovariateTransform transform = CovariateTransform::identity,
    PropensityBasis basis = PropensityBasis::linear, BetaFitTrace* trace = nullptr) {
  const std::size_t n = ds.n();
  const std::size_t d = ds.dim();
  const std::size_t p = detail::propensity_feature_count(basis, d);
  if (!(scale > 0.0)) throw std::invalid_argument("fit_beta_propensity: scale must be positive");

  std::vector<double> u(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ds.treatment()[i] / scale;
    if (!(x > 0.0 && x < 1.0))
      throw std::invalid_argument("fit_beta_propensity: treatment outside (0, scale) at data row " +
                                  std::to_string(i + 1));
    u[i] = std::log(x);
    v[i] = std::log1p(-x);
  }

  // basis matrix on (possibly transformed) covariates
  std::vector<double> B(n * p);
  {
    std::vector<double> feat(p);
    for (std::size_t i = 0; i < n; ++i) {
      if (transform == CovariateTransform::kang_schafer) {
        const auto t = kang_schafer_row(ds.covariates().row(i));
        detail::propensity_features(basis, std::span<const double>(t.data(), 4), feat.data());
      } else {
        detail::propensity_features(basis, ds.covariates().row(i), feat.data());
      }
      std::copy(feat.begin(), feat.end(), B.begin() + static_cast<std::ptrdiff_t>(i * p));
    }
  }

  // center/scale the non-intercept columns; constant columns collapse to zero
  std::vector<double> col_mean(p, 0.0), col_sd(p, 1.0);
  for (std::size_t j = 1; j < p; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += B[i * p + j];
    m /= static_cast<double>(n);
    double s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = B[i * p + j] - m;
      s2 += c * c;
    }
    const double sd = std::sqrt(s2 / static_cast<double>(n));
    col_mean[j] = m;
    col_sd[j] = sd > 0.0 ? sd : 1.0;
    for (std::size_t i = 0; i < n; ++i) B[i * p + j] = (B[i * p + j] - m) / col_sd[j];
  }

  constexpr double lam_clip = 1e-4;
  const auto loglik_and_grad = [&](const std::vector<double>& c, std::vector<double>* grad) {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double eta = 0.0;
      for (std::size_t j = 0; j < p; ++j) eta += c[j] * B[i * p + j];
      const double lam = std::clamp(detail::sigmoid(eta), lam_clip, 1.0 - lam_clip);
      const double s = std::sin(std::numbers::pi * lam);
      ll += (lam - 1.0) * u[i] - lam * v[i] + std::log(s / std::numbers::pi) - std::log(scale);
      if (grad) {
        const double dlam = (u[i] - v[i] +
                             std::numbers::pi * std::cos(std::numbers::pi * lam) / s) *
                            lam * (1.0 - lam);
        for (std::size_t j = 0; j < p; ++j) (*grad)[j] += dlam * B[i * p + j];
      }
    }
    return ll;
  };

  std::vector<double> c(p, 0.0), g(p, 0.0), cand(p, 0.0);
  double ll = loglik_and_grad(c, &g);
  if (trace) trace->loglik.push_back(ll);
  FitInfo info;
  double step = 1.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  int iter = 0;
  for (; iter < 500; ++iter) {
    // tolerance on the per-observation mean gradient, so it is sample-size free
    double gmax = 0.0, gsq = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      gmax = std::max(gmax, std::abs(g[j]) * inv_n);
      gsq += g[j] * g[j] * inv_n * inv_n;
    }
    info.grad_norm = gmax;
    if (gmax < 1e-6) break;
    // ascent on the mean-scaled objective
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      for (std::size_t j = 0; j < p; ++j) cand[j] = c[j] + step * g[j] * inv_n;
      const double ll_new = loglik_and_grad(cand, nullptr);
      if (ll_new * inv_n >= ll * inv_n + 1e-4 * step * gsq) {
        c.swap(cand);
        ll = ll_new;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // step underflow: gradient is numerically flat
    if (trace) trace->loglik.push_back(ll);
    step = std::min(step * 2.0, 64.0);
    ll = loglik_and_grad(c, &g);
  }
  info.iterations = iter;
  info.converged = info.grad_norm < 1e-6;

  // map coefficients back to the raw feature scale
  std::vector<double> raw(p, 0.0);
  raw[0] = c[0];
  for (std::size_t j = 1; j < p; ++j) {
    raw[j] = c[j] / col_sd[j];
    raw[0] -= c[j] * col_mean[j] / col_sd[j];
  }

  auto model = std::make_shared<BetaPropensityModel>(basis, transform, std::move(raw), scale);
  model->set_fit_info(info);
  return model;
}

}  // namespace drdose
