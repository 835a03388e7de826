#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drdose/kang_schafer.hpp"
#include "drdose/nuisance_base.hpp"

namespace drdose {

// Outcome regression designs. Each is a cubic in the dose a with row-dependent
// coefficients, optionally plus the row-independent dose bump used by the
// continuous simulation generators; the mixture objects exploit that shape.
enum class OutcomeDesign {
  linear_interact,       // [1, l, a, l*a], identity link
  linear_interact_bump,  // [1, l, a, l*a, exp{-(a-2.5)^2/0.25}], identity link
  logistic_cubic,        // [1, l, a, a^2, a^3, l*a], logit link
  flex_cubic             // [1, l, l^2, l^3, a, a^2, a^3, l*a], either link
};

inline const char* to_string(OutcomeDesign d) {
  switch (d) {
    case OutcomeDesign::linear_interact: return "linear_interact";
    case OutcomeDesign::linear_interact_bump: return "linear_interact_bump";
    case OutcomeDesign::logistic_cubic: return "logistic_cubic";
    default: return "flex_cubic";
  }
}

// the dose bump of the continuous generators, exp{-(a-2.5)^2 / (1/2)^2}
inline double dose_bump(double a) {
  const double t = a - 2.5;
  return std::exp(-t * t / 0.25);
}

namespace detail {

inline std::size_t outcome_feature_count(OutcomeDesign k, std::size_t d) {
  switch (k) {
    case OutcomeDesign::linear_interact: return 2 * d + 2;
    case OutcomeDesign::linear_interact_bump: return 2 * d + 3;
    case OutcomeDesign::logistic_cubic: return 2 * d + 4;
    default: return 4 * d + 4;
  }
}

inline void outcome_features(OutcomeDesign k, std::span<const double> l, double a, double* out) {
  const std::size_t d = l.size();
  std::size_t c = 0;
  out[c++] = 1.0;
  for (std::size_t j = 0; j < d; ++j) out[c++] = l[j];
  if (k == OutcomeDesign::flex_cubic) {
    for (std::size_t j = 0; j < d; ++j) out[c++] = l[j] * l[j];
    for (std::size_t j = 0; j < d; ++j) out[c++] = l[j] * l[j] * l[j];
  }
  out[c++] = a;
  if (k == OutcomeDesign::logistic_cubic || k == OutcomeDesign::flex_cubic) {
    out[c++] = a * a;
    out[c++] = a * a * a;
  }
  for (std::size_t j = 0; j < d; ++j) out[c++] = l[j] * a;
  if (k == OutcomeDesign::linear_interact_bump) out[c++] = dose_bump(a);
}

// Row profile of the linear predictor:
// eta(l, a) = p0(l) + p1(l) a + p2 a^2 + p3 a^3 + p4 * dose_bump(a).
using OutcomeProfile = std::array<double, 5>;

inline OutcomeProfile outcome_poly_profile(OutcomeDesign k, std::span<const double> coef,
                                           std::span<const double> l) {
  const std::size_t d = l.size();
  OutcomeProfile p{0.0, 0.0, 0.0, 0.0, 0.0};
  std::size_t c = 0;
  p[0] = coef[c++];
  for (std::size_t j = 0; j < d; ++j) p[0] += coef[c++] * l[j];
  if (k == OutcomeDesign::flex_cubic) {
    for (std::size_t j = 0; j < d; ++j) p[0] += coef[c++] * l[j] * l[j];
    for (std::size_t j = 0; j < d; ++j) p[0] += coef[c++] * l[j] * l[j] * l[j];
  }
  p[1] = coef[c++];
  if (k == OutcomeDesign::logistic_cubic || k == OutcomeDesign::flex_cubic) {
    p[2] = coef[c++];
    p[3] = coef[c++];
  }
  for (std::size_t j = 0; j < d; ++j) p[1] += coef[c++] * l[j];
  if (k == OutcomeDesign::linear_interact_bump) p[4] = coef[c++];
  return p;
}

inline double eval_profile(const OutcomeProfile& p, double a) {
  double v = ((p[3] * a + p[2]) * a + p[1]) * a + p[0];
  if (p[4] != 0.0) v += p[4] * dose_bump(a);
  return v;
}

constexpr double kProbClip = 1e-6;

inline double clipped_sigmoid(double eta) {
  const double p = sigmoid(eta);
  return std::clamp(p, kProbClip, 1.0 - kProbClip);
}

}  // namespace detail

// Parametric outcome regression: linear predictor on one of the fixed designs,
// identity or logit link. Logit-link probabilities are clipped to
// [1e-6, 1 - 1e-6] so degenerate fits stay finite.
class ParametricOutcomeModel final : public OutcomeModel {
public:
  ParametricOutcomeModel(OutcomeDesign design, CovariateTransform transform, bool logit_link,
                         std::vector<double> coefficients)
      : design_(design), transform_(transform), logit_(logit_link), coef_(std::move(coefficients)) {}

  double value(std::span<const double> l, double a) const override {
    const auto p = profile(l);
    const double eta = detail::eval_profile(p, a);
    return logit_ ? detail::clipped_sigmoid(eta) : eta;
  }

  std::unique_ptr<OutcomeMixture> mixture(const Matrix& L,
                                          std::span<const std::uint32_t> rows) const override;

  nlohmann::json to_json() const override {
    return nlohmann::json{{"family", "parametric_outcome"},
                          {"design", to_string(design_)},
                          {"transform", to_string(transform_)},
                          {"link", logit_ ? "logit" : "identity"},
                          {"coefficients", coef_}};
  }

  const FitInfo* fit_info() const override { return info_ ? &*info_ : nullptr; }
  void set_fit_info(FitInfo info) { info_ = info; }

  OutcomeDesign design() const { return design_; }
  CovariateTransform transform() const { return transform_; }
  bool logit_link() const { return logit_; }
  const std::vector<double>& coefficients() const { return coef_; }

  detail::OutcomeProfile profile(std::span<const double> l) const {
    if (transform_ == CovariateTransform::kang_schafer) {
      const auto t = kang_schafer_row(l);
      return detail::outcome_poly_profile(design_, coef_, std::span<const double>(t.data(), 4));
    }
    return detail::outcome_poly_profile(design_, coef_, l);
  }

private:
  OutcomeDesign design_;
  CovariateTransform transform_;
  bool logit_;
  std::vector<double> coef_;
  std::optional<FitInfo> info_;
};

namespace detail {

// identity link: the row sum of cubics is a single cubic
class PolySumMixture final : public OutcomeMixture {
public:
  PolySumMixture(const ParametricOutcomeModel& m, const Matrix& L,
                 std::span<const std::uint32_t> rows) {
    for (const auto r : rows) {
      const auto p = m.profile(L.row(r));
      for (int k = 0; k < 5; ++k) q_[static_cast<std::size_t>(k)] += p[static_cast<std::size_t>(k)];
    }
  }
  double sum(double a) const override { return eval_profile(q_, a); }

private:
  OutcomeProfile q_{0.0, 0.0, 0.0, 0.0, 0.0};
};

// logit link: cached per-row linear predictor profiles, one sigmoid per row
class LogitSumMixture final : public OutcomeMixture {
public:
  LogitSumMixture(const ParametricOutcomeModel& m, const Matrix& L,
                  std::span<const std::uint32_t> rows) {
    profiles_.reserve(rows.size());
    for (const auto r : rows) profiles_.push_back(m.profile(L.row(r)));
  }
  double sum(double a) const override {
    double s = 0.0;
    for (const auto& p : profiles_) s += clipped_sigmoid(eval_profile(p, a));
    return s;
  }

private:
  std::vector<OutcomeProfile> profiles_;
};

}  // namespace detail

inline std::unique_ptr<OutcomeMixture> ParametricOutcomeModel::mixture(
    const Matrix& L, std::span<const std::uint32_t> rows) const {
  if (logit_) return std::make_unique<detail::LogitSumMixture>(*this, L, rows);
  return std::make_unique<detail::PolySumMixture>(*this, L, rows);
}

namespace detail {

inline Eigen::MatrixXd outcome_design_matrix(const Dataset& ds, OutcomeDesign design,
                                             CovariateTransform transform) {
  const std::size_t n = ds.n();
  const std::size_t p = outcome_feature_count(design, ds.dim());
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  std::vector<double> feat(p);
  for (std::size_t i = 0; i < n; ++i) {
    if (transform == CovariateTransform::kang_schafer) {
      const auto t = kang_schafer_row(ds.covariates().row(i));
      outcome_features(design, std::span<const double>(t.data(), 4), ds.treatment()[i], feat.data());
    } else {
      outcome_features(design, ds.covariates().row(i), ds.treatment()[i], feat.data());
    }
    for (std::size_t j = 0; j < p; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = feat[j];
  }
  return X;
}

}  // namespace detail

// Ordinary least squares of Y on [1, L, A, L*A].
inline std::shared_ptr<ParametricOutcomeModel> fit_linear_outcome(
    const Dataset& ds, CovariateTransform transform = CovariateTransform::identity,
    OutcomeDesign design = OutcomeDesign::linear_interact) {
  const Eigen::MatrixXd X = detail::outcome_design_matrix(ds, design, transform);
  const Eigen::Map<const Eigen::VectorXd> y(ds.outcome().data(),
                                            static_cast<Eigen::Index>(ds.n()));
  const auto qr = X.colPivHouseholderQr();
  if (qr.rank() < X.cols())
    throw std::runtime_error("fit_linear_outcome: design matrix is rank deficient (rank " +
                             std::to_string(qr.rank()) + " of " + std::to_string(X.cols()) + ")");
  const Eigen::VectorXd beta = qr.solve(y);
  std::vector<double> coef(beta.data(), beta.data() + beta.size());
  return std::make_shared<ParametricOutcomeModel>(design, transform, false, std::move(coef));
}

// Logistic regression of a binary Y on [1, L, A, A^2, A^3, L*A] by iteratively
// reweighted least squares. Stops when the largest coefficient change falls
// below 1e-8 or after 100 iterations. Complete separation is detected via a
// diverging linear predictor; the clipped fit is returned with a report.
inline std::shared_ptr<ParametricOutcomeModel> fit_logistic_outcome(
    const Dataset& ds, CovariateTransform transform = CovariateTransform::identity,
    OutcomeDesign design = OutcomeDesign::logistic_cubic) {
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const double y = ds.outcome()[i];
    if (y != 0.0 && y != 1.0)
      throw std::invalid_argument("fit_logistic_outcome: outcome must be in {0,1}, data row " +
                                  std::to_string(i + 1));
  }
  const Eigen::MatrixXd X = detail::outcome_design_matrix(ds, design, transform);
  const Eigen::Map<const Eigen::VectorXd> y(ds.outcome().data(),
                                            static_cast<Eigen::Index>(ds.n()));
  const Eigen::Index n = X.rows(), p = X.cols();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  FitInfo info;
  info.converged = false;
  for (int iter = 0; iter < 100; ++iter) {
    info.iterations = iter + 1;
    Eigen::VectorXd eta = X * beta;
    double eta_max = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) eta_max = std::max(eta_max, std::abs(eta(i)));
    if (eta_max > 30.0) {  // probabilities pinned at 0/1: separation
      info.separation = true;
      break;
    }
    Eigen::VectorXd w(n), z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = detail::sigmoid(eta(i));
      const double wi = std::max(mu * (1.0 - mu), 1e-10);
      w(i) = std::sqrt(wi);
      z(i) = eta(i) + (y(i) - mu) / wi;
    }
    const Eigen::MatrixXd Xw = w.asDiagonal() * X;
    const Eigen::VectorXd zw = w.asDiagonal() * z;
    const Eigen::VectorXd next = Xw.colPivHouseholderQr().solve(zw);
    const double delta = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    if (delta < 1e-8) {
      info.converged = true;
      break;
    }
  }
  info.grad_norm = 0.0;
  std::vector<double> coef(beta.data(), beta.data() + beta.size());
  auto model = std::make_shared<ParametricOutcomeModel>(design, transform, true, std::move(coef));
  model->set_fit_info(info);
  return model;
}

// Flexible outcome fit on the cubic basis; the link is chosen by whether the
// outcome is binary.
inline std::shared_ptr<ParametricOutcomeModel> fit_flex_outcome(
    const Dataset& ds, CovariateTransform transform = CovariateTransform::identity) {
  bool binary = true;
  for (const double y : ds.outcome())
    if (y != 0.0 && y != 1.0) {
      binary = false;
      break;
    }
  if (binary) return fit_logistic_outcome(ds, transform, OutcomeDesign::flex_cubic);
  return fit_linear_outcome(ds, transform, OutcomeDesign::flex_cubic);
}

}  // namespace drdose
