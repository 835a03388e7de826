#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "drdose/dataset.hpp"

namespace drdose {

enum class Provenance { fitted, oracle, misspecified };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::fitted: return "fitted";
    case Provenance::oracle: return "oracle";
    default: return "misspecified";
  }
}

// Convergence report attached to iteratively fitted models.
struct FitInfo {
  int iterations = 0;
  double grad_norm = 0.0;
  bool converged = true;
  bool separation = false;
};

// Sum of pi(a | L_j) over a fixed set of covariate rows. Implementations cache
// per-row state at construction; sum() is const and safe to call concurrently.
// The object references the covariate matrix it was built from and must not
// outlive it.
class PropensityMixture {
public:
  virtual ~PropensityMixture() = default;
  virtual double sum(double a) const = 0;
};

// Conditional density evaluator pi(a | l), in probability per dose unit.
class PropensityModel {
public:
  virtual ~PropensityModel() = default;
  virtual double density(double a, std::span<const double> l) const = 0;
  virtual std::unique_ptr<PropensityMixture> mixture(const Matrix& L,
                                                     std::span<const std::uint32_t> rows) const;
  virtual nlohmann::json to_json() const = 0;
  virtual const FitInfo* fit_info() const { return nullptr; }
};

class OutcomeMixture {
public:
  virtual ~OutcomeMixture() = default;
  virtual double sum(double a) const = 0;  // sum of mu(L_j, a) over the bound rows
};

// Outcome regression evaluator mu(l, a).
class OutcomeModel {
public:
  virtual ~OutcomeModel() = default;
  virtual double value(std::span<const double> l, double a) const = 0;
  virtual std::unique_ptr<OutcomeMixture> mixture(const Matrix& L,
                                                  std::span<const std::uint32_t> rows) const;
  virtual nlohmann::json to_json() const = 0;
  virtual const FitInfo* fit_info() const { return nullptr; }
};

namespace detail {

class GenericPropensityMixture final : public PropensityMixture {
public:
  GenericPropensityMixture(const PropensityModel& m, const Matrix& L,
                           std::span<const std::uint32_t> rows)
      : model_(m), L_(L), rows_(rows.begin(), rows.end()) {}
  double sum(double a) const override {
    double s = 0.0;
    for (const auto r : rows_) s += model_.density(a, L_.row(r));
    return s;
  }

private:
  const PropensityModel& model_;
  const Matrix& L_;
  std::vector<std::uint32_t> rows_;
};

class GenericOutcomeMixture final : public OutcomeMixture {
public:
  GenericOutcomeMixture(const OutcomeModel& m, const Matrix& L, std::span<const std::uint32_t> rows)
      : model_(m), L_(L), rows_(rows.begin(), rows.end()) {}
  double sum(double a) const override {
    double s = 0.0;
    for (const auto r : rows_) s += model_.value(L_.row(r), a);
    return s;
  }

private:
  const OutcomeModel& model_;
  const Matrix& L_;
  std::vector<std::uint32_t> rows_;
};

}  // namespace detail

inline std::unique_ptr<PropensityMixture> PropensityModel::mixture(
    const Matrix& L, std::span<const std::uint32_t> rows) const {
  return std::make_unique<detail::GenericPropensityMixture>(*this, L, rows);
}

inline std::unique_ptr<OutcomeMixture> OutcomeModel::mixture(
    const Matrix& L, std::span<const std::uint32_t> rows) const {
  return std::make_unique<detail::GenericOutcomeMixture>(*this, L, rows);
}

// Paired nuisance evaluators. trunc_floor is the positivity floor applied to
// the propensity where it appears in a denominator.
struct NuisanceModel {
  std::shared_ptr<const PropensityModel> propensity;
  std::shared_ptr<const OutcomeModel> outcome;
  double trunc_floor = 0.01;
  Provenance provenance = Provenance::fitted;

  nlohmann::json to_json() const {
    return nlohmann::json{{"propensity", propensity->to_json()},
                          {"outcome", outcome->to_json()},
                          {"trunc_floor", trunc_floor},
                          {"provenance", to_string(provenance)}};
  }
};

}  // namespace drdose
