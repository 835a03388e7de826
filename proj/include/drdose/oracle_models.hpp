#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drdose/beta_propensity.hpp"
#include "drdose/nuisance_base.hpp"

namespace drdose {

enum class SimModelId { model1, model2, modifier };

inline const char* to_string(SimModelId m) {
  switch (m) {
    case SimModelId::model1: return "model1";
    case SimModelId::model2: return "model2";
    default: return "modifier";
  }
}

inline SimModelId sim_model_from_string(const std::string& s) {
  if (s == "model1") return SimModelId::model1;
  if (s == "model2") return SimModelId::model2;
  if (s == "modifier") return SimModelId::modifier;
  throw std::invalid_argument("unknown simulation model '" + s + "'");
}

// Generator constants shared by the oracle evaluators and the data generators.
// The dose bump is exp{-(a-2.5)^2 / 0.25}; the generators use the negative
// exponent throughout (a positive exponent would blow up at the dose
// boundaries) and that choice is recorded in the serialized metadata.
namespace simconst {

inline constexpr double model1_scale = 20.0;
inline constexpr double model2_scale = 5.0;
inline constexpr std::array<double, 5> model1_lambda{-0.8, 0.1, 0.1, -0.1, 0.2};
inline constexpr std::array<double, 5> model2_lambda{0.0, 0.1, 0.1, -0.1, 0.2};
inline constexpr const char* bump_sign = "negative";

inline double bump(double a) {
  const double t = a - 2.5;
  return std::exp(-t * t / 0.25);
}

}  // namespace simconst

inline double dose_scale(SimModelId m) {
  return m == SimModelId::model1 ? simconst::model1_scale : simconst::model2_scale;
}

// Closed-form outcome regressions of the three simulation generators.
class OracleOutcomeModel final : public OutcomeModel {
public:
  OracleOutcomeModel(SimModelId model, double delta) : model_(model), delta_(delta) {}

  double value(std::span<const double> l, double a) const override {
    switch (model_) {
      case SimModelId::model1: {
        const double eta = 1.0 + 0.2 * l[0] + 0.2 * l[1] + 0.3 * l[2] - 0.1 * l[3] +
                           delta_ * a * (0.1 - 0.1 * l[0] + 0.1 * l[2] - 0.13 * 0.13 * a * a);
        return detail::sigmoid(eta);
      }
      case SimModelId::model2:
        return 0.2 * l[0] + 0.2 * l[1] + 0.3 * l[2] - 0.1 * l[3] + a * (-0.1 * l[0] + 0.1 * l[2]) +
               delta_ * simconst::bump(a);
      default:
        return 0.2 * l[0] + 0.2 * l[1] + 0.3 * l[2] - 0.1 * delta_ * l[3] - 0.1 * a * l[0] +
               0.1 * delta_ * a * l[3] + simconst::bump(a);
    }
  }

  nlohmann::json to_json() const override {
    return nlohmann::json{{"family", "oracle_outcome"},
                          {"model", to_string(model_)},
                          {"delta", delta_},
                          {"bump_sign", simconst::bump_sign}};
  }

  SimModelId model() const { return model_; }
  double delta() const { return delta_; }

private:
  SimModelId model_;
  double delta_;
};

// True propensity of each generator: A/R | L ~ Beta(lambda(L), 1 - lambda(L)).
inline std::shared_ptr<BetaPropensityModel> oracle_propensity(SimModelId model) {
  const auto& lam =
      model == SimModelId::model1 ? simconst::model1_lambda : simconst::model2_lambda;
  return std::make_shared<BetaPropensityModel>(
      PropensityBasis::linear, CovariateTransform::identity,
      std::vector<double>(lam.begin(), lam.end()), dose_scale(model));
}

// Exact generator truth wrapped as a nuisance pair.
inline NuisanceModel oracle_nuisance(SimModelId model, double delta, double trunc_floor = 0.01) {
  NuisanceModel nm;
  nm.propensity = oracle_propensity(model);
  nm.outcome = std::make_shared<OracleOutcomeModel>(model, delta);
  nm.trunc_floor = trunc_floor;
  nm.provenance = Provenance::oracle;
  return nm;
}

// Marginal effect curve E[mu(L, a)] implied by a generator (L has mean zero, so
// only the dose terms survive; for the modifier model the curve is conditional
// on the group indicator).
inline double oracle_effect_curve(SimModelId model, double delta, double a, int group = 0) {
  switch (model) {
    case SimModelId::model2:
      return delta * simconst::bump(a);
    case SimModelId::modifier:
      return -0.1 * delta * group + 0.1 * delta * a * group + simconst::bump(a);
    default:
      throw std::invalid_argument("oracle_effect_curve: no closed form for model1");
  }
}

}  // namespace drdose
