#pragma once

#include <fstream>
#include <memory>
#include <string>

#include "drdose/beta_propensity.hpp"
#include "drdose/kang_schafer.hpp"
#include "drdose/nuisance_base.hpp"
#include "drdose/oracle_models.hpp"
#include "drdose/outcome_models.hpp"

namespace drdose {

namespace detail {

inline CovariateTransform transform_from_string(const std::string& s) {
  if (s == "identity") return CovariateTransform::identity;
  if (s == "kang_schafer") return CovariateTransform::kang_schafer;
  throw std::invalid_argument("unknown covariate transform '" + s + "'");
}

inline PropensityBasis propensity_basis_from_string(const std::string& s) {
  if (s == "linear") return PropensityBasis::linear;
  if (s == "cubic") return PropensityBasis::cubic;
  throw std::invalid_argument("unknown propensity basis '" + s + "'");
}

inline OutcomeDesign outcome_design_from_string(const std::string& s) {
  if (s == "linear_interact") return OutcomeDesign::linear_interact;
  if (s == "linear_interact_bump") return OutcomeDesign::linear_interact_bump;
  if (s == "logistic_cubic") return OutcomeDesign::logistic_cubic;
  if (s == "flex_cubic") return OutcomeDesign::flex_cubic;
  throw std::invalid_argument("unknown outcome design '" + s + "'");
}

inline Provenance provenance_from_string(const std::string& s) {
  if (s == "fitted") return Provenance::fitted;
  if (s == "oracle") return Provenance::oracle;
  if (s == "misspecified") return Provenance::misspecified;
  throw std::invalid_argument("unknown provenance '" + s + "'");
}

}  // namespace detail

inline std::shared_ptr<PropensityModel> propensity_from_json(const nlohmann::json& j) {
  const std::string family = j.at("family");
  if (family == "beta_propensity") {
    return std::make_shared<BetaPropensityModel>(
        detail::propensity_basis_from_string(j.at("basis")),
        detail::transform_from_string(j.at("transform")),
        j.at("coefficients").get<std::vector<double>>(), j.at("scale").get<double>(),
        j.at("lambda_clip").get<double>());
  }
  throw std::invalid_argument("unknown propensity family '" + family + "'");
}

inline std::shared_ptr<OutcomeModel> outcome_from_json(const nlohmann::json& j) {
  const std::string family = j.at("family");
  if (family == "parametric_outcome") {
    return std::make_shared<ParametricOutcomeModel>(
        detail::outcome_design_from_string(j.at("design")),
        detail::transform_from_string(j.at("transform")), j.at("link") == "logit",
        j.at("coefficients").get<std::vector<double>>());
  }
  if (family == "oracle_outcome") {
    return std::make_shared<OracleOutcomeModel>(sim_model_from_string(j.at("model")),
                                                j.at("delta").get<double>());
  }
  throw std::invalid_argument("unknown outcome family '" + family + "'");
}

inline NuisanceModel nuisance_from_json(const nlohmann::json& j) {
  NuisanceModel nm;
  nm.propensity = propensity_from_json(j.at("propensity"));
  nm.outcome = outcome_from_json(j.at("outcome"));
  nm.trunc_floor = j.at("trunc_floor").get<double>();
  nm.provenance = detail::provenance_from_string(j.at("provenance"));
  return nm;
}

inline void save_nuisance(const NuisanceModel& nm, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("nuisance: cannot write file '" + path + "'");
  out << nm.to_json().dump(2) << '\n';
}

inline NuisanceModel load_nuisance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("nuisance: cannot open file '" + path + "'");
  nlohmann::json j;
  in >> j;
  return nuisance_from_json(j);
}

}  // namespace drdose
