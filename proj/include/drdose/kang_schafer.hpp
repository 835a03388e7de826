#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>

#include "drdose/dataset.hpp"

namespace drdose {

enum class CovariateTransform { identity, kang_schafer };

inline const char* to_string(CovariateTransform t) {
  return t == CovariateTransform::identity ? "identity" : "kang_schafer";
}

// Nonlinear covariate scramble used to hand a deliberately wrong design to one
// nuisance model in the simulation scenarios. Defined for d = 4 only.
inline std::array<double, 4> kang_schafer_row(std::span<const double> l) {
  if (l.size() != 4) throw std::invalid_argument("kang_schafer: requires exactly 4 covariates");
  const double x1 = std::exp(0.5 * l[0]);
  const double x2 = l[1] / (1.0 + std::exp(l[0])) + 10.0;
  const double t3 = l[0] * l[2] / 25.0 + 0.6;
  const double x3 = t3 * t3 * t3;
  const double t4 = l[1] + l[3] + 20.0;
  const double x4 = t4 * t4;
  return {x1, x2, x3, x4};
}

inline Matrix kang_schafer_transform(const Matrix& L) {
  if (L.cols() != 4) throw std::invalid_argument("kang_schafer: requires exactly 4 covariates");
  Matrix out(L.rows(), 4);
  for (std::size_t i = 0; i < L.rows(); ++i) {
    const auto x = kang_schafer_row(L.row(i));
    for (std::size_t j = 0; j < 4; ++j) out(i, j) = x[j];
  }
  return out;
}

}  // namespace drdose
