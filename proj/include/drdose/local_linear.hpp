#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drdose/dataset.hpp"
#include "drdose/kernel.hpp"
#include "drdose/parallel.hpp"

namespace drdose {

struct LocalFit {
  double theta = std::numeric_limits<double>::quiet_NaN();
  double slope = std::numeric_limits<double>::quiet_NaN();  // coefficient on (t - a)/h
  // theta = anchor + offset; the split lets residuals xi_i - theta be computed
  // as (xi_i - anchor) - offset, which cancels a common location shift exactly
  double anchor = std::numeric_limits<double>::quiet_NaN();
  double offset = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;

  double residual(double xi_i) const { return (xi_i - anchor) - offset; }
};

// Local linear fit at a single point: weighted least squares of xi on
// (1, (A - a)/h) with weights K((A - a)/h), solved in closed form.
//
// The response is anchored at the first in-window observation before the
// moment sums are accumulated, so a constant xi reproduces that constant
// bit-exactly (all deviations are exact zeros).
inline LocalFit fit_at(double a, std::span<const double> A, std::span<const double> xi,
                       double h, const Kernel& k) {
  const std::size_t n = A.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  double anchor = 0.0;
  bool have_anchor = false;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (A[i] - a) / h;
    const double w = k.eval(u);
    if (w <= 0.0) continue;
    if (!have_anchor) {
      anchor = xi[i];
      have_anchor = true;
    }
    s0 += w;
    s1 += w * u;
    s2 += w * u * u;
  }
  LocalFit out;
  const double det = s0 * s2 - s1 * s1;
  if (!have_anchor || !(s0 > 0.0) || std::abs(det) < 1e-12 * s0 * s0) return out;  // flagged

  double r0 = 0.0, r1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (A[i] - a) / h;
    const double w = k.eval(u);
    if (w <= 0.0) continue;
    const double r = xi[i] - anchor;
    r0 += w * r;
    r1 += w * u * r;
  }
  out.anchor = anchor;
  out.offset = (s2 * r0 - s1 * r1) / det;
  out.theta = anchor + out.offset;
  out.slope = (s0 * r1 - s1 * r0) / det;
  out.ok = true;
  return out;
}

// Local linear curve on a grid. Grid points with a singular local design are
// flagged rather than filled.
struct CurveEstimate {
  std::vector<double> grid;
  std::vector<double> theta;
  std::vector<double> slope;
  std::vector<std::uint8_t> flagged;
  double h = 0.0;
  std::string kernel_id;

  std::size_t flagged_count() const {
    std::size_t c = 0;
    for (auto f : flagged) c += f;
    return c;
  }
};

// Fits the curve at every grid point. Throws when more than max_flagged_fraction
// of the points are flagged, which indicates the bandwidth is too small for the
// requested range.
inline CurveEstimate fit_grid(std::span<const double> grid, std::span<const double> A,
                              std::span<const double> xi, double h, const Kernel& k,
                              double max_flagged_fraction = 0.2, int threads = 1) {
  if (grid.size() < 2) throw std::invalid_argument("fit_grid: need at least 2 grid points");
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (!(grid[g] > grid[g - 1]))
      throw std::invalid_argument("fit_grid: grid must be strictly increasing");
  CurveEstimate c;
  c.grid.assign(grid.begin(), grid.end());
  c.theta.assign(grid.size(), std::numeric_limits<double>::quiet_NaN());
  c.slope.assign(grid.size(), std::numeric_limits<double>::quiet_NaN());
  c.flagged.assign(grid.size(), 0);
  c.h = h;
  c.kernel_id = k.id;
  parallel_for(grid.size(), threads, [&](std::size_t g) {
    const LocalFit f = fit_at(grid[g], A, xi, h, k);
    if (f.ok) {
      c.theta[g] = f.theta;
      c.slope[g] = f.slope;
    } else {
      c.flagged[g] = 1;
    }
  });
  const double frac = static_cast<double>(c.flagged_count()) / static_cast<double>(grid.size());
  if (frac > max_flagged_fraction)
    throw std::runtime_error("fit_grid: " + std::to_string(c.flagged_count()) + " of " +
                             std::to_string(grid.size()) +
                             " grid points have singular local designs; the bandwidth is too "
                             "small for this weight range");
  return c;
}

// Fits theta_h at each observation point (a refit, not grid interpolation).
inline std::vector<LocalFit> fit_at_points(std::span<const double> eval_at,
                                           std::span<const double> A,
                                           std::span<const double> xi, double h, const Kernel& k,
                                           int threads = 1) {
  std::vector<LocalFit> out(eval_at.size());
  parallel_for(eval_at.size(), threads,
               [&](std::size_t i) { out[i] = fit_at(eval_at[i], A, xi, h, k); });
  return out;
}

// Precomputed local designs for repeated refits on the same (grid, A, h).
// Weights, moment sums and singularity flags depend only on the design, so
// bootstrap replicates that swap the response reuse them. refit() accumulates
// in the same order as fit_at and reproduces its results bit-for-bit.
class GridDesign {
public:
  GridDesign(std::span<const double> grid, std::span<const double> A, double h, const Kernel& k,
             int threads = 1)
      : grid_(grid.begin(), grid.end()), h_(h), kernel_id_(k.id), points_(grid.size()) {
    parallel_for(grid.size(), threads, [&](std::size_t g) {
      Point& pt = points_[g];
      const double a = grid_[g];
      for (std::size_t i = 0; i < A.size(); ++i) {
        const double u = (A[i] - a) / h;
        const double w = k.eval(u);
        if (w <= 0.0) continue;
        pt.idx.push_back(static_cast<std::uint32_t>(i));
        pt.w.push_back(w);
        pt.wu.push_back(w * u);
        pt.s0 += w;
        pt.s1 += w * u;
        pt.s2 += w * u * u;
      }
      pt.det = pt.s0 * pt.s2 - pt.s1 * pt.s1;
      pt.ok = !pt.idx.empty() && pt.s0 > 0.0 && std::abs(pt.det) >= 1e-12 * pt.s0 * pt.s0;
    });
  }

  std::size_t flagged_count() const {
    std::size_t c = 0;
    for (const auto& p : points_) c += !p.ok;
    return c;
  }
  std::size_t size() const { return points_.size(); }
  bool ok(std::size_t g) const { return points_[g].ok; }
  std::span<const double> grid() const { return grid_; }
  double bandwidth() const { return h_; }

  // theta at one grid point for the given response; NaN when flagged
  double refit_point(std::size_t g, std::span<const double> xi) const {
    const Point& pt = points_[g];
    if (!pt.ok) return std::numeric_limits<double>::quiet_NaN();
    const double anchor = xi[pt.idx[0]];
    double r0 = 0.0, r1 = 0.0;
    for (std::size_t j = 0; j < pt.idx.size(); ++j) {
      const double r = xi[pt.idx[j]] - anchor;
      r0 += pt.w[j] * r;
      r1 += pt.wu[j] * r;
    }
    return anchor + (pt.s2 * r0 - pt.s1 * r1) / pt.det;
  }

  void refit(std::span<const double> xi, std::span<double> theta_out) const {
    for (std::size_t g = 0; g < points_.size(); ++g) theta_out[g] = refit_point(g, xi);
  }

  CurveEstimate to_curve(std::span<const double> xi) const {
    CurveEstimate c;
    c.grid = grid_;
    c.h = h_;
    c.kernel_id = kernel_id_;
    c.theta.assign(grid_.size(), std::numeric_limits<double>::quiet_NaN());
    c.slope.assign(grid_.size(), std::numeric_limits<double>::quiet_NaN());
    c.flagged.assign(grid_.size(), 0);
    for (std::size_t g = 0; g < points_.size(); ++g) {
      const Point& pt = points_[g];
      if (!pt.ok) {
        c.flagged[g] = 1;
        continue;
      }
      const double anchor = xi[pt.idx[0]];
      double r0 = 0.0, r1 = 0.0;
      for (std::size_t j = 0; j < pt.idx.size(); ++j) {
        const double r = xi[pt.idx[j]] - anchor;
        r0 += pt.w[j] * r;
        r1 += pt.wu[j] * r;
      }
      c.theta[g] = anchor + (pt.s2 * r0 - pt.s1 * r1) / pt.det;
      c.slope[g] = (pt.s0 * r1 - pt.s1 * r0) / pt.det;
    }
    return c;
  }

private:
  struct Point {
    std::vector<std::uint32_t> idx;
    std::vector<double> w;
    std::vector<double> wu;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, det = 0.0;
    bool ok = false;
  };

  std::vector<double> grid_;
  double h_;
  std::string kernel_id_;
  std::vector<Point> points_;
};

inline void save_curve_csv(const CurveEstimate& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("curve: cannot write file '" + path + "'");
  out << "a,theta,slope,flagged\n";
  for (std::size_t g = 0; g < c.grid.size(); ++g)
    out << format_double(c.grid[g]) << ',' << format_double(c.theta[g]) << ','
        << format_double(c.slope[g]) << ',' << static_cast<int>(c.flagged[g]) << '\n';
}

}  // namespace drdose
