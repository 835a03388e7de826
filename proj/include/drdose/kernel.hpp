#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace drdose {

namespace quad {

namespace detail {

template <class F>
double simpson_step(const F& f, double a, double m, double b, double fa, double fm, double fb,
                    double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_step(f, a, lm, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, rm, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

// Adaptive Simpson quadrature with absolute tolerance. The interval is first
// split into `cells` equal pieces so compactly supported integrands with kinks
// do not fool the error estimate.
template <class F>
double adaptive_simpson(const F& f, double a, double b, double tol = 1e-8, int cells = 8,
                        int max_depth = 40) {
  if (!(b > a)) return 0.0;
  double total = 0.0;
  const double step = (b - a) / cells;
  for (int c = 0; c < cells; ++c) {
    const double lo = a + c * step;
    const double hi = (c + 1 == cells) ? b : lo + step;
    const double mid = 0.5 * (lo + hi);
    const double flo = f(lo), fmid = f(mid), fhi = f(hi);
    const double whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
    total += detail::simpson_step(f, lo, mid, hi, flo, fmid, fhi, whole, tol / cells, max_depth);
  }
  return total;
}

}  // namespace quad

// Symmetric probability-density kernel with compact support [-support, support].
// A plain function pointer keeps evaluation cheap in the smoothing loops while
// leaving the type open for user-supplied kernels.
struct Kernel {
  double (*eval)(double);
  double support;
  const char* id;
};

inline double epanechnikov_eval(double u) {
  return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
}

inline Kernel epanechnikov() { return Kernel{&epanechnikov_eval, 1.0, "epanechnikov"}; }

// nu0 = integral of K^2
inline double kernel_nu0(const Kernel& k, double tol = 1e-10) {
  return quad::adaptive_simpson([&](double u) { const double v = k.eval(u); return v * v; },
                                -k.support, k.support, tol);
}

// mu2 = integral of u^2 K(u)
inline double kernel_mu2(const Kernel& k, double tol = 1e-10) {
  return quad::adaptive_simpson([&](double u) { return u * u * k.eval(u); },
                                -k.support, k.support, tol);
}

// Sanity checks for a user-supplied kernel: unit mass, symmetry, compact support.
inline void check_kernel(const Kernel& k, double tol = 1e-8) {
  const double mass = quad::adaptive_simpson([&](double u) { return k.eval(u); },
                                             -k.support, k.support, 1e-10);
  if (std::abs(mass - 1.0) > tol)
    throw std::invalid_argument(std::string("kernel '") + k.id + "' does not integrate to 1");
  for (int i = 1; i <= 16; ++i) {
    const double u = k.support * static_cast<double>(i) / 17.0;
    if (k.eval(u) != k.eval(-u))
      throw std::invalid_argument(std::string("kernel '") + k.id + "' is not symmetric");
  }
  if (k.eval(k.support * 1.0000001) != 0.0 || k.eval(-k.support * 1.0000001) != 0.0)
    throw std::invalid_argument(std::string("kernel '") + k.id + "' is nonzero outside its support");
}

namespace detail {

// K^(s) under the recursion K^(s)(x) = integral K^(s-1)(y) K(x-y) dy with
// K^(0) = K, evaluated by nested adaptive quadrature. K^(s) has support
// [-(s+1)*support, (s+1)*support] and is s+1 kernel factors convolved together.
inline double conv_value(const Kernel& k, int s, double x, double tol) {
  if (s == 0) return k.eval(x);
  const double inner_half = static_cast<double>(s) * k.support;  // support of K^(s-1)
  const double lo = std::max(-inner_half, x - k.support);
  const double hi = std::min(inner_half, x + k.support);
  if (!(hi > lo)) return 0.0;
  const double inner_tol = tol / (4.0 * (hi - lo));
  return quad::adaptive_simpson(
      [&](double y) { return conv_value(k, s - 1, y, inner_tol) * k.eval(x - y); }, lo, hi, tol);
}

}  // namespace detail

// Value at zero of the s-step self-convolution K^(s), s in {1..4}, to absolute
// accuracy ~1e-8. By symmetry K^(s)(0) = integral K^(p)(y) K^(q)(y) dy with
// p + q = s - 1, which keeps the quadrature nesting shallow.
//
// Epanechnikov values: s=1 -> 3/5 = 0.6 (two factors; the constant appearing in
// the null-mean diagnostic), s=2 -> 1269/2560, s=3 -> 167/385 = 0.43376...
// (four factors; the null-variance constant), s=4 -> 0.39019...
inline double convolution_at_zero(const Kernel& k, int s, double tol = 1e-9) {
  if (s < 1 || s > 4) throw std::invalid_argument("convolution_at_zero: s must be in {1,...,4}");
  const int p = (s - 1) / 2;
  const int q = s - 1 - p;
  const double half = static_cast<double>(std::min(p, q) + 1) * k.support;
  const double inner_tol = tol / (8.0 * 2.0 * half);
  return quad::adaptive_simpson(
      [&](double y) {
        const double a = detail::conv_value(k, p, y, inner_tol);
        const double b = (p == q) ? a : detail::conv_value(k, q, y, inner_tol);
        return a * b;
      },
      -half, half, tol);
}

}  // namespace drdose
