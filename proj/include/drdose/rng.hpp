#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace drdose {

// splitmix64 finalizer, used to scramble seeds and derive substream ids.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic random stream. The engine (mt19937_64) and every variate
// transform below are fully specified here, so a given (seed, substream path)
// produces the same draws on any platform and with any thread schedule.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : id_(seed), eng_(mix64(seed)) {}

  std::uint64_t id() const noexcept { return id_; }

  // Independent stream addressed by an integer path component. Substreams of
  // substreams give hierarchical addressing, e.g. (seed, replicate, bootstrap).
  Rng substream(std::uint64_t a) const { return Rng(mix64(id_ ^ mix64(a))); }
  Rng substream(std::uint64_t a, std::uint64_t b) const { return substream(a).substream(b); }

  std::uint64_t next() { return eng_(); }

  // uniform on [0, 1)
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // standard normal via Box-Muller; the spare draw is cached
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  // Gamma(shape, 1) via Marsaglia-Tsang, with the usual power boost for shape < 1.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = uniform01();
      while (u <= 0.0) u = uniform01();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Beta(a, b) from two gamma draws. Shapes are clipped to >= 1e-4 and the
  // result to the open interval so downstream log/density evaluations stay finite.
  double beta(double a, double b) {
    a = std::max(a, 1e-4);
    b = std::max(b, 1e-4);
    const double g1 = gamma(a);
    const double g2 = gamma(b);
    const double s = g1 + g2;
    double x = s > 0.0 ? g1 / s : 0.5;
    const double eps = 1e-12;
    if (x < eps) x = eps;
    if (x > 1.0 - eps) x = 1.0 - eps;
    return x;
  }

private:
  std::uint64_t id_;
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace drdose
