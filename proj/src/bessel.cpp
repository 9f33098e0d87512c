#include "vcshot/bessel.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "vcshot/error.hpp"

namespace vcshot {

namespace {

constexpr int kDebyeTerms = 10;
constexpr double kDebyeMinOrder = 20.0;

using Poly = std::vector<double>;  // coefficients of t^0, t^1, ...

// Debye polynomials u_0..u_{kDebyeTerms-1} from the recurrence
//   u_{k+1}(t) = t^2 (1 - t^2) u_k'(t) / 2 + (1/8) int_0^t (1 - 5 s^2) u_k(s) ds.
std::array<Poly, kDebyeTerms> make_debye_polynomials() {
  std::array<Poly, kDebyeTerms> u;
  u[0] = {1.0};
  for (int k = 0; k + 1 < kDebyeTerms; ++k) {
    const Poly& p = u[k];
    Poly next(p.size() + 3, 0.0);
    for (std::size_t i = 1; i < p.size(); ++i) {
      const double d = p[i] * static_cast<double>(i);  // coefficient of t^(i-1) in u_k'
      next[i + 1] += 0.5 * d;
      next[i + 3] -= 0.5 * d;
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      next[i + 1] += 0.125 * p[i] / static_cast<double>(i + 1);
      next[i + 3] -= 0.625 * p[i] / static_cast<double>(i + 3);
    }
    u[k + 1] = std::move(next);
  }
  return u;
}

double eval_poly(const Poly& p, double t) {
  double acc = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) acc = acc * t + *it;
  return acc;
}

double log_bessel_debye(double nu, double x) {
  static const auto u = make_debye_polynomials();
  const double z = x / nu;
  const double root = std::sqrt(1.0 + z * z);
  const double t = 1.0 / root;
  const double eta = root + std::log(z / (1.0 + root));

  double sum = 0.0;
  double scale = 1.0;
  for (int k = 0; k < kDebyeTerms; ++k) {
    sum += eval_poly(u[k], t) * scale;
    scale /= nu;
  }
  return nu * eta - 0.5 * std::log(2.0 * std::numbers::pi * nu) - 0.5 * std::log(root) + std::log(sum);
}

double log_bessel_hankel(double nu, double x) {
  const double mu = 4.0 * nu * nu;
  double term = 1.0;
  double sum = 1.0;
  double previous = std::numeric_limits<double>::infinity();
  for (int k = 1; k < 500; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= -(mu - odd * odd) / (8.0 * k * x);
    if (term == 0.0) break;
    const double magnitude = std::abs(term);
    if (magnitude > previous) break;  // asymptotic series started to diverge
    sum += term;
    if (magnitude < 1e-17 * std::abs(sum)) break;
    previous = magnitude;
  }
  return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
}

double log_bessel_series(double nu, double x) {
  const double q = 0.25 * x * x;
  double term = 1.0;
  double tail = 0.0;  // sum of the series without its leading 1
  for (int k = 1; k < 100000; ++k) {
    term *= q / (static_cast<double>(k) * (nu + k));
    tail += term;
    if (k > 0.5 * x && term < 1e-17 * (1.0 + tail)) break;
  }
  return nu * std::log(0.5 * x) - std::lgamma(nu + 1.0) + std::log1p(tail);
}

}  // namespace

double log_bessel_i(double nu, double x) {
  if (!(nu >= 0.0) || !(x >= 0.0) || !std::isfinite(nu) || !std::isfinite(x)) {
    throw InvalidArgument("log_bessel_i: need finite nu >= 0 and x >= 0 (nu=" + std::to_string(nu) +
                          ", x=" + std::to_string(x) + ")");
  }
  if (x == 0.0) return nu == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  if (nu >= kDebyeMinOrder) return log_bessel_debye(nu, x);
  if (x > 25.0 + 0.5 * nu * nu) return log_bessel_hankel(nu, x);
  return log_bessel_series(nu, x);
}

}  // namespace vcshot
