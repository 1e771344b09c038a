#include "misclass/special.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "misclass/common.hpp"

namespace misclass::special {

namespace {

constexpr double kLanczosG = 7.0;
constexpr std::array<double, 9> kLanczosCoef = {
    0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
    771.32342877765313,   -176.61502916214059,   12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};

// Lanczos partial-fraction sum A_g(z) for the shifted argument z = x - 1.
double lanczos_sum(double z) {
  double a = kLanczosCoef[0];
  for (std::size_t k = 1; k < kLanczosCoef.size(); ++k) a += kLanczosCoef[k] / (z + static_cast<double>(k));
  return a;
}

constexpr int kMaxIterations = 10000;
constexpr double kEps = 1e-16;

double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < kMaxIterations; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - lanczos_log_gamma(a));
}

// Continued fraction for Q(a, x), modified Lentz.
double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxIterations; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - lanczos_log_gamma(a)) * h;
}

void check_gamma_args(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) {
    throw Error(Errc::invalid_argument, "incomplete gamma needs a > 0 and x >= 0");
  }
}

double simpson_step(const std::function<double(double)>& f, double a, double b, double fa, double fm,
                    double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double lanczos_gamma(double x) {
  if (x < 0.5) {
    // Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
    return std::numbers::pi / (std::sin(std::numbers::pi * x) * lanczos_gamma(1.0 - x));
  }
  const double z = x - 1.0;
  const double t = z + kLanczosG + 0.5;
  return std::sqrt(2.0 * std::numbers::pi) * std::pow(t, z + 0.5) * std::exp(-t) * lanczos_sum(z);
}

double lanczos_log_gamma(double x) {
  if (!(x > 0.0)) throw Error(Errc::invalid_argument, "log gamma needs x > 0");
  if (x < 0.5) return std::log(std::numbers::pi / std::abs(std::sin(std::numbers::pi * x))) - lanczos_log_gamma(1.0 - x);
  const double z = x - 1.0;
  const double t = z + kLanczosG + 0.5;
  return 0.5 * std::log(2.0 * std::numbers::pi) + (z + 0.5) * std::log(t) - t + std::log(lanczos_sum(z));
}

double gamma_p(double a, double x) {
  check_gamma_args(a, x);
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_fraction(a, x);
}

double gamma_q(double a, double x) {
  check_gamma_args(a, x);
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_fraction(a, x);
}

double chi_squared_sf(double x, double df) {
  if (!(df > 0.0)) throw Error(Errc::invalid_argument, "chi-squared needs df > 0");
  if (x <= 0.0) return 1.0;
  return gamma_q(0.5 * df, 0.5 * x);
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol, int max_depth) {
  if (a == b) return 0.0;
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

}  // namespace misclass::special
