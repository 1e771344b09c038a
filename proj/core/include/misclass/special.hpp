#pragma once

#include <functional>

namespace misclass::special {

/// Gamma function via the Lanczos approximation (g = 7, 9 coefficients),
/// with reflection for x < 0.5.
double lanczos_gamma(double x);

/// log Gamma(x) for x > 0, same Lanczos series evaluated in log space.
double lanczos_log_gamma(double x);

/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
double gamma_q(double a, double x);

/// Upper tail of the chi-squared distribution: P(X >= x) with `df` degrees of freedom.
double chi_squared_sf(double x, double df);

/// Adaptive Simpson quadrature with Richardson correction. Stops refining an
/// interval once |S(left)+S(right)-S(whole)| <= 15*tol or at `max_depth`.
double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                        int max_depth = 60);

}  // namespace misclass::special
