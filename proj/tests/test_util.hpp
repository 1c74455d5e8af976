#pragma once

// Shared test-side oracles: adaptive quadrature (kept independent of the
// library's special-function implementations) and small stat helpers.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

inline double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa,
                          double fm, double fb, double whole, double eps, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * eps) {
    return left + right + (left + right - whole) / 15.0;
  }
  return simpson_rec(f, a, m, fa, flm, fm, left, eps * 0.5, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, eps * 0.5, depth - 1);
}

/// Adaptive Simpson quadrature of f over [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double eps = 1e-12, int depth = 40) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, eps, depth);
}

/// Gaussian density written out directly (independent of the library).
inline double gauss_pdf(double x, double mean = 0.0, double sd = 1.0) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * 3.14159265358979323846));
}

/// Standard normal CDF by quadrature of the density from 0 (plus symmetry).
inline double normal_cdf_quadrature(double x) {
  if (x < 0.0) return 1.0 - normal_cdf_quadrature(-x);
  const double clipped = std::min(x, 12.0);
  return 0.5 + integrate([](double t) { return gauss_pdf(t); }, 0.0, clipped, 1e-14, 48);
}

/// KL(N(m, sigma^2) || N(alpha, tau^2)) by quadrature of q ln(q/p).
inline double kl_gaussian_quadrature(double m, double sigma, double alpha, double tau) {
  auto integrand = [&](double w) {
    const double q = gauss_pdf(w, m, sigma);
    if (q < 1e-320) return 0.0;
    const double log_q = -0.5 * ((w - m) / sigma) * ((w - m) / sigma) - std::log(sigma);
    const double log_p = -0.5 * ((w - alpha) / tau) * ((w - alpha) / tau) - std::log(tau);
    return q * (log_q - log_p);
  };
  const double lo = std::min(m - 14.0 * sigma, alpha - 2.0 * tau);
  const double hi = std::max(m + 14.0 * sigma, alpha + 2.0 * tau);
  return integrate(integrand, lo, hi, 1e-11, 44);
}

inline double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace testutil
