#pragma once
// Scalar special functions and summation helpers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace extremis::detail {

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double norm_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }
inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double norm_logpdf(double x) { return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi); }

inline double norm_quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

// log Phi(x), asymptotic series below -10 where erfc underflows relative precision.
inline double norm_logcdf(double x) {
  if (x > -10.0) return std::log(norm_cdf(x));
  const double x2 = x * x;
  // Mills ratio series: Phi(x) ~ phi(x)/|x| (1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8)
  const double inv = 1.0 / x2;
  const double series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
  return norm_logpdf(x) - std::log(-x) + std::log(series);
}

inline double student_cdf(double x, double df) {
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  if (df > 1e7) return norm_cdf(x);
  return boost::math::cdf(boost::math::students_t(df), x);
}

inline double student_sf(double x, double df) { return student_cdf(-x, df); }

inline double student_quantile(double p, double df) {
  if (df > 1e7) return norm_quantile(p);
  return boost::math::quantile(boost::math::students_t(df), p);
}

inline double gamma_p_inv(double a, double p) { return boost::math::gamma_p_inv(a, p); }
inline double gamma_q_inv(double a, double q) { return boost::math::gamma_q_inv(a, q); }

inline double log_choose(double n, double k) {
  return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1);
}

inline double choose(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  return std::round(std::exp(log_choose(n, k)));
}

// log(sum exp(a_i)); -inf entries contribute nothing.
inline double log_sum_exp(std::span<const double> a) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : a) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : a) s += std::exp(v - m);
  return m + std::log(s);
}

class KahanSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

// All k-subsets of {0..n-1} in lexicographic order.
template <class Fn>
void for_each_combination(int n, int k, Fn&& fn) {
  if (k < 0 || k > n) return;
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i;
  while (true) {
    fn(std::span<const int>(idx));
    int i = k - 1;
    while (i >= 0 && idx[i] == n - k + i) --i;
    if (i < 0) return;
    ++idx[i];
    for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

// Weighted empirical quantile, lower inverse of the step cdf.
inline double weighted_quantile(std::vector<std::pair<double, double>> vw, double p) {
  std::sort(vw.begin(), vw.end());
  double total = 0.0;
  for (auto& [v, w] : vw) total += w;
  double acc = 0.0;
  for (auto& [v, w] : vw) {
    acc += w;
    if (acc >= p * total) return v;
  }
  return vw.back().first;
}

}  // namespace extremis::detail
