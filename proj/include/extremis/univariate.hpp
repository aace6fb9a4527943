#pragma once
// Generalized Pareto and binomial-GPD models, asymmetric Laplace quantile
// regression, return levels, interval scores and loss-based point estimates.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "extremis/core.hpp"
#include "extremis/detail/optimize.hpp"
#include "extremis/detail/special.hpp"

namespace extremis {

inline constexpr double kXiSeries = 1e-8;
inline constexpr double kXiMin = -1.0;
inline constexpr double kXiMax = 5.0;

struct GpdParams {
  double sigma = 1.0;
  double xi = 0.0;
};

inline void check_gpd(const GpdParams& p) {
  require(p.sigma > 0 && std::isfinite(p.sigma), "univariate", "GPD scale must be positive");
  require(std::isfinite(p.xi), "univariate", "GPD shape must be finite");
}

// log(1 + xi z)/xi with its xi -> 0 series.
inline double gpd_log_term(double z, double xi) {
  if (std::abs(xi) < kXiSeries) return z - 0.5 * xi * z * z;
  return std::log1p(xi * z) / xi;
}

inline double gpd_upper_endpoint(const GpdParams& p) { return p.xi < 0 ? -p.sigma / p.xi : kInf; }

inline double gpd_sf(double x, const GpdParams& p) {
  check_gpd(p);
  if (x <= 0) return 1.0;
  if (x >= gpd_upper_endpoint(p)) return 0.0;
  return std::exp(-gpd_log_term(x / p.sigma, p.xi));
}

inline double gpd_cdf(double x, const GpdParams& p) {
  check_gpd(p);
  if (x <= 0) return 0.0;
  if (x >= gpd_upper_endpoint(p)) return 1.0;
  return -std::expm1(-gpd_log_term(x / p.sigma, p.xi));
}

// Quantile from the exceedance probability q_sf = 1 - level, accurate in the far tail.
inline double gpd_isf(double q_sf, const GpdParams& p) {
  check_gpd(p);
  require(q_sf > 0 && q_sf < 1, "univariate", "GPD probability must lie in (0,1)");
  const double L = -std::log(q_sf);
  if (std::abs(p.xi) < kXiSeries) return p.sigma * (L + 0.5 * p.xi * L * L);
  return p.sigma * std::expm1(p.xi * L) / p.xi;
}

inline double gpd_quantile(double q, const GpdParams& p) {
  require(q > 0 && q < 1, "univariate", "GPD probability must lie in (0,1)");
  check_gpd(p);
  const double L = -std::log1p(-q);
  if (std::abs(p.xi) < kXiSeries) return p.sigma * (L + 0.5 * p.xi * L * L);
  return p.sigma * std::expm1(p.xi * L) / p.xi;
}

inline double gpd_logpdf(double x, const GpdParams& p) {
  check_gpd(p);
  if (x < 0 || x >= gpd_upper_endpoint(p)) return -kInf;
  const double z = x / p.sigma;
  if (std::abs(p.xi) < kXiSeries) return -std::log(p.sigma) - z - p.xi * (z - 0.5 * z * z);
  return -std::log(p.sigma) - (1.0 / p.xi + 1.0) * std::log1p(p.xi * z);
}

inline double gpd_loglik(std::span<const double> y, const GpdParams& p) {
  if (!(p.sigma > 0) || !std::isfinite(p.sigma)) return -kInf;
  double s = 0.0;
  for (double v : y) {
    const double l = gpd_logpdf(v, p);
    if (!std::isfinite(l)) return -kInf;
    s += l;
  }
  return s;
}

struct GpdFit {
  GpdParams params;
  Matrix cov;  // in (sigma, xi), or (sigma) for a fixed-shape fit; empty when degenerate
  double loglik = kNaN;
  bool converged = false;
  bool fixed_xi = false;
  std::size_t n = 0;
  std::vector<std::string> flags;
};

inline GpdFit fit_gpd_mle(std::span<const double> y, std::optional<double> fix_xi = std::nullopt) {
  require(fix_xi ? !y.empty() : y.size() >= 5, "univariate",
          fix_xi ? "GPD fit needs at least one exceedance" : "GPD fit needs at least 5 exceedances");
  double mean = 0.0, maxy = 0.0;
  for (double v : y) {
    require(std::isfinite(v) && v >= 0, "univariate", "exceedances must be finite and nonnegative");
    mean += v;
    maxy = std::max(maxy, v);
  }
  mean /= y.size();
  require(mean > 0, "univariate", "all exceedances are zero");
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= (y.size() - 1);

  GpdFit fit;
  fit.n = y.size();
  if (fix_xi) {
    const double xi = *fix_xi;
    require(xi > kXiMin && xi < kXiMax, "univariate", "fixed shape outside (-1, 5)");
    fit.fixed_xi = true;
    if (xi == 0.0) {
      fit.params = {mean, 0.0};
      fit.converged = true;
    } else {
      auto nll = [&](const Vector& th) { return -gpd_loglik(y, {std::exp(th[0]), xi}); };
      double start = std::log(xi < 0 ? std::max(mean * (1 - xi), -xi * maxy * 1.01) : mean * (1 - xi));
      auto r = detail::minimize(nll, Vector::Constant(1, start));
      Vector th = detail::newton_polish(nll, r.x);
      fit.params = {std::exp(th[0]), xi};
      fit.converged = r.converged;
    }
    auto nll_s = [&](const Vector& th) { return -gpd_loglik(y, {th[0], xi}); };
    fit.cov = detail::inverse_information(detail::numerical_hessian(nll_s, Vector::Constant(1, fit.params.sigma)));
    fit.loglik = gpd_loglik(y, fit.params);
    if (fit.cov.size() == 0) fit.flags.push_back("degenerate_hessian");
    return fit;
  }

  double xi0 = var > 0 ? 0.5 * (1.0 - mean * mean / var) : -0.5;
  xi0 = std::clamp(xi0, -0.45, 2.0);
  double s0 = var > 0 ? 0.5 * mean * (1.0 + mean * mean / var) : mean;
  if (xi0 < 0) s0 = std::max(s0, -xi0 * maxy * 1.05);
  auto nll = [&](const Vector& th) {
    if (th[1] <= kXiMin || th[1] >= kXiMax) return kInf;
    return -gpd_loglik(y, {std::exp(th[0]), th[1]});
  };
  Vector x0(2);
  x0 << std::log(s0), xi0;
  auto r = detail::minimize(nll, x0);
  if (!std::isfinite(r.value)) {
    Vector x1(2);
    x1 << std::log(mean), 0.0;
    r = detail::minimize(nll, x1);
  }
  if (!std::isfinite(r.value)) throw ComputationError("univariate", "GPD likelihood not finite at any start");
  Vector th = detail::newton_polish(nll, r.x);
  fit.params = {std::exp(th[0]), th[1]};
  fit.converged = r.converged || r.message.empty();
  fit.loglik = gpd_loglik(y, fit.params);
  if (!fit.converged) throw ComputationError("univariate", "GPD fit did not converge: " + r.message);
  if (fit.params.xi < kXiMin + 1e-3) fit.flags.push_back("shape_at_lower_bound");
  auto nll_s = [&](const Vector& p) {
    if (p[1] <= kXiMin || p[1] >= kXiMax) return kInf;
    return -gpd_loglik(y, {p[0], p[1]});
  };
  Vector at(2);
  at << fit.params.sigma, fit.params.xi;
  fit.cov = detail::inverse_information(detail::numerical_hessian(nll_s, at));
  if (fit.cov.size() == 0) fit.flags.push_back("degenerate_hessian");
  return fit;
}

// ---------------------------------------------------------------------------
// Binomial-GPD model and return levels

struct BinGpdModel {
  double u = 0.0;
  double zeta_u = 0.5;
  GpdParams gpd;
};

inline void check_model(const BinGpdModel& m) {
  require(std::isfinite(m.u), "univariate", "threshold must be finite");
  require(m.zeta_u > 0 && m.zeta_u < 1, "univariate", "exceedance probability must lie in (0,1)");
  check_gpd(m.gpd);
}

// Pr(Z > z) under the binomial-GPD model; below the threshold the model
// only knows the exceedance probability.
inline double bingpd_sf(double z, const BinGpdModel& m) {
  if (z <= m.u) return m.zeta_u;
  return m.zeta_u * gpd_sf(z - m.u, m.gpd);
}

inline double return_level_closed(const BinGpdModel& m, double T, double Ny) {
  check_model(m);
  require(T > 0 && Ny > 0, "univariate", "return period and records per year must be positive");
  const double r = Ny * T * m.zeta_u;
  if (r < 1.0) throw InvalidArgument("univariate", "return level lies below the threshold (Ny*T*zeta_u < 1)");
  const double lr = std::log(r);
  if (std::abs(m.gpd.xi) < kXiSeries) return m.u + m.gpd.sigma * (lr + 0.5 * m.gpd.xi * lr * lr);
  return m.u + m.gpd.sigma * std::expm1(m.gpd.xi * lr) / m.gpd.xi;
}

enum class ReturnConvention {
  AnnualMaximum,   // [mean F(z)]^m = 1 - 1/T
  ExceedanceRate,  // m (1 - mean F(z)) = 1/T
};

inline double solve_return_level(std::span<const BinGpdModel> models, double T, double m,
                                 ReturnConvention conv = ReturnConvention::AnnualMaximum,
                                 std::span<const double> weights = {}) {
  require(!models.empty(), "univariate", "need at least one model");
  require(T > 1, "univariate", "return period must exceed 1");
  require(m > 0, "univariate", "records per year must be positive");
  require(weights.empty() || weights.size() == models.size(), "univariate", "weights do not match models");
  double wsum = 0.0;
  for (std::size_t i = 0; i < models.size(); ++i) {
    check_model(models[i]);
    wsum += weights.empty() ? 1.0 : weights[i];
  }
  require(wsum > 0, "univariate", "weights must not all be zero");
  auto mean_sf = [&](double z) {
    double s = 0.0;
    for (std::size_t i = 0; i < models.size(); ++i)
      s += (weights.empty() ? 1.0 : weights[i]) * bingpd_sf(z, models[i]);
    return s / wsum;
  };
  // g(z) = log(lhs) - log(target) is decreasing in z.
  double log_target = 0.0;
  std::function<double(double)> g;
  if (conv == ReturnConvention::AnnualMaximum) {
    log_target = std::log(-std::log1p(-1.0 / T));
    g = [&](double z) {
      const double s = mean_sf(z);
      if (s <= 0) return -kInf;
      return std::log(-m * std::log1p(-s)) - log_target;
    };
  } else {
    log_target = -std::log(T);
    g = [&](double z) {
      const double s = mean_sf(z);
      if (s <= 0) return -kInf;
      return std::log(m * s) - log_target;
    };
  }
  double lo = models[0].u, hi = models[0].u;
  for (auto& md : models) {
    lo = std::min(lo, md.u);
    hi = std::max(hi, md.u);
  }
  if (g(lo) < 0) throw InvalidArgument("univariate", "return level lies below every threshold");
  if (g(hi) < 0) {
    hi = detail::bisect(g, lo, hi, 1e-10);
    return hi;
  }
  double width = 1.0;
  for (auto& md : models) width = std::max(width, md.gpd.sigma);
  double upper = hi + width;
  int expansions = 0;
  while (g(upper) > 0) {
    width *= 2.0;
    upper = hi + width;
    if (++expansions > 2000 || !std::isfinite(upper))
      throw ComputationError("univariate", "could not bracket the return level");
  }
  const double tol = 1e-8;
  double a = hi, b = upper;
  while (b - a > tol) {
    const double mid = 0.5 * (a + b);
    if (mid == a || mid == b) break;
    (g(mid) > 0 ? a : b) = mid;
  }
  return 0.5 * (a + b);
}

// ---------------------------------------------------------------------------
// Profile likelihood interval for the T-year return level

struct ProfileInterval {
  double qhat = kNaN;
  double lower = kNaN;
  double upper = kNaN;
  bool lower_bounded = true;
  bool upper_bounded = true;
  double level = 0.95;
  std::vector<std::pair<double, double>> profile;  // (q, profile loglik)
};

// Scale implied by return level q and shape xi, r = Ny T zeta_u.
inline double profile_sigma(double excess, double xi, double r) {
  const double lr = std::log(r);
  if (std::abs(xi) < kXiSeries) return excess / (lr + 0.5 * xi * lr * lr);
  return excess * xi / std::expm1(xi * lr);
}

inline double profile_loglik_at(std::span<const double> y, double q_excess, double r, double* xi_hint) {
  auto ll = [&](double xi) {
    const double s = profile_sigma(q_excess, xi, r);
    if (!(s > 0)) return -kInf;
    return gpd_loglik(y, {s, xi});
  };
  auto neg = [&](double xi) {
    double v = ll(xi);
    return std::isfinite(v) ? -v : 1e300;
  };
  double best_xi = kNaN, best = -kInf;
  if (xi_hint && std::isfinite(*xi_hint)) {
    const double a = std::max(kXiMin + 1e-6, *xi_hint - 0.25), b = std::min(kXiMax - 1e-6, *xi_hint + 0.25);
    const double x = detail::brent_minimize(neg, a, b, 1e-9);
    const double v = ll(x);
    if (std::isfinite(v) && x > a + 1e-4 && x < b - 1e-4) {
      best_xi = x;
      best = v;
    }
  }
  if (!std::isfinite(best)) {
    const int grid = 60;
    for (int k = 0; k <= grid; ++k) {
      const double xi = kXiMin + 1e-6 + (kXiMax - kXiMin - 2e-6) * k / grid;
      const double v = ll(xi);
      if (v > best) {
        best = v;
        best_xi = xi;
      }
    }
    if (!std::isfinite(best)) return -kInf;
    const double step = (kXiMax - kXiMin) / grid;
    const double x = detail::brent_minimize(neg, std::max(kXiMin + 1e-6, best_xi - step),
                                            std::min(kXiMax - 1e-6, best_xi + step), 1e-9);
    const double v = ll(x);
    if (v > best) {
      best = v;
      best_xi = x;
    }
  }
  if (xi_hint) *xi_hint = best_xi;
  return best;
}

inline ProfileInterval profile_return_level_ci(std::span<const double> exceedances, double u, double zeta_u,
                                               double T, double Ny, double level = 0.95) {
  require(level > 0 && level < 1, "univariate", "confidence level must lie in (0,1)");
  const double r = Ny * T * zeta_u;
  require(r > 1, "univariate", "return level must lie above the threshold (Ny*T*zeta_u > 1)");
  GpdFit fit = fit_gpd_mle(exceedances);
  BinGpdModel mdl{u, zeta_u, fit.params};
  ProfileInterval out;
  out.level = level;
  out.qhat = return_level_closed(mdl, T, Ny);
  const double lhat = fit.loglik;
  const double cut = boost::math::quantile(boost::math::chi_squared(1.0), level) / 2.0;
  const double qex = out.qhat - u;

  // delta-method standard error in q
  double se = 0.25 * qex;
  if (fit.cov.size() == 4) {
    const double h = 1e-6;
    Eigen::Vector2d grad;
    BinGpdModel a = mdl, b = mdl;
    a.gpd.sigma += h * fit.params.sigma;
    b.gpd.sigma -= h * fit.params.sigma;
    grad[0] = (return_level_closed(a, T, Ny) - return_level_closed(b, T, Ny)) / (2 * h * fit.params.sigma);
    a = mdl;
    b = mdl;
    a.gpd.xi += h;
    b.gpd.xi -= h;
    grad[1] = (return_level_closed(a, T, Ny) - return_level_closed(b, T, Ny)) / (2 * h);
    const double v = grad.dot(fit.cov * grad);
    if (v > 0 && std::isfinite(v)) se = std::sqrt(v);
  }

  double hint = fit.params.xi;
  auto dev = [&](double q_excess) {
    if (q_excess <= 0) return kInf;
    const double l = profile_loglik_at(exceedances, q_excess, r, &hint);
    return std::isfinite(l) ? lhat - l : kInf;
  };
  // Search outward from the MLE on a 400-point grid of +-8 SE; widen if needed.
  auto search = [&](int dir, double& bound, bool& bounded) {
    double span = 8.0 * se;
    double prev_q = qex, prev_d = 0.0;
    hint = fit.params.xi;
    for (int attempt = 0; attempt < 8; ++attempt) {
      const int pts = 200;
      for (int k = 1; k <= pts; ++k) {
        double q = qex + dir * span * k / pts;
        if (attempt > 0 && std::abs(q - qex) <= std::abs(prev_q - qex)) continue;
        if (q <= 0) q = std::min(prev_q, qex) * 0.5;
        const double d = dev(q);
        out.profile.emplace_back(q + u, lhat - d);
        if (d >= cut) {
          double a = prev_q, b = q;
          double hint_saved = hint;
          for (int it = 0; it < 60 && std::abs(b - a) > 1e-9 * (1 + qex); ++it) {
            const double mq = 0.5 * (a + b);
            hint = hint_saved;
            (dev(mq) >= cut ? b : a) = mq;
          }
          bound = 0.5 * (a + b) + u;
          bounded = true;
          return;
        }
        prev_q = q;
        prev_d = d;
        if (dir < 0 && q <= 1e-12 * qex) break;
      }
      span *= 4.0;
    }
    (void)prev_d;
    bound = dir > 0 ? kInf : u;
    bounded = false;
  };
  search(-1, out.lower, out.lower_bounded);
  search(+1, out.upper, out.upper_bounded);
  std::sort(out.profile.begin(), out.profile.end());
  return out;
}

// ---------------------------------------------------------------------------
// Covariate-dependent GPD

struct RegressionSpec {
  std::string name;
  std::vector<std::string> sigma_columns;  // intercept implicit
  std::vector<std::string> xi_columns;
};

// The seven exceedance models compared in the data challenge, by covariate name.
inline std::vector<RegressionSpec> preset_regression_specs() {
  const std::vector<std::string> all = {"V1", "V2", "V3", "V4", "WindDirection", "WindSpeed",
                                        "Atmosphere", "Season", "Changepoint"};
  return {
      {"model1", {}, {}},
      {"model2", {"Season"}, {"Season"}},
      {"model3", {"Season", "Changepoint"}, {"Season", "Changepoint"}},
      {"model4", all, {}},
      {"model5", all, {"Season"}},
      {"model6", all, {"Changepoint"}},
      {"model7", all, {"Season", "Changepoint"}},
  };
}

// Design matrix with a leading column of ones and the selected covariates.
inline Matrix design_with_intercept(const Matrix& X, std::span<const int> cols) {
  Matrix D(X.rows(), 1 + static_cast<Eigen::Index>(cols.size()));
  D.col(0).setOnes();
  for (std::size_t k = 0; k < cols.size(); ++k) {
    require(cols[k] >= 0 && cols[k] < X.cols(), "univariate", "covariate column out of range");
    D.col(1 + k) = X.col(cols[k]);
  }
  return D;
}

inline std::vector<int> resolve_columns(const std::vector<std::string>& wanted,
                                        const std::vector<std::string>& names) {
  std::vector<int> out;
  for (auto& w : wanted) {
    auto it = std::find(names.begin(), names.end(), w);
    require(it != names.end(), "univariate", "unknown covariate '" + w + "'");
    out.push_back(static_cast<int>(it - names.begin()));
  }
  return out;
}

struct GpdRegression {
  Vector beta_sigma;
  Vector beta_xi;
  std::vector<std::string> sigma_columns;  // without the intercept
  std::vector<std::string> xi_columns;
  Matrix cov;  // joint covariance of (beta_sigma, beta_xi); empty when degenerate
  double loglik = kNaN;
  std::size_t n_exceed = 0;
  bool converged = false;
  std::vector<std::string> flags;

  Vector coefficients() const {
    Vector c(beta_sigma.size() + beta_xi.size());
    c << beta_sigma, beta_xi;
    return c;
  }
};

// Rows of the two design matrices must align with y and u; the intercept
// column is the caller's responsibility (see design_with_intercept).
inline double gpd_regression_loglik(const Matrix& Xs, const Matrix& Xx, std::span<const double> excess,
                                    const Vector& bs, const Vector& bx) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < Xs.rows(); ++i) {
    const double ls = Xs.row(i).dot(bs);
    const double xi = Xx.row(i).dot(bx);
    if (!(xi > kXiMin && xi < kXiMax) || !(std::abs(ls) < 700)) return -kInf;
    const double l = gpd_logpdf(excess[i], {std::exp(ls), xi});
    if (!std::isfinite(l)) return -kInf;
    ll += l;
  }
  return ll;
}

inline GpdRegression fit_gpd_regression_design(const Matrix& Xs, const Matrix& Xx, std::span<const double> excess,
                                               const std::optional<Vector>& start = std::nullopt) {
  const auto ps = Xs.cols(), px = Xx.cols();
  const auto n = static_cast<std::size_t>(Xs.rows());
  require(Xx.rows() == Xs.rows() && excess.size() == n, "univariate", "design rows do not match responses");
  if (n < 5 * static_cast<std::size_t>(1 + ps + px))
    throw InvalidArgument("univariate", "insufficient exceedances: " + std::to_string(n) + " for " +
                                            std::to_string(ps + px) + " coefficients");
  GpdRegression out;
  out.n_exceed = n;
  Vector theta(ps + px);
  if (start) {
    theta = *start;
  } else {
    GpdFit base = fit_gpd_mle(excess);
    theta.setZero();
    // Intercept-only fit maps onto the first column when it is constant.
    const double c0 = Xs(0, 0), x0 = Xx(0, 0);
    theta[0] = std::log(base.params.sigma) / c0;
    theta[ps] = base.params.xi / x0;
  }
  auto nll = [&](const Vector& th) {
    return -gpd_regression_loglik(Xs, Xx, excess, th.head(ps), th.tail(px));
  };
  detail::OptimOptions opt;
  opt.simplex = theta.size() <= 4;
  Vector step = Vector::Constant(theta.size(), 0.05);
  opt.initial_step = step;
  auto r = detail::minimize(nll, theta, opt);
  if (!std::isfinite(r.value)) throw ComputationError("univariate", "GPD regression likelihood not finite");
  Vector th = theta.size() <= 30 ? detail::newton_polish(nll, r.x) : r.x;
  out.beta_sigma = th.head(ps);
  out.beta_xi = th.tail(px);
  out.loglik = -nll(th);
  out.converged = r.converged;
  if (!r.converged) out.flags.push_back("not_converged");
  out.cov = detail::inverse_information(detail::numerical_hessian(nll, th));
  if (out.cov.size() == 0) out.flags.push_back("degenerate_hessian");
  return out;
}

inline GpdRegression fit_gpd_regression(const Matrix& X, const std::vector<std::string>& names,
                                        std::span<const double> y, std::span<const double> u,
                                        const RegressionSpec& spec) {
  require(X.rows() == static_cast<Eigen::Index>(y.size()) && y.size() == u.size(), "univariate",
          "covariates, responses and thresholds must align");
  std::vector<Eigen::Index> rows;
  std::vector<double> excess;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] > u[i]) {
      rows.push_back(static_cast<Eigen::Index>(i));
      excess.push_back(y[i] - u[i]);
    }
  const auto cs = resolve_columns(spec.sigma_columns, names);
  const auto cx = resolve_columns(spec.xi_columns, names);
  Matrix Xe(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) Xe.row(k) = X.row(rows[k]);
  const auto ncoef = 2 + cs.size() + cx.size();
  if (rows.size() < 5 * (1 + ncoef))
    throw InvalidArgument("univariate", "insufficient exceedances: " + std::to_string(rows.size()) + " for " +
                                            std::to_string(ncoef) + " coefficients");
  auto fit = fit_gpd_regression_design(design_with_intercept(Xe, cs), design_with_intercept(Xe, cx), excess);
  fit.sigma_columns = spec.sigma_columns;
  fit.xi_columns = spec.xi_columns;
  return fit;
}

inline double exceedance_fraction(std::span<const double> y, std::span<const double> u) {
  require(y.size() == u.size(), "univariate", "responses and thresholds must align");
  require(!y.empty(), "univariate", "empty response vector");
  std::size_t k = 0;
  for (std::size_t i = 0; i < y.size(); ++i) k += y[i] > u[i];
  return static_cast<double>(k) / y.size();
}

// ---------------------------------------------------------------------------
// Asymmetric Laplace quantile regression

struct AldParams {
  Vector beta_eta;
  double log_nu = kNaN;
  double tau = 0.5;
  Matrix cov;
  double check_loss = kNaN;  // sum of rho_tau residuals
  int iterations = 0;
};

inline double check_function(double r, double tau) { return r * (tau - (r < 0 ? 1.0 : 0.0)); }

inline double ald_logpdf(double y, double eta, double nu, double tau) {
  return std::log(tau * (1 - tau) / nu) - check_function((y - eta) / nu, tau);
}

namespace detail {

// Exact minimizer of sum rho_tau(y - X b) by descent along the edges of the
// polyhedral objective, starting from a basis of p interpolated observations.
inline Vector quantile_regression_edges(const Matrix& X, const Vector& y, double tau, const Vector& start,
                                        int* iterations) {
  const auto n = X.rows(), p = X.cols();
  // initial basis: smallest |residual| rows that keep X_h nonsingular
  Vector r0 = y - X * start;
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return std::abs(r0[a]) < std::abs(r0[b]); });
  std::vector<Eigen::Index> basis;
  Matrix Xh(0, p);
  for (auto i : order) {
    Matrix trial(Xh.rows() + 1, p);
    trial << Xh, X.row(i);
    Eigen::FullPivLU<Matrix> lu(trial);
    lu.setThreshold(1e-10);
    if (lu.rank() == trial.rows()) {
      Xh = trial;
      basis.push_back(i);
      if (static_cast<Eigen::Index>(basis.size()) == p) break;
    }
  }
  if (static_cast<Eigen::Index>(basis.size()) < p) throw ComputationError("univariate", "no nonsingular basis");

  auto solve_basis = [&](Vector& b, Eigen::PartialPivLU<Matrix>& lu) {
    Matrix A(p, p);
    Vector yb(p);
    for (Eigen::Index k = 0; k < p; ++k) {
      A.row(k) = X.row(basis[k]);
      yb[k] = y[basis[k]];
    }
    lu.compute(A);
    b = lu.solve(yb);
  };
  Vector beta;
  Eigen::PartialPivLU<Matrix> lu;
  solve_basis(beta, lu);
  std::vector<char> in_basis(n, 0);
  for (auto i : basis) in_basis[i] = 1;

  const int max_iter = 50 * static_cast<int>(n + p);
  int it = 0;
  for (; it < max_iter; ++it) {
    Vector r = y - X * beta;
    const double scale = 1e-12 * (1.0 + y.cwiseAbs().maxCoeff());
    // best improving edge over k in basis, s in {+1,-1}
    double best_slope = -1e-12;
    Eigen::Index best_k = -1;
    int best_s = 0;
    Vector best_d;
    Matrix Ainv_t = lu.inverse();  // columns give directions
    for (Eigen::Index k = 0; k < p; ++k) {
      for (int s : {+1, -1}) {
        Vector d = -s * Ainv_t.col(k);  // x_k^T d = -s, other basis rows 0
        double slope = s > 0 ? tau : 1 - tau;
        for (Eigen::Index i = 0; i < n; ++i) {
          if (in_basis[i]) continue;
          const double gi = X.row(i).dot(d);
          if (r[i] > scale)
            slope -= tau * gi;
          else if (r[i] < -scale)
            slope -= (tau - 1) * gi;
          else
            slope += check_function(-gi, tau);
        }
        const double dn = d.norm();
        if (slope / dn < best_slope) {
          best_slope = slope / dn;
          best_k = k;
          best_s = s;
          best_d = d;
        }
      }
    }
    if (best_k < 0) break;
    // line search along beta + t d over breakpoints t_i = r_i / g_i
    std::vector<std::pair<double, double>> bps;  // (t, slope increment)
    double slope = best_s > 0 ? tau : 1 - tau;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (in_basis[i]) continue;
      const double gi = X.row(i).dot(best_d);
      if (std::abs(gi) < 1e-300) continue;
      const double ti = r[i] / gi;
      if (r[i] > scale)
        slope -= tau * gi;
      else if (r[i] < -scale)
        slope -= (tau - 1) * gi;
      else {
        slope += check_function(-gi, tau);
        continue;
      }
      if (ti > 0) bps.emplace_back(ti, std::abs(gi));
    }
    std::sort(bps.begin(), bps.end());
    double t_star = -1;
    Eigen::Index enter = -1;
    for (auto& [t, inc] : bps) {
      slope += inc;
      if (slope >= 0) {
        t_star = t;
        break;
      }
    }
    if (t_star < 0) throw ComputationError("univariate", "quantile regression objective unbounded");
    // identify entering observation
    double best_gap = kInf;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (in_basis[i]) continue;
      const double gi = X.row(i).dot(best_d);
      if (std::abs(gi) < 1e-300) continue;
      const double gap = std::abs(r[i] / gi - t_star);
      if (gap < best_gap) {
        best_gap = gap;
        enter = i;
      }
    }
    in_basis[basis[best_k]] = 0;
    basis[best_k] = enter;
    in_basis[enter] = 1;
    solve_basis(beta, lu);
  }
  if (iterations) *iterations = it;
  return beta;
}

}  // namespace detail

inline AldParams fit_ald(const Matrix& X, std::span<const double> yv, double tau,
                         const std::vector<std::string>& column_names = {}) {
  require(tau > 0 && tau < 1, "univariate", "tau must lie in (0,1)");
  const auto n = X.rows(), p = X.cols();
  require(static_cast<Eigen::Index>(yv.size()) == n, "univariate", "design rows do not match responses");
  require(n > p && p >= 1, "univariate", "need more observations than coefficients");
  for (Eigen::Index j = 1; j <= p; ++j) {
    Eigen::ColPivHouseholderQR<Matrix> qr(X.leftCols(j));
    qr.setThreshold(1e-10);
    if (qr.rank() < j) {
      const std::string name = static_cast<Eigen::Index>(column_names.size()) == p
                                   ? column_names[j - 1]
                                   : "column " + std::to_string(j - 1);
      throw ComputationError("univariate", "collinear design: " + name + " is a combination of earlier columns");
    }
  }
  Vector y = Eigen::Map<const Vector>(yv.data(), n);
  AldParams out;
  out.tau = tau;
  const bool intercept_only = p == 1 && (X.col(0).array() == X(0, 0)).all() && X(0, 0) != 0;
  if (intercept_only) {
    // minimizers of sum rho(y - eta) form [y_(k), y_(k+1)] when n tau = k is an integer
    std::vector<double> s(yv.begin(), yv.end());
    std::sort(s.begin(), s.end());
    const double nt = n * tau;
    const double k = std::round(nt);
    double eta;
    if (std::abs(nt - k) < 1e-9 && k >= 1 && k < n)
      eta = 0.5 * (s[static_cast<std::size_t>(k) - 1] + s[static_cast<std::size_t>(k)]);
    else
      eta = s[static_cast<std::size_t>(std::ceil(nt)) - 1];
    out.beta_eta = Vector::Constant(1, eta / X(0, 0));
  } else {
    // least-squares start, then iteratively reweighted refinement, then exact edges
    Vector b = X.colPivHouseholderQr().solve(y);
    for (int it = 0; it < 30; ++it) {
      Vector r = y - X * b;
      Vector w(n);
      for (Eigen::Index i = 0; i < n; ++i)
        w[i] = (r[i] >= 0 ? tau : 1 - tau) / std::max(std::abs(r[i]), 1e-6);
      Matrix XtW = X.transpose() * w.asDiagonal();
      Vector nb = (XtW * X).ldlt().solve(XtW * y);
      if (!nb.allFinite()) break;
      if ((nb - b).cwiseAbs().maxCoeff() < 1e-10 * (1 + b.cwiseAbs().maxCoeff())) {
        b = nb;
        break;
      }
      b = nb;
    }
    out.beta_eta = detail::quantile_regression_edges(X, y, tau, b, &out.iterations);
  }
  Vector r = y - X * out.beta_eta;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) loss += check_function(r[i], tau);
  out.check_loss = loss;
  const double nu = loss / n;
  out.log_nu = std::log(nu);
  Matrix XtX = X.transpose() * X;
  out.cov = nu * nu / (tau * (1 - tau)) * XtX.inverse();
  return out;
}

// ---------------------------------------------------------------------------
// Interval scores and split-sample cross-validation

struct IntervalForecast {
  double lower = 0.0;
  double upper = 0.0;
  double alpha = 0.5;
};

inline double interval_score(const IntervalForecast& f, double y) {
  require(f.lower <= f.upper, "univariate", "interval lower bound exceeds upper bound");
  require(f.alpha > 0 && f.alpha < 1, "univariate", "alpha must lie in (0,1)");
  double s = f.upper - f.lower;
  if (y < f.lower) s += 2.0 / f.alpha * (f.lower - y);
  if (y > f.upper) s += 2.0 / f.alpha * (y - f.upper);
  return s;
}

// Draws from Normal(mean, cov) through a clipped spectral square root.
inline Matrix sample_params_gaussian(const Vector& mean, const Matrix& cov, int n_draws, std::uint64_t seed) {
  const auto p = mean.size();
  require(cov.rows() == p && cov.cols() == p, "univariate", "covariance does not match coefficient vector");
  require(n_draws >= 1, "univariate", "need at least one draw");
  Matrix S = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  Vector lam = es.eigenvalues();
  const double top = std::max(0.0, lam.maxCoeff());
  if (lam.minCoeff() < -1e-8 * std::max(top, 1e-300) && lam.minCoeff() < -1e-14)
    throw InvalidArgument("univariate", "covariance is not positive semi-definite");
  lam = lam.cwiseMax(0.0);
  Matrix root = es.eigenvectors() * lam.cwiseSqrt().asDiagonal();
  RandomStream rng(seed, 0);
  Matrix out(n_draws, p);
  Vector z(p);
  for (int i = 0; i < n_draws; ++i) {
    for (Eigen::Index k = 0; k < p; ++k) z[k] = rng.normal();
    out.row(i) = (mean + root * z).transpose();
  }
  return out;
}

struct CvSummary {
  std::string model;
  std::vector<double> score;     // summed interval score per repeat
  std::vector<double> coverage;  // empirical coverage per repeat
  std::vector<std::size_t> excluded;  // test points with predicted level 1 per repeat
  std::size_t failed_repeats = 0;

  double mean_score() const {
    return score.empty() ? kNaN : std::accumulate(score.begin(), score.end(), 0.0) / score.size();
  }
  double mean_coverage() const {
    return coverage.empty() ? kNaN : std::accumulate(coverage.begin(), coverage.end(), 0.0) / coverage.size();
  }
};

struct CvOptions {
  double alpha = 0.5;
  int repeats = 10;
  int draws = 1000;
  double train_fraction = 2.0 / 3.0;  // of the exceedances, split equally into the two training folds
  std::uint64_t seed = 1;
};

// Per repeat the same fold split is used for every model, so scores pair up.
inline std::vector<CvSummary> cv_interval_score(const Matrix& X, const std::vector<std::string>& names,
                                                std::span<const double> y, std::span<const double> u,
                                                const std::vector<RegressionSpec>& specs,
                                                const CvOptions& opt = {}) {
  require(opt.alpha > 0 && opt.alpha < 1, "univariate", "alpha must lie in (0,1)");
  require(opt.train_fraction > 0 && opt.train_fraction < 1, "univariate", "train fraction must lie in (0,1)");
  require(opt.repeats >= 1 && opt.draws >= 2, "univariate", "need at least one repeat and two draws");
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] > u[i]) rows.push_back(static_cast<Eigen::Index>(i));
  require(rows.size() >= 30, "univariate", "too few exceedances for cross-validation");
  std::vector<CvSummary> out(specs.size());
  std::vector<std::pair<std::vector<int>, std::vector<int>>> cols;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    out[s].model = specs[s].name;
    cols.emplace_back(resolve_columns(specs[s].sigma_columns, names), resolve_columns(specs[s].xi_columns, names));
  }
  const std::size_t ne = rows.size();
  struct RepeatResult {
    std::vector<double> score, coverage;
    std::vector<std::size_t> excluded;
    std::vector<char> ok;
  };
  std::vector<RepeatResult> results(opt.repeats);
  parallel_for(static_cast<std::size_t>(opt.repeats), [&](std::size_t rep) {
    RandomStream rng(opt.seed, rep);
    std::vector<Eigen::Index> perm = rows;
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    const std::size_t n_train = static_cast<std::size_t>(std::round(opt.train_fraction * ne));
    const std::size_t n1 = n_train / 2;
    auto sub = [&](std::size_t a, std::size_t b) { return std::vector<Eigen::Index>(perm.begin() + a, perm.begin() + b); };
    const auto t1 = sub(0, n1), t2 = sub(n1, n_train), test = sub(n_train, ne);
    auto gather = [&](const std::vector<Eigen::Index>& idx, Matrix& Xo, std::vector<double>& ex) {
      Xo.resize(static_cast<Eigen::Index>(idx.size()), X.cols());
      ex.resize(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        Xo.row(k) = X.row(idx[k]);
        ex[k] = y[idx[k]] - u[idx[k]];
      }
    };
    Matrix X1, X2, Xt;
    std::vector<double> e1, e2, et;
    gather(t1, X1, e1);
    gather(t2, X2, e2);
    gather(test, Xt, et);
    RepeatResult& res = results[rep];
    for (std::size_t s = 0; s < specs.size(); ++s) {
      const auto& [cs, cx] = cols[s];
      try {
        auto f1 = fit_gpd_regression_design(design_with_intercept(X1, cs), design_with_intercept(X1, cx), e1);
        auto f2 = fit_gpd_regression_design(design_with_intercept(X2, cs), design_with_intercept(X2, cx), e2);
        if (f2.cov.size() == 0) throw ComputationError("univariate", "train-2 information not positive definite");
        Matrix draws = sample_params_gaussian(f2.coefficients(), f2.cov, opt.draws,
                                              stream_seed(opt.seed, 1000003 * (rep + 1) + s));
        const auto ps = f2.beta_sigma.size();
        Matrix Ds = design_with_intercept(Xt, cs), Dx = design_with_intercept(Xt, cx);
        double score = 0.0;
        std::size_t covered = 0, used = 0, excluded = 0;
        std::vector<double> qs(opt.draws);
        for (Eigen::Index i = 0; i < Xt.rows(); ++i) {
          GpdParams p1{std::exp(Ds.row(i).dot(f1.beta_sigma)), Dx.row(i).dot(f1.beta_xi)};
          const double level_sf = gpd_sf(et[i], p1);
          if (level_sf <= 0.0) {
            ++excluded;
            continue;
          }
          int valid = 0;
          for (int d = 0; d < opt.draws; ++d) {
            const double sg = std::exp(Ds.row(i).dot(draws.row(d).head(ps).transpose()));
            const double xi = Dx.row(i).dot(draws.row(d).tail(draws.cols() - ps).transpose());
            if (!(sg > 0) || !std::isfinite(sg) || !std::isfinite(xi)) continue;
            qs[valid++] = level_sf >= 1.0 ? 0.0 : gpd_isf(level_sf, {sg, xi});
          }
          if (valid < 2) {
            ++excluded;
            continue;
          }
          std::vector<double> v(qs.begin(), qs.begin() + valid);
          IntervalForecast f{sample_quantile(v, opt.alpha / 2), sample_quantile(v, 1 - opt.alpha / 2), opt.alpha};
          score += interval_score(f, et[i]);
          covered += (et[i] >= f.lower && et[i] <= f.upper);
          ++used;
        }
        res.score.push_back(score);
        res.coverage.push_back(used ? static_cast<double>(covered) / used : kNaN);
        res.excluded.push_back(excluded);
        res.ok.push_back(1);
      } catch (const ComputationError&) {
        res.score.push_back(kNaN);
        res.coverage.push_back(kNaN);
        res.excluded.push_back(0);
        res.ok.push_back(0);
      }
    }
  });
  for (auto& res : results)
    for (std::size_t s = 0; s < specs.size(); ++s) {
      if (!res.ok[s]) {
        ++out[s].failed_repeats;
        continue;
      }
      out[s].score.push_back(res.score[s]);
      out[s].coverage.push_back(res.coverage[s]);
      out[s].excluded.push_back(res.excluded[s]);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Loss-based point estimation

inline double return_level_loss(double q, double qhat) {
  double l = 0.0;
  if (0.99 * q > qhat) l += 0.9 * (0.99 * q - qhat);
  if (1.01 * q < qhat) l += 0.1 * (qhat - 1.01 * q);
  return l;
}

inline double expected_loss(std::span<const double> q, double qhat, std::span<const double> w = {}) {
  require(!q.empty(), "univariate", "empty posterior sample");
  require(w.empty() || w.size() == q.size(), "univariate", "weights do not match samples");
  double s = 0.0, ws = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    s += wi * return_level_loss(q[i], qhat);
    ws += wi;
  }
  return s / ws;
}

// Exact minimizer: the expected loss is piecewise linear with knots at
// 0.99 q_i and 1.01 q_i; ties go to the smallest knot.
inline double minimize_expected_loss(std::span<const double> q, std::span<const double> w = {}) {
  require(!q.empty(), "univariate", "empty posterior sample");
  require(w.empty() || w.size() == q.size(), "univariate", "weights do not match samples");
  const std::size_t n = q.size();
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    require(q[i] > 0 && std::isfinite(q[i]), "univariate", "posterior samples must be positive");
    const double wi = w.empty() ? 1.0 : w[i];
    require(wi >= 0, "univariate", "weights must be nonnegative");
    wsum += wi;
  }
  require(wsum > 0, "univariate", "weights sum to zero");
  std::vector<std::pair<double, double>> lo(n), hi(n);  // (knot, weight)
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = (w.empty() ? 1.0 : w[i]) / wsum;
    lo[i] = {0.99 * q[i], wi};
    hi[i] = {1.01 * q[i], wi};
  }
  std::sort(lo.begin(), lo.end());
  std::sort(hi.begin(), hi.end());
  // loss(k) = 0.9 * sum_{lo > k} w (lo - k) + 0.1 * sum_{hi < k} w (k - hi)
  double lo_w = 0.0, lo_wk = 0.0;
  for (auto& [k, wi] : lo) {
    lo_w += wi;
    lo_wk += wi * k;
  }
  std::vector<double> knots;
  knots.reserve(2 * n);
  for (auto& e : lo) knots.push_back(e.first);
  for (auto& e : hi) knots.push_back(e.first);
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  std::vector<double> value(knots.size());
  std::size_t ilo = 0, ihi = 0;
  double hi_w = 0.0, hi_wk = 0.0;
  double above_w = lo_w, above_wk = lo_wk;
  for (std::size_t k = 0; k < knots.size(); ++k) {
    const double x = knots[k];
    while (ilo < n && lo[ilo].first <= x) {
      above_w -= lo[ilo].second;
      above_wk -= lo[ilo].second * lo[ilo].first;
      ++ilo;
    }
    while (ihi < n && hi[ihi].first < x) {
      hi_w += hi[ihi].second;
      hi_wk += hi[ihi].second * hi[ihi].first;
      ++ihi;
    }
    value[k] = 0.9 * (above_wk - x * above_w) + 0.1 * (x * hi_w - hi_wk);
  }
  const double vmin = *std::min_element(value.begin(), value.end());
  // re-evaluate near-minimal knots directly to settle round-off ties
  const double tol = 1e-9 * (std::abs(vmin) + 1e-12 * knots.back());
  double best = kInf, best_knot = kNaN;
  for (std::size_t k = 0; k < knots.size(); ++k) {
    if (value[k] > vmin + tol) continue;
    const double v = expected_loss(q, knots[k], w);
    if (std::isnan(best_knot) || v < best - 1e-13 * std::abs(best)) {
      best = v;
      best_knot = knots[k];
    }
  }
  return best_knot;
}

enum class BootstrapKind { Nonparametric, Bayesian };

inline std::vector<double> bootstrap_weights(std::size_t n, BootstrapKind kind, std::uint64_t seed) {
  require(n >= 1, "univariate", "need at least one observation");
  RandomStream rng(seed, 0);
  std::vector<double> w(n, 0.0);
  if (kind == BootstrapKind::Nonparametric) {
    std::vector<std::size_t> counts(n, 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[rng.below(n)];
    for (std::size_t i = 0; i < n; ++i) w[i] = static_cast<double>(counts[i]) / n;
    return w;
  }
  double s = 0.0;
  for (auto& v : w) {
    v = rng.exponential();
    s += v;
  }
  detail::KahanSum k;
  for (auto& v : w) {
    v /= s;
    k.add(v);
  }
  // fold the rounding residue into the largest weight
  auto it = std::max_element(w.begin(), w.end());
  *it += 1.0 - k.value();
  return w;
}

}  // namespace extremis
