#pragma once
// Conditional extremes on Laplace margins: residuals, Gaussian and
// exchangeable skew-normal fits, root levels and tail-probability estimators.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "extremis/core.hpp"
#include "extremis/detail/optimize.hpp"
#include "extremis/detail/special.hpp"

namespace extremis {

struct GaussianResidualLaw {
  Vector mu, sigma;
};
struct SkewNormalResidualLaw {
  double mu = 0.0, sigma = 1.0, kappa = 0.0;
};

struct HtParams {
  Vector alpha, beta;  // one entry per non-conditioning component
  Vector alpha_se, beta_se;
  std::variant<GaussianResidualLaw, SkewNormalResidualLaw> law;
  double u = kNaN;       // Laplace-scale threshold
  int conditioning = -1;  // -1 for the pooled exchangeable fit
  Matrix residual_pool;   // rows of m-1 residuals
  double loglik = kNaN;
  bool converged = false;
  std::vector<std::string> flags;

  Eigen::Index others() const { return alpha.size(); }
};

struct HtFitOptions {
  double quantile = 0.98;
  std::optional<double> threshold;  // raw Laplace threshold, overrides quantile
  std::optional<double> fix_kappa;  // skew-normal fit only
};

inline constexpr double kKappaCap = 50.0;
inline constexpr double kRootCap = 500.0;

inline Matrix ht_residuals(const Matrix& L, int j, const Vector& alpha, const Vector& beta, double u) {
  require(j >= 0 && j < L.cols(), "condex", "conditioning index out of range");
  require(alpha.size() == L.cols() - 1 && beta.size() == L.cols() - 1, "condex", "one (alpha, beta) per other column");
  require(u > 0, "condex", "Laplace threshold must be positive");
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < L.rows(); ++i)
    if (L(i, j) > u) rows.push_back(i);
  if (rows.empty()) throw InvalidArgument("condex", "no exceedances of the conditioning variable");
  Matrix Z(rows.size(), L.cols() - 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double x = L(rows[r], j);
    for (Eigen::Index k = 0, c = 0; k < L.cols(); ++k) {
      if (k == j) continue;
      Z(r, c) = (L(rows[r], k) - alpha[c] * x) / std::pow(x, beta[c]);
      ++c;
    }
  }
  return Z;
}

inline Matrix ht_residuals(const Matrix& L, int j, const HtParams& p) {
  return ht_residuals(L, j, p.alpha, p.beta, p.u);
}

namespace detail {

inline double skewnormal_logpdf(double y, double loc, double scale, double kappa) {
  const double z = (y - loc) / scale;
  return std::log(2.0) + norm_logpdf(z) - std::log(scale) + norm_logcdf(kappa * z);
}

inline double threshold_for(const Matrix& L, const std::vector<int>& cols, const HtFitOptions& opt) {
  if (opt.threshold) {
    require(*opt.threshold > 0, "condex", "Laplace threshold must be positive");
    return *opt.threshold;
  }
  require(opt.quantile > 0.5 && opt.quantile < 1, "condex", "threshold quantile must lie in (0.5, 1)");
  std::vector<double> pooled;
  for (int c : cols)
    for (Eigen::Index i = 0; i < L.rows(); ++i) pooled.push_back(L(i, c));
  const double u = sample_quantile(pooled, opt.quantile);
  require(u > 0, "condex", "threshold quantile gives a non-positive Laplace threshold");
  return u;
}

inline void flag_boundary(HtParams& p) {
  for (Eigen::Index c = 0; c < p.alpha.size(); ++c)
    if (std::abs(p.alpha[c]) > 1 - 1e-3) {
      p.flags.push_back("alpha_at_boundary");
      break;
    }
}

}  // namespace detail

// Per-component Gaussian pseudo-likelihood for (alpha, beta, mu, sigma)
// given exceedances of column j.
inline HtParams fit_ht_gaussian(const Matrix& L, int j, const HtFitOptions& opt = {}) {
  require(L.cols() >= 2, "condex", "need at least two columns");
  require(j >= 0 && j < L.cols(), "condex", "conditioning index out of range");
  HtParams p;
  p.u = detail::threshold_for(L, {j}, opt);
  p.conditioning = j;
  std::vector<double> x;
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < L.rows(); ++i)
    if (L(i, j) > p.u) {
      rows.push_back(i);
      x.push_back(L(i, j));
    }
  if (rows.size() < 20) throw InvalidArgument("condex", "need at least 20 exceedances of the conditioning variable");
  const auto m1 = L.cols() - 1;
  p.alpha.resize(m1);
  p.beta.resize(m1);
  p.alpha_se = Vector::Constant(m1, kNaN);
  p.beta_se = Vector::Constant(m1, kNaN);
  GaussianResidualLaw law{Vector(m1), Vector(m1)};
  p.loglik = 0.0;
  p.converged = true;
  for (Eigen::Index k = 0, c = 0; k < L.cols(); ++k) {
    if (k == j) continue;
    std::vector<double> y;
    for (auto i : rows) y.push_back(L(i, k));
    auto nll = [&](const Vector& th) {
      const double a = th[0], b = th[1], mu = th[2], ls = th[3];
      if (a < -1 || a > 1 || b >= 1 || b < -5 || ls < -15) return kInf;
      double s = 0.0;
      for (std::size_t r = 0; r < y.size(); ++r) {
        const double xb = std::pow(x[r], b);
        const double sd = std::exp(ls) * xb;
        s -= detail::norm_logpdf((y[r] - a * x[r] - mu * xb) / sd) - std::log(sd);
      }
      return s;
    };
    // start: least-squares slope clipped into the box, beta 0.2
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t r = 0; r < y.size(); ++r) {
      sx += x[r];
      sy += y[r];
      sxx += x[r] * x[r];
      sxy += x[r] * y[r];
    }
    const double nn = y.size();
    const double slope = (sxy - sx * sy / nn) / std::max(sxx - sx * sx / nn, 1e-12);
    Vector th0(4);
    th0 << std::clamp(slope, -0.9, 0.9), 0.2, 0.0, 0.0;
    {
      double m = 0, v = 0;
      for (std::size_t r = 0; r < y.size(); ++r) m += (y[r] - th0[0] * x[r]) / std::pow(x[r], 0.2) / nn;
      for (std::size_t r = 0; r < y.size(); ++r) v += std::pow((y[r] - th0[0] * x[r]) / std::pow(x[r], 0.2) - m, 2) / nn;
      th0[2] = m;
      th0[3] = 0.5 * std::log(std::max(v, 1e-12));
    }
    detail::OptimOptions oo;
    oo.max_evals = 20000;
    auto res = detail::minimize(nll, th0, oo);
    p.converged = p.converged && res.converged;
    p.alpha[c] = res.x[0];
    p.beta[c] = res.x[1];
    law.mu[c] = res.x[2];
    law.sigma[c] = std::exp(res.x[3]);
    p.loglik -= res.value;
    auto cov = detail::inverse_information(detail::numerical_hessian(nll, res.x));
    if (cov.size()) {
      p.alpha_se[c] = std::sqrt(cov(0, 0));
      p.beta_se[c] = std::sqrt(cov(1, 1));
    }
    ++c;
  }
  p.law = law;
  if (!p.converged) p.flags.push_back("not_converged");
  detail::flag_boundary(p);
  p.residual_pool = ht_residuals(L, j, p);
  return p;
}

// Exchangeable fit: shared (alpha, beta, mu, sigma, kappa) maximising the
// skew-normal pseudo log likelihood summed over every conditioning column.
inline HtParams fit_ht_exchangeable_skewnormal(const Matrix& L, const HtFitOptions& opt = {}) {
  const auto m = L.cols();
  require(m >= 2, "condex", "cluster must contain at least two columns");
  std::vector<int> all(m);
  std::iota(all.begin(), all.end(), 0);
  HtParams p;
  p.u = detail::threshold_for(L, all, opt);
  // flattened (x, y) pairs: conditioning value and each other component
  std::vector<double> xs, ys;
  std::size_t n_cond = 0;
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < L.rows(); ++i) {
      if (!(L(i, j) > p.u)) continue;
      ++n_cond;
      for (Eigen::Index k = 0; k < m; ++k)
        if (k != j) {
          xs.push_back(L(i, j));
          ys.push_back(L(i, k));
        }
    }
  if (n_cond < 50) throw InvalidArgument("condex", "need at least 50 pooled exceedances");
  const bool fixed = opt.fix_kappa.has_value();
  auto unpack = [&](const Vector& th, double& a, double& b, double& mu, double& sd, double& ka) {
    a = th[0];
    b = th[1];
    mu = th[2];
    sd = std::exp(th[3]);
    ka = fixed ? *opt.fix_kappa : th[4];
  };
  auto nll = [&](const Vector& th) {
    double a, b, mu, sd, ka;
    unpack(th, a, b, mu, sd, ka);
    if (a < -1 || a > 1 || b > 1 || b < -5 || th[3] < -15 || std::abs(ka) > kKappaCap) return kInf;
    double s = 0.0;
    for (std::size_t r = 0; r < xs.size(); ++r) {
      const double xb = std::pow(xs[r], b);
      s -= detail::skewnormal_logpdf(ys[r], a * xs[r] + mu * xb, sd * xb, ka);
    }
    return s;
  };
  // start from moment-style values at beta = 0.2
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t r = 0; r < xs.size(); ++r) {
    sx += xs[r];
    sy += ys[r];
    sxx += xs[r] * xs[r];
    sxy += xs[r] * ys[r];
  }
  const double nn = xs.size();
  const double a0 = std::clamp((sxy - sx * sy / nn) / std::max(sxx - sx * sx / nn, 1e-12), -0.9, 0.9);
  double m0 = 0, v0 = 0;
  for (std::size_t r = 0; r < xs.size(); ++r) m0 += (ys[r] - a0 * xs[r]) / std::pow(xs[r], 0.2) / nn;
  for (std::size_t r = 0; r < xs.size(); ++r) v0 += std::pow((ys[r] - a0 * xs[r]) / std::pow(xs[r], 0.2) - m0, 2) / nn;
  Vector th0(4);
  th0 << a0, 0.2, m0, 0.5 * std::log(std::max(v0, 1e-12));
  detail::OptimOptions oo;
  oo.max_evals = 20000;
  detail::OptimResult res;
  if (fixed) {
    res = detail::minimize(nll, th0, oo);
  } else {
    // Gaussian optimum first, then release the slant from a few starts
    auto gauss = [&](const Vector& th) {
      Vector full(5);
      full << th, 0.0;
      return nll(full);
    };
    auto rg = detail::minimize(gauss, th0, oo);
    res.value = kInf;
    for (double k0 : {0.0, 2.0, -2.0}) {
      Vector s(5);
      s << rg.x, k0;
      auto r = detail::minimize(nll, s, oo);
      if (r.value < res.value) res = r;
    }
  }
  double a, b, mu, sd, ka;
  unpack(res.x, a, b, mu, sd, ka);
  p.alpha = Vector::Constant(m - 1, a);
  p.beta = Vector::Constant(m - 1, b);
  p.law = SkewNormalResidualLaw{mu, sd, ka};
  p.loglik = -res.value;
  p.converged = res.converged;
  if (!p.converged) p.flags.push_back("not_converged");
  if (std::abs(ka) > kKappaCap - 1e-3) p.flags.push_back("kappa_at_cap");
  detail::flag_boundary(p);
  auto cov = detail::inverse_information(detail::numerical_hessian(nll, res.x));
  p.alpha_se = Vector::Constant(m - 1, cov.size() ? std::sqrt(cov(0, 0)) : kNaN);
  p.beta_se = Vector::Constant(m - 1, cov.size() ? std::sqrt(cov(1, 1)) : kNaN);
  // pool residuals over every conditioning column
  std::vector<Matrix> parts;
  Eigen::Index total = 0;
  for (Eigen::Index j = 0; j < m; ++j) {
    bool any = false;
    for (Eigen::Index i = 0; i < L.rows() && !any; ++i) any = L(i, j) > p.u;
    if (!any) continue;
    parts.push_back(ht_residuals(L, static_cast<int>(j), p.alpha, p.beta, p.u));
    total += parts.back().rows();
  }
  p.residual_pool.resize(total, m - 1);
  Eigen::Index at = 0;
  for (auto& part : parts) {
    p.residual_pool.middleRows(at, part.rows()) = part;
    at += part.rows();
  }
  return p;
}

// Smallest y >= v with alpha*y + y^beta*z >= v, +inf if none below v + 500.
inline double ht_root_v(double z, double alpha, double beta, double v) {
  require(v > 0, "condex", "level must be positive");
  if (alpha < 0) throw InvalidArgument("condex", "root levels need alpha >= 0");
  auto g = [&](double y) { return alpha * y + std::pow(y, beta) * z - v; };
  if (g(v) >= 0) return v;
  const double cap = v + kRootCap;
  if (g(cap) < 0) return kInf;
  double lo = v, hi = cap;
  for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) >= 0 ? hi : lo) = mid;
  }
  return hi;
}

struct HtProbability {
  double log_prob = -kInf;
  double log_tail = kNaN;  // log P(Y0 > v) used as prefactor
  std::size_t finite_roots = 0;
  std::vector<std::string> flags;
};

namespace detail {

inline double log_tail(const MarginSpec& margin, double v, bool literal) {
  return literal ? -v : std::log(margin.sf(v));
}

inline double log_mean_exp_shift(const std::vector<double>& roots, double v, std::size_t* finite) {
  std::vector<double> terms;
  for (double r : roots)
    if (std::isfinite(r)) terms.push_back(-(r - v));
  *finite = terms.size();
  if (terms.empty()) return -kInf;
  return log_sum_exp(terms) - std::log(static_cast<double>(roots.size()));
}

}  // namespace detail

// log of P(Y0 > v) N^-1 sum_i exp{-(v(z_i^min) - v)} over the residual pool.
// `literal` replaces the margin tail by exp(-v).
inline HtProbability ht_prob_analytic(const HtParams& p, double v, const MarginSpec& margin = MarginSpec::laplace(),
                                      bool literal = false) {
  require(p.residual_pool.rows() > 0, "condex", "residual pool is empty");
  require(v > 0, "condex", "level must be positive");
  HtProbability out;
  if (v < p.u) out.flags.push_back("level_below_threshold");
  std::vector<double> roots(p.residual_pool.rows());
  for (Eigen::Index i = 0; i < p.residual_pool.rows(); ++i) {
    // component-wise parameters: the binding component has the largest root
    double r = v;
    for (Eigen::Index c = 0; c < p.residual_pool.cols(); ++c)
      r = std::max(r, ht_root_v(p.residual_pool(i, c), p.alpha[c], p.beta[c], v));
    roots[i] = r;
  }
  out.log_tail = detail::log_tail(margin, v, literal);
  out.log_prob = out.log_tail + detail::log_mean_exp_shift(roots, v, &out.finite_roots);
  if (out.finite_roots == 0) out.flags.push_back("all_contributions_zero");
  if (literal) out.flags.push_back("literal_exponential_prefactor");
  return out;
}

struct SimRegion {
  Vector lower, upper;  // bounds for the non-conditioning components
};

struct SimProbability {
  double probability = 0.0;
  double se = 0.0;
  std::size_t hits = 0;
  std::vector<std::string> flags;
};

// Monte Carlo: L0 = v + Exp(1), residual rows drawn with replacement,
// L_-0 = alpha L0 + L0^beta Z; hits times P(L0 > v).
inline SimProbability ht_prob_simulation(const HtParams& p, const SimRegion& region, double v, std::size_t N,
                                         std::uint64_t seed, const MarginSpec& margin = MarginSpec::laplace()) {
  const auto m1 = p.others();
  require(N >= 1, "condex", "need at least one simulation");
  require(p.residual_pool.rows() > 0, "condex", "residual pool is empty");
  require(region.lower.size() == m1 && region.upper.size() == m1, "condex", "region bounds must match the residual dimension");
  require(v > 0, "condex", "level must be positive");
  const std::size_t blocks = std::min<std::size_t>(64, N);
  std::vector<std::size_t> hits(blocks, 0);
  parallel_for(blocks, [&](std::size_t b) {
    RandomStream rng(seed, b);
    for (std::size_t s = N * b / blocks; s < N * (b + 1) / blocks; ++s) {
      const double l0 = v + rng.exponential();
      const auto row = rng.below(p.residual_pool.rows());
      bool in = true;
      for (Eigen::Index c = 0; c < m1 && in; ++c) {
        const double l = p.alpha[c] * l0 + std::pow(l0, p.beta[c]) * p.residual_pool(row, c);
        in = l > region.lower[c] && l < region.upper[c];
      }
      hits[b] += in;
    }
  });
  SimProbability out;
  for (auto h : hits) out.hits += h;
  const double tail = margin.sf(v), f = static_cast<double>(out.hits) / N;
  out.probability = tail * f;
  if (out.hits == 0) {
    out.se = tail * 3.0 / N;  // one-sided bound
    out.flags.push_back("zero_hits");
  } else {
    out.se = tail * std::sqrt(f * (1 - f) / N);
  }
  return out;
}

struct TwoLevelResult {
  double log_prob = -kInf;
  std::vector<double> assignment_log_probs;
  bool subsampled = false;
  std::vector<std::string> flags;
};

// Conditioning variable in group 1. Residual columns listed in g2 must exceed
// s2, the rest s1; the root level per row is the larger of the two group roots.
inline TwoLevelResult ht_prob_two_level(const HtParams& p, const std::vector<int>& g2, double s1, double s2,
                                        bool exchangeable, const MarginSpec& margin = MarginSpec::laplace(),
                                        std::uint64_t seed = 0) {
  require(s1 >= s2, "condex", "group-1 level must be at least the group-2 level");
  require(s2 > 0, "condex", "levels must be positive");
  require(p.residual_pool.rows() > 0, "condex", "residual pool is empty");
  const int m1 = static_cast<int>(p.others());
  const int k2 = static_cast<int>(g2.size());
  {
    auto sorted = g2;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "condex", "group-2 positions repeat");
    require(k2 == 0 || (sorted.front() >= 0 && sorted.back() < m1), "condex", "group-2 position out of range");
  }
  std::vector<std::vector<int>> assignments;
  TwoLevelResult out;
  if (!exchangeable || k2 == 0 || k2 == m1) {
    assignments.push_back(g2);
  } else if (detail::choose(m1, k2) <= 1e6) {
    detail::for_each_combination(m1, k2, [&](std::span<const int> c) { assignments.emplace_back(c.begin(), c.end()); });
  } else {
    RandomStream rng(seed, 0xC2);
    std::vector<int> idx(m1);
    std::iota(idx.begin(), idx.end(), 0);
    for (int r = 0; r < 10000; ++r) {
      std::shuffle(idx.begin(), idx.end(), rng.engine());
      assignments.emplace_back(idx.begin(), idx.begin() + k2);
    }
    out.subsampled = true;
    out.flags.push_back("assignment_subsample");
  }
  const double log_tail = std::log(margin.sf(s1));
  out.assignment_log_probs.resize(assignments.size());
  parallel_for(assignments.size(), [&](std::size_t a) {
    std::vector<char> in2(m1, 0);
    for (int c : assignments[a]) in2[c] = 1;
    std::vector<double> roots(p.residual_pool.rows());
    for (Eigen::Index i = 0; i < p.residual_pool.rows(); ++i) {
      double r = s1;
      for (int c = 0; c < m1; ++c)
        r = std::max(r, ht_root_v(p.residual_pool(i, c), p.alpha[c], p.beta[c], in2[c] ? s2 : s1));
      roots[i] = r;
    }
    std::size_t finite;
    out.assignment_log_probs[a] = log_tail + detail::log_mean_exp_shift(roots, s1, &finite);
  });
  std::vector<double> finite_lp;
  for (double lp : out.assignment_log_probs)
    if (std::isfinite(lp)) finite_lp.push_back(lp);
  if (finite_lp.empty()) {
    out.flags.push_back("all_contributions_zero");
    return out;
  }
  out.log_prob = detail::log_sum_exp(finite_lp) - std::log(static_cast<double>(assignments.size()));
  return out;
}

}  // namespace extremis
