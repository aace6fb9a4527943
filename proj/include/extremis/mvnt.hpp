#pragma once
// Multivariate normal and Student-t rectangle probabilities by separation of
// variables over randomly shifted Richtmyer lattices.

#include <cmath>
#include <optional>
#include <vector>

#include "extremis/core.hpp"
#include "extremis/detail/special.hpp"

namespace extremis {

struct OrthantQuery {
  Vector lower;  // entries may be -inf
  Vector upper;  // entries may be +inf
  Vector mu;     // empty means zero
  Matrix Sigma;
  std::optional<double> df;  // Student when present
};

struct ProbEstimate {
  double probability = 0.0;
  double se = 0.0;
};

struct MvnOptions {
  int n_points = 100000;
  int shifts = 10;
  std::uint64_t seed = 0;
};

namespace detail {

inline const std::vector<double>& lattice_generators() {
  static const std::vector<double> gens = [] {
    std::vector<double> g;
    for (int c = 2; g.size() < 128; ++c) {
      bool prime = true;
      for (int d = 2; d * d <= c; ++d)
        if (c % d == 0) {
          prime = false;
          break;
        }
      if (prime) g.push_back(std::sqrt(static_cast<double>(c)));
    }
    return g;
  }();
  return gens;
}

// Probability mass of the standard normal on [a,b] and a draw inside it from
// a uniform w, both computed in the shorter tail for accuracy.
struct TruncatedStep {
  double mass;
  double z;
};

inline double norm_interval(double a, double b) {
  if (a > 0) return norm_sf(a) - norm_sf(b);
  if (b < 0) return norm_cdf(b) - norm_cdf(a);
  return 1.0 - norm_cdf(a) - norm_sf(b);
}

// Inversion on the log scale for intervals beyond the reach of norm_sf.
inline double norm_truncated_far_tail(double a, double b, double w) {
  const double la = norm_logcdf(-a);
  const double lb = std::isfinite(b) ? norm_logcdf(-b) : -kInf;
  const double target = la + std::log1p(-w * -std::expm1(lb - la));
  double x = a + (la - target) / a;
  for (int it = 0; it < 60; ++it) {
    const double ls = norm_logcdf(-x);
    const double step = (ls - target) / std::exp(norm_logpdf(x) - ls);
    x = std::clamp(x + step, a, b);
    if (std::abs(step) < 1e-14 * std::max(1.0, std::abs(x))) break;
  }
  return x;
}

inline TruncatedStep norm_truncated(double a, double b, double w) {
  if (a > 30) return {norm_interval(a, b), norm_truncated_far_tail(a, b, w)};
  if (b < -30) return {norm_interval(a, b), -norm_truncated_far_tail(-b, -a, 1.0 - w)};
  if (a > 0) {
    const double sa = norm_sf(a), sb = norm_sf(b);
    const double s = sa - w * (sa - sb);
    return {sa - sb, -norm_quantile(std::max(s, 1e-300))};
  }
  const double ca = norm_cdf(a), cb = norm_cdf(b);
  const double c = ca + w * (cb - ca);
  return {b < 0 ? cb - ca : norm_interval(a, b), norm_quantile(std::clamp(c, 1e-300, 1.0 - 1e-16))};
}

struct SovPlan {
  Matrix C;  // lower Cholesky factor in the permuted order
  Vector a, b;
  bool degenerate_zero = false;
};

// Genz-Bretz variable prioritisation: at each step the remaining variable
// with the smallest conditional interval probability goes next.
inline SovPlan sov_plan(const Vector& lower, const Vector& upper, const Matrix& Sigma) {
  const auto D = lower.size();
  SovPlan plan;
  Matrix S = 0.5 * (Sigma + Sigma.transpose());
  // pivots that vanish (near-singular Sigma) get a diagonal jitter instead
  auto jitter = [&](Eigen::Index j) { return 1e-10 * std::max(1.0, S(j, j)); };
  Vector a = lower, b = upper;
  Matrix C = Matrix::Zero(D, D);
  Vector y = Vector::Zero(D);
  for (Eigen::Index i = 0; i < D; ++i) {
    Eigen::Index best = i;
    double best_p = kInf;
    for (Eigen::Index j = i; j < D; ++j) {
      double s = S(j, j);
      double m = 0.0;
      for (Eigen::Index k = 0; k < i; ++k) {
        s -= C(j, k) * C(j, k);
        m += C(j, k) * y[k];
      }
      s = std::max(s, jitter(j));
      const double sd = std::sqrt(s);
      const double p = norm_interval((a[j] - m) / sd, (b[j] - m) / sd);
      if (p < best_p) {
        best_p = p;
        best = j;
      }
    }
    if (best != i) {
      S.row(i).swap(S.row(best));
      S.col(i).swap(S.col(best));
      std::swap(a[i], a[best]);
      std::swap(b[i], b[best]);
      C.row(i).swap(C.row(best));
    }
    double s = S(i, i);
    double m = 0.0;
    for (Eigen::Index k = 0; k < i; ++k) {
      s -= C(i, k) * C(i, k);
      m += C(i, k) * y[k];
    }
    if (s < -1e-8 * std::max(1.0, S(i, i))) throw ComputationError("mvnt", "covariance is not positive semi-definite");
    s = std::max(s, jitter(i));
    C(i, i) = std::sqrt(s);
    for (Eigen::Index l = i + 1; l < D; ++l) {
      double v = S(l, i);
      for (Eigen::Index k = 0; k < i; ++k) v -= C(l, k) * C(i, k);
      C(l, i) = v / C(i, i);
    }
    const double al = (a[i] - m) / C(i, i), be = (b[i] - m) / C(i, i);
    const double p = norm_interval(al, be);
    if (p <= 0) {
      plan.degenerate_zero = true;
      y[i] = std::isfinite(al) ? al : (std::isfinite(be) ? be : 0.0);
    } else {
      const double pa = std::isfinite(al) ? norm_pdf(al) : 0.0, pb = std::isfinite(be) ? norm_pdf(be) : 0.0;
      y[i] = (pa - pb) / p;
    }
  }
  plan.C = C;
  plan.a = a;
  plan.b = b;
  return plan;
}

// One integrand evaluation; w has D entries (the first drives the chi mixing
// variable for Student queries and is ignored otherwise).
inline double sov_integrand(const SovPlan& plan, const double* w, std::optional<double> df,
                            std::vector<double>& z) {
  const auto D = plan.a.size();
  double scale = 1.0;
  if (df) {
    const double s = 2.0 * gamma_p_inv(*df / 2.0, std::clamp(w[0], 1e-16, 1.0 - 1e-16));
    scale = std::sqrt(s / *df);
  }
  double prod = 1.0;
  for (Eigen::Index i = 0; i < D; ++i) {
    double m = 0.0;
    for (Eigen::Index k = 0; k < i; ++k) m += plan.C(i, k) * z[k];
    const double al = (plan.a[i] * scale - m) / plan.C(i, i);
    const double be = (plan.b[i] * scale - m) / plan.C(i, i);
    if (i + 1 < D) {
      auto st = norm_truncated(al, be, w[i + 1]);
      prod *= st.mass;
      z[i] = st.z;
    } else {
      prod *= norm_interval(al, be);
    }
    if (prod <= 0) return 0.0;
  }
  return prod;
}

inline ProbEstimate sov_estimate(const OrthantQuery& q, const MvnOptions& opt) {
  const auto D = q.lower.size();
  require(D >= 1 && D <= 100, "mvnt", "dimension must be between 1 and 100");
  require(q.upper.size() == D && q.Sigma.rows() == D && q.Sigma.cols() == D, "mvnt", "inconsistent query sizes");
  require(q.mu.size() == 0 || q.mu.size() == D, "mvnt", "mean has the wrong length");
  require(!q.df || *q.df > 0, "mvnt", "degrees of freedom must be positive");
  require(opt.n_points >= opt.shifts && opt.shifts >= 2, "mvnt", "need at least two shifts and one point per shift");
  Vector lo = q.lower, hi = q.upper;
  for (Eigen::Index i = 0; i < D; ++i) {
    require(!(lo[i] >= hi[i]), "mvnt", "lower bound must be below upper bound");
    require(!std::isnan(lo[i]) && !std::isnan(hi[i]), "mvnt", "bounds must not be NaN");
    if (q.mu.size()) {
      lo[i] -= q.mu[i];
      hi[i] -= q.mu[i];
    }
  }
  // scale to unit variances
  Vector sd = q.Sigma.diagonal().cwiseSqrt();
  for (Eigen::Index i = 0; i < D; ++i) require(sd[i] > 0, "mvnt", "zero variance component");
  Matrix R = sd.cwiseInverse().asDiagonal() * q.Sigma * sd.cwiseInverse().asDiagonal();
  lo = lo.cwiseQuotient(sd);
  hi = hi.cwiseQuotient(sd);

  if (D == 1) {
    if (q.df) return {student_cdf(hi[0], *q.df) - student_cdf(lo[0], *q.df), 0.0};
    return {norm_interval(lo[0], hi[0]), 0.0};
  }
  SovPlan plan = sov_plan(lo, hi, R);
  const auto& gens = lattice_generators();
  const int per_shift = opt.n_points / opt.shifts;
  std::vector<double> means(opt.shifts, 0.0);
  parallel_for(static_cast<std::size_t>(opt.shifts), [&](std::size_t s) {
    RandomStream rng(opt.seed, s);
    std::vector<double> shift(D), w(D), wa(D), z(D);
    for (auto& v : shift) v = rng.uniform();
    double acc = 0.0;
    for (int i = 1; i <= per_shift; ++i) {
      for (Eigen::Index k = 0; k < D; ++k) {
        double x = shift[k] + i * gens[k];
        x -= std::floor(x);
        x = std::abs(2.0 * x - 1.0);  // tent periodisation
        w[k] = x;
        wa[k] = 1.0 - x;
      }
      acc += 0.5 * (sov_integrand(plan, w.data(), q.df, z) + sov_integrand(plan, wa.data(), q.df, z));
    }
    means[s] = acc / per_shift;
  });
  double m = 0.0;
  for (double v : means) m += v;
  m /= opt.shifts;
  double var = 0.0;
  for (double v : means) var += (v - m) * (v - m);
  var /= (opt.shifts - 1) * static_cast<double>(opt.shifts);
  return {m, std::sqrt(var)};
}

}  // namespace detail

inline ProbEstimate mvn_rect(const OrthantQuery& q, const MvnOptions& opt = {}) {
  OrthantQuery g = q;
  g.df.reset();
  return detail::sov_estimate(g, opt);
}

inline ProbEstimate mvt_rect(const OrthantQuery& q, const MvnOptions& opt = {}) {
  require(q.df.has_value(), "mvnt", "Student query needs degrees of freedom");
  return detail::sov_estimate(q, opt);
}

}  // namespace extremis
