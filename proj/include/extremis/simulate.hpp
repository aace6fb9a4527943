#pragma once
// Composition sampling for R-Pareto vectors under min, max and sum risk
// functionals, dataset fixtures and the logistic mixture experiment.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "extremis/core.hpp"
#include "extremis/mgpd.hpp"

namespace extremis {

enum class FunctionalKind { Min, Max, Sum };

inline FunctionalKind parse_functional(const std::string& s) {
  if (s == "min") return FunctionalKind::Min;
  if (s == "max") return FunctionalKind::Max;
  if (s == "sum") return FunctionalKind::Sum;
  throw InvalidArgument("simulate", "unknown risk functional '" + s + "' (expected min, max or sum)");
}

struct RiskFunctional {
  FunctionalKind kind = FunctionalKind::Max;
  Vector u;
};

struct CompositionSample {
  Matrix Y;                    // n x D, Y = R * scale * omega
  Matrix omega;                // n x D, omega_I = 1 for min and max
  Vector R;                    // Pareto(1) radii
  std::vector<int> index;      // selected pivot I per row
  std::size_t approximate = 0;  // rows produced by the Gibbs fallback
  std::vector<std::string> flags;
};

namespace detail {

// Draws from the size-biased law of the pivot's extremal function together
// with the remaining components under the truncation of the functional.
class PivotSampler {
 public:
  PivotSampler(const MgpdModel& m, const Vector& u, FunctionalKind kind) : m_(m), u_(u), kind_(kind) {
    const auto D = u.size();
    if (auto* l = std::get_if<Logistic>(&m.family)) {
      scale_ = 1.0 / std::tgamma(1.0 - 1.0 / l->beta);
    } else if (auto* n = std::get_if<NegLogistic>(&m.family)) {
      scale_ = 1.0 / std::tgamma(1.0 + 1.0 / n->theta);
    } else if (auto* h = std::get_if<HuslerReiss>(&m.family)) {
      // anchored covariance plus a common N(0,1) shift keeps it non-singular
      C_.resize(D, D);
      for (Eigen::Index i = 0; i < D; ++i)
        for (Eigen::Index k = 0; k < D; ++k) C_(i, k) = h->Gamma(i, 0) + h->Gamma(k, 0) - h->Gamma(i, k) + 1.0;
      Eigen::LLT<Matrix> llt(C_);
      if (llt.info() != Eigen::Success) throw ComputationError("simulate", "variogram covariance is not positive definite");
      L_ = llt.matrixL();
      P_ = llt.solve(Matrix::Identity(D, D));
    } else {
      throw InvalidArgument("simulate", "composition sampling supports logistic, negative logistic and Husler-Reiss");
    }
  }

  // Returns false when the HR rejection step ran out of budget and Gibbs was used.
  bool draw(int I, RandomStream& rng, double* z) {
    switch (m_.family.index()) {
      case 0: logistic(I, rng, z); return true;
      case 1: neg_logistic(I, rng, z); return true;
      default: return husler_reiss(I, rng, z);
    }
  }

 private:
  double ratio(int i, int I) const { return u_[i] / u_[I]; }

  void logistic(int I, RandomStream& rng, double* z) {
    const double b = std::get<Logistic>(m_.family).beta, c = scale_;
    const auto D = u_.size();
    if (kind_ == FunctionalKind::Max) {
      // pivot law stays Frechet-type: z^{-b} exp(-A (z/c)^{-b})
      double A = 1.0;
      for (Eigen::Index i = 0; i < D; ++i)
        if (i != I) A += std::pow(ratio(i, I), -b);
      const double zI = c * std::pow(rng.gamma(1.0 - 1.0 / b) / A, -1.0 / b);
      z[I] = zI;
      for (Eigen::Index i = 0; i < D; ++i) {
        if (i == I) continue;
        const double logF = -std::pow(ratio(i, I) * zI / c, -b);
        z[i] = c * std::pow(-(std::log(rng.uniform()) + logF), -1.0 / b);
      }
      return;
    }
    if (kind_ == FunctionalKind::Sum) {
      z[I] = c * std::pow(rng.gamma(1.0 - 1.0 / b), -1.0 / b);
      for (Eigen::Index i = 0; i < D; ++i)
        if (i != I) z[i] = c * std::pow(rng.exponential(), -1.0 / b);
      return;
    }
    // min: accept the size-biased pivot with probability prod_i P(Z_i >= k_i z)
    double zI;
    while (true) {
      zI = c * std::pow(rng.gamma(1.0 - 1.0 / b), -1.0 / b);
      double logacc = 0.0;
      for (Eigen::Index i = 0; i < D; ++i)
        if (i != I) logacc += std::log(-std::expm1(-std::pow(ratio(i, I) * zI / c, -b)));
      if (std::log(rng.uniform()) < logacc) break;
    }
    z[I] = zI;
    for (Eigen::Index i = 0; i < D; ++i) {
      if (i == I) continue;
      const double sf = -std::expm1(-std::pow(ratio(i, I) * zI / c, -b));
      const double t = -std::log1p(-(1.0 - rng.uniform()) * sf);
      z[i] = c * std::pow(t, -1.0 / b);
    }
  }

  void neg_logistic(int I, RandomStream& rng, double* z) {
    const double th = std::get<NegLogistic>(m_.family).theta, c = scale_;
    const auto D = u_.size();
    if (kind_ == FunctionalKind::Min) {
      double A = 1.0;
      for (Eigen::Index i = 0; i < D; ++i)
        if (i != I) A += std::pow(ratio(i, I), th);
      const double zI = c * std::pow(rng.gamma(1.0 + 1.0 / th) / A, 1.0 / th);
      z[I] = zI;
      for (Eigen::Index i = 0; i < D; ++i)
        if (i != I) z[i] = c * std::pow(std::pow(ratio(i, I) * zI / c, th) + rng.exponential(), 1.0 / th);
      return;
    }
    if (kind_ == FunctionalKind::Sum) {
      z[I] = c * std::pow(rng.gamma(1.0 + 1.0 / th), 1.0 / th);
      for (Eigen::Index i = 0; i < D; ++i)
        if (i != I) z[i] = c * std::pow(rng.exponential(), 1.0 / th);
      return;
    }
    double zI;
    while (true) {
      zI = c * std::pow(rng.gamma(1.0 + 1.0 / th), 1.0 / th);
      double logacc = 0.0;
      for (Eigen::Index i = 0; i < D; ++i)
        if (i != I) logacc += std::log(-std::expm1(-std::pow(ratio(i, I) * zI / c, th)));
      if (std::log(rng.uniform()) < logacc) break;
    }
    z[I] = zI;
    for (Eigen::Index i = 0; i < D; ++i) {
      if (i == I) continue;
      const double F = -std::expm1(-std::pow(ratio(i, I) * zI / c, th));
      z[i] = c * std::pow(-std::log1p(-rng.uniform() * F), 1.0 / th);
    }
  }

  // log(u_i) + C_ii/2: Z_i/u_i compares as W_i - offset(i)
  double offset(Eigen::Index i) const { return std::log(u_[i]) + 0.5 * C_(i, i); }

  // Log-Gaussian generator tilted by component I: W ~ N(C[:,I], C).
  bool husler_reiss(int I, RandomStream& rng, double* z) {
    const auto D = u_.size();
    Vector w(D);
    const Vector mean = C_.col(I);
    auto feasible = [&](const Vector& x) {
      if (kind_ == FunctionalKind::Sum) return true;
      const double piv = x[I] - offset(I);
      for (Eigen::Index i = 0; i < D; ++i) {
        const double v = x[i] - offset(i);
        if (kind_ == FunctionalKind::Max ? v > piv : v < piv) return false;
      }
      return true;
    };
    bool exact = false;
    for (int attempt = 0; attempt < 100000; ++attempt) {
      Vector e(D);
      for (Eigen::Index i = 0; i < D; ++i) e[i] = rng.normal();
      w = mean + L_ * e;
      if (feasible(w)) {
        exact = true;
        break;
      }
    }
    if (!exact) gibbs(I, mean, rng, w);
    for (Eigen::Index i = 0; i < D; ++i) z[i] = std::exp(w[i] - 0.5 * C_(i, i));
    return exact;
  }

  void gibbs(int I, const Vector& mean, RandomStream& rng, Vector& w) {
    const auto D = u_.size();
    w = mean;
    // feasible start: every component level with the pivot
    for (Eigen::Index i = 0; i < D; ++i) w[i] = w[I] - offset(I) + offset(i);
    const bool is_max = kind_ == FunctionalKind::Max;
    for (int sweep = 0; sweep < 51; ++sweep) {
      for (Eigen::Index i = 0; i < D; ++i) {
        double cm = mean[i];
        for (Eigen::Index k = 0; k < D; ++k)
          if (k != i) cm -= P_(i, k) / P_(i, i) * (w[k] - mean[k]);
        const double sd = 1.0 / std::sqrt(P_(i, i));
        double lo = -kInf, hi = kInf;
        if (i == I) {
          for (Eigen::Index k = 0; k < D; ++k) {
            if (k == I) continue;
            const double b = w[k] - offset(k) + offset(I);
            if (is_max) lo = std::max(lo, b);
            else hi = std::min(hi, b);
          }
        } else {
          const double b = w[I] - offset(I) + offset(i);
          if (is_max) hi = b;
          else lo = b;
        }
        w[i] = cm + sd * norm_truncated((lo - cm) / sd, (hi - cm) / sd, rng.uniform()).z;
      }
    }
  }

  MgpdModel m_;
  Vector u_;
  FunctionalKind kind_;
  double scale_ = 1.0;
  Matrix C_, L_, P_;
};

}  // namespace detail

// Index weights of the composition, up to proportionality.
inline std::vector<double> composition_weights(const MgpdModel& m, const RiskFunctional& r) {
  const auto D = r.u.size();
  std::vector<double> w(D);
  if (r.kind == FunctionalKind::Sum) {
    for (Eigen::Index j = 0; j < D; ++j) w[j] = 1.0 / r.u[j];
    return w;
  }
  auto terms = r.kind == FunctionalKind::Min ? xi_terms(m, r.u) : v_terms(m, r.u);
  for (Eigen::Index j = 0; j < D; ++j) w[j] = std::max(terms[j].value, 0.0);
  return w;
}

// Composition sampler. Min and max return Y = R u_I Z/Z_I so that
// min_j Y_j/u_j (resp. max) equals R; sum returns Y = R Z / sum_j(Z_j/u_j).
inline CompositionSample composition_sample(const MgpdModel& m, const RiskFunctional& r, std::size_t n,
                                            std::uint64_t seed, const std::vector<double>& weights = {}) {
  const auto D = r.u.size();
  require(D >= 1, "simulate", "thresholds must be non-empty");
  for (Eigen::Index j = 0; j < D; ++j) require(r.u[j] > 0, "simulate", "thresholds must be positive");
  detail::check_model(m, D);
  if (std::holds_alternative<ExtremalStudent>(m.family))
    throw InvalidArgument("simulate", "composition sampling is not available for the extremal Student family");
  std::vector<double> w = weights.empty() ? composition_weights(m, r) : weights;
  require(w.size() == static_cast<std::size_t>(D), "simulate", "weights must have one entry per component");
  double total = 0.0;
  for (double v : w) {
    require(v >= 0 && std::isfinite(v), "simulate", "weights must be non-negative");
    total += v;
  }
  require(total > 0, "simulate", "weights must not all be zero");
  std::vector<double> cum(D);
  for (Eigen::Index j = 0; j < D; ++j) cum[j] = (j ? cum[j - 1] : 0.0) + w[j] / total;

  CompositionSample out;
  out.Y.resize(n, D);
  out.omega.resize(n, D);
  out.R.resize(n);
  out.index.resize(n);
  const std::size_t blocks = std::max<std::size_t>(1, std::min<std::size_t>(64, n));
  std::vector<std::size_t> approx(blocks, 0);
  parallel_for(blocks, [&](std::size_t b) {
    RandomStream rng(seed, b);
    detail::PivotSampler sampler(m, r.u, r.kind);
    std::vector<double> z(D);
    for (std::size_t i = n * b / blocks; i < n * (b + 1) / blocks; ++i) {
      const double a = rng.uniform();
      int I = static_cast<int>(std::lower_bound(cum.begin(), cum.end(), a) - cum.begin());
      I = std::min<int>(I, static_cast<int>(D) - 1);
      while (w[I] == 0.0) I = (I + 1) % D;
      if (!sampler.draw(I, rng, z.data())) ++approx[b];
      const double R = 1.0 / rng.uniform();
      double norm;
      if (r.kind == FunctionalKind::Sum) {
        norm = 0.0;
        for (Eigen::Index j = 0; j < D; ++j) norm += z[j] / r.u[j];
      } else {
        norm = z[I] / r.u[I];
      }
      for (Eigen::Index j = 0; j < D; ++j) {
        out.omega(i, j) = r.kind == FunctionalKind::Sum ? z[j] / norm : z[j] / z[I];
        out.Y(i, j) = R * z[j] / norm;
      }
      if (r.kind != FunctionalKind::Sum) out.omega(i, I) = 1.0;
      out.R[i] = R;
      out.index[i] = I;
    }
  });
  for (auto a : approx) out.approximate += a;
  if (out.approximate) out.flags.push_back("gibbs_fallback_approximate");
  return out;
}

// Dataset fixture: a fraction of rows are max-functional exceedances of the
// model at unit thresholds, the rest independent sub-threshold noise. Each
// column is mapped to its declared margin using the exact standard-scale tail
// above 1 and empirical ranks below.
inline Dataset simulate_mgpd_dataset(const MgpdModel& m, const std::vector<MarginSpec>& margins, std::size_t n,
                                     double exceed_fraction, std::uint64_t seed) {
  const auto D = static_cast<Eigen::Index>(margins.size());
  require(D >= 1, "simulate", "need at least one margin");
  require(n >= 1, "simulate", "sample size must be positive");
  require(exceed_fraction >= 0 && exceed_fraction <= 1, "simulate", "exceedance fraction must lie in [0,1]");
  for (auto& mg : margins) require(mg.kind() != MarginKind::Empirical, "simulate", "margins must be parametric");
  const auto n_ex = static_cast<std::size_t>(std::llround(exceed_fraction * n));
  Matrix Z(n, D);
  double V = 1.0;
  if (n_ex > 0) {
    const Vector ones = Vector::Ones(D);
    V = exponent_measure_v(m, ones).value;
    auto cs = composition_sample(m, {FunctionalKind::Max, ones}, n_ex, seed);
    Z.topRows(n_ex) = cs.Y;
  }
  RandomStream rng(seed, 0xB01Cu);
  for (std::size_t i = n_ex; i < n; ++i)
    for (Eigen::Index j = 0; j < D; ++j) Z(i, j) = rng.uniform();
  // shuffle rows so exceedances are not clustered at the top
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());

  const double tail = exceed_fraction / V;  // P(Z_j > 1) on the standard scale
  Dataset ds;
  ds.values.resize(n, D);
  ds.margins = margins;
  for (Eigen::Index j = 0; j < D; ++j) {
    ds.names.push_back("Y" + std::to_string(j + 1));
    std::vector<std::pair<double, std::size_t>> below;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = Z(perm[i], j);
      if (z > 1.0)
        ds.values(i, j) = margins[j].isf(tail / z);
      else
        below.push_back({z, i});
    }
    std::sort(below.begin(), below.end());
    const double cap = 1.0 - tail;
    for (std::size_t k = 0; k < below.size(); ++k)
      ds.values(below[k].second, j) = margins[j].quantile(cap * (k + 1.0) / (below.size() + 1.0));
  }
  return ds;
}

// Logistic max-stable vector with unit-Frechet margins and dependence
// alpha in (0,1] via a positive-stable frailty.
inline void draw_logistic_max_stable(double alpha, RandomStream& rng, double* out, Eigen::Index D) {
  double S = 1.0;
  if (alpha < 1.0) {
    const double U = std::numbers::pi * rng.uniform(), E = rng.exponential();
    S = std::sin(alpha * U) / std::pow(std::sin(U), 1.0 / alpha) *
        std::pow(std::sin((1.0 - alpha) * U) / E, (1.0 - alpha) / alpha);
  }
  for (Eigen::Index j = 0; j < D; ++j) out[j] = std::pow(S / rng.exponential(), alpha);
}

// Rows from an equal-weight mixture of logistic max-stable components,
// stacked component by component.
inline Matrix mixture_sample(const std::vector<double>& alpha_grid, std::size_t n_per_component, std::uint64_t seed,
                             Eigen::Index D = 8) {
  require(!alpha_grid.empty(), "simulate", "alpha grid must be non-empty");
  require(n_per_component >= 1 && D >= 1, "simulate", "sizes must be positive");
  for (double a : alpha_grid) require(a > 0 && a <= 1, "simulate", "alpha must lie in (0,1]");
  Matrix Y(alpha_grid.size() * n_per_component, D);
  parallel_for(alpha_grid.size(), [&](std::size_t a) {
    RandomStream rng(seed, a);
    std::vector<double> y(D);
    for (std::size_t i = 0; i < n_per_component; ++i) {
      draw_logistic_max_stable(alpha_grid[a], rng, y.data(), D);
      for (Eigen::Index j = 0; j < D; ++j) Y(a * n_per_component + i, j) = y[j];
    }
  });
  return Y;
}

struct MixtureShareTable {
  std::vector<double> alphas;
  std::vector<double> levels;
  Matrix shares;  // alphas x levels
};

// Equal-size logistic components over a grid of dependence parameters; share
// of rows with max_j Y_j above the unit-Frechet q-quantile per component.
inline MixtureShareTable mixture_threshold_experiment(const std::vector<double>& alpha_grid, std::size_t n_per_component,
                                                      const std::vector<double>& levels, std::uint64_t seed,
                                                      Eigen::Index D = 8) {
  require(!alpha_grid.empty(), "simulate", "alpha grid must be non-empty");
  require(!levels.empty(), "simulate", "need at least one quantile level");
  require(n_per_component >= 1 && D >= 1, "simulate", "sizes must be positive");
  for (double a : alpha_grid) require(a > 0 && a <= 1, "simulate", "alpha must lie in (0,1]");
  for (double q : levels) require(q > 0 && q < 1, "simulate", "levels must lie in (0,1)");
  MixtureShareTable t{alpha_grid, levels, Matrix::Zero(alpha_grid.size(), levels.size())};
  std::vector<double> thresholds;
  for (double q : levels) thresholds.push_back(-1.0 / std::log(q));
  Matrix counts = Matrix::Zero(alpha_grid.size(), levels.size());
  parallel_for(alpha_grid.size(), [&](std::size_t a) {
    RandomStream rng(seed, a);
    std::vector<double> y(D);
    for (std::size_t i = 0; i < n_per_component; ++i) {
      draw_logistic_max_stable(alpha_grid[a], rng, y.data(), D);
      const double mx = *std::max_element(y.begin(), y.end());
      for (std::size_t l = 0; l < levels.size(); ++l) counts(a, l) += mx > thresholds[l];
    }
  });
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const double s = counts.col(l).sum();
    if (s > 0) t.shares.col(l) = counts.col(l) / s;
  }
  return t;
}

}  // namespace extremis
