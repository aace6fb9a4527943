#pragma once
// Multivariate generalized Pareto dependence families: joint-exceedance and
// exponent measures, generators, model chi, and likelihood-based fitting.

#include <array>
#include <bit>
#include <cmath>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "extremis/core.hpp"
#include "extremis/detail/optimize.hpp"
#include "extremis/detail/special.hpp"
#include "extremis/mvnt.hpp"

namespace extremis {

struct Logistic {
  double beta;
};
struct NegLogistic {
  double theta;
};
struct HuslerReiss {
  Matrix Gamma;  // half-variogram: Var(W_i - W_j) = 2 Gamma_ij
};
struct ExtremalStudent {
  Matrix Sigma;  // correlation matrix
  double nu;
};

using MgpdFamily = std::variant<Logistic, NegLogistic, HuslerReiss, ExtremalStudent>;

struct MgpdModel {
  MgpdFamily family;

  static MgpdModel logistic(double beta) { return {Logistic{beta}}; }
  static MgpdModel neg_logistic(double theta) { return {NegLogistic{theta}}; }
  static MgpdModel husler_reiss(Matrix gamma) { return {HuslerReiss{std::move(gamma)}}; }
  static MgpdModel extremal_student(Matrix sigma, double nu) { return {ExtremalStudent{std::move(sigma), nu}}; }

  // Exchangeable variants with a single off-diagonal value.
  static MgpdModel husler_reiss_exchangeable(int D, double gamma) {
    Matrix G = Matrix::Constant(D, D, gamma);
    G.diagonal().setZero();
    return husler_reiss(G);
  }
  static MgpdModel extremal_student_exchangeable(int D, double rho, double nu) {
    Matrix S = Matrix::Constant(D, D, rho);
    S.diagonal().setOnes();
    return extremal_student(S, nu);
  }

  std::string name() const {
    switch (family.index()) {
      case 0: return "logistic";
      case 1: return "neg_logistic";
      case 2: return "husler_reiss";
      default: return "extremal_student";
    }
  }

  // Fixed dimension of matrix-parametrised families, 0 when any D works.
  Eigen::Index dim() const {
    if (auto* h = std::get_if<HuslerReiss>(&family)) return h->Gamma.rows();
    if (auto* e = std::get_if<ExtremalStudent>(&family)) return e->Sigma.rows();
    return 0;
  }

  // Leading d x d block of matrix-parametrised families.
  MgpdModel leading(Eigen::Index d) const {
    if (auto* h = std::get_if<HuslerReiss>(&family)) return husler_reiss(h->Gamma.topLeftCorner(d, d));
    if (auto* e = std::get_if<ExtremalStudent>(&family)) return extremal_student(e->Sigma.topLeftCorner(d, d), e->nu);
    return *this;
  }
};

struct MeasureResult {
  double value = 0.0;
  double se = 0.0;  // Monte Carlo error of orthant-probability terms
  std::vector<std::string> warnings;
};

inline constexpr int kLogisticMaxDim = 20;

namespace detail {

// Conditional covariance of the log-Gaussian generator seen from index j.
inline Matrix hr_sigma_minus(const Matrix& G, Eigen::Index j) {
  const auto D = G.rows();
  Matrix S(D - 1, D - 1);
  for (Eigen::Index a = 0, ia = 0; a < D; ++a) {
    if (a == j) continue;
    for (Eigen::Index b = 0, ib = 0; b < D; ++b) {
      if (b == j) continue;
      S(ia, ib) = G(a, j) + G(j, b) - G(a, b);
      ++ib;
    }
    ++ia;
  }
  return S;
}

inline void check_model(const MgpdModel& m, Eigen::Index D) {
  require(D >= 1, "mgpd", "dimension must be positive");
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Logistic>) {
          require(f.beta > 1 && std::isfinite(f.beta), "mgpd", "logistic parameter must exceed 1");
        } else if constexpr (std::is_same_v<T, NegLogistic>) {
          require(f.theta > 0 && std::isfinite(f.theta), "mgpd", "negative logistic parameter must be positive");
        } else if constexpr (std::is_same_v<T, HuslerReiss>) {
          require(f.Gamma.rows() == D && f.Gamma.cols() == D, "mgpd", "variogram size does not match thresholds");
          require((f.Gamma - f.Gamma.transpose()).cwiseAbs().maxCoeff() < 1e-12, "mgpd", "variogram must be symmetric");
          require(f.Gamma.diagonal().cwiseAbs().maxCoeff() == 0.0, "mgpd", "variogram diagonal must be zero");
          for (Eigen::Index j = 0; j < D && D > 1; ++j) {
            Eigen::SelfAdjointEigenSolver<Matrix> es(hr_sigma_minus(f.Gamma, j));
            require(es.eigenvalues().minCoeff() > -1e-10, "mgpd", "variogram is not conditionally negative definite");
          }
        } else {
          require(f.Sigma.rows() == D && f.Sigma.cols() == D, "mgpd", "correlation size does not match thresholds");
          require(f.nu > 0, "mgpd", "degrees of freedom must be positive");
          require((f.Sigma.diagonal().array() - 1.0).abs().maxCoeff() < 1e-12, "mgpd", "correlation diagonal must be one");
          Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (f.Sigma + f.Sigma.transpose()));
          require(es.eigenvalues().minCoeff() > -1e-10, "mgpd", "correlation matrix is not PSD");
        }
      },
      m.family);
}

inline Vector drop(const Vector& v, Eigen::Index j) {
  Vector out(v.size() - 1);
  for (Eigen::Index i = 0, k = 0; i < v.size(); ++i)
    if (i != j) out[k++] = v[i];
  return out;
}

inline Vector column_without(const Matrix& M, Eigen::Index j) { return drop(Vector(M.col(j)), j); }

inline Matrix without(const Matrix& M, Eigen::Index j) {
  const auto D = M.rows();
  Matrix out(D - 1, D - 1);
  for (Eigen::Index a = 0, ia = 0; a < D; ++a) {
    if (a == j) continue;
    for (Eigen::Index b = 0, ib = 0; b < D; ++b) {
      if (b == j) continue;
      out(ia, ib++) = M(a, b);
    }
    ++ia;
  }
  return out;
}

// Alternating power-set sum over subsets of the D-1 ratios, evaluated with
// compensated summation and cross-checked against grouping by subset size.
template <class Term>
double signed_powerset_sum(const std::vector<double>& ratios, Term term, std::vector<std::string>* warnings) {
  const int k = static_cast<int>(ratios.size());
  const std::size_t n = std::size_t{1} << k;
  std::vector<double> partial(n, 0.0);
  KahanSum direct;
  std::vector<KahanSum> by_size(k + 1);
  for (std::size_t mask = 0; mask < n; ++mask) {
    if (mask) {
      const int low = std::countr_zero(mask);
      partial[mask] = partial[mask & (mask - 1)] + ratios[low];
    }
    const int size = std::popcount(mask);
    const double t = (size % 2 ? -1.0 : 1.0) * term(partial[mask]);
    direct.add(t);
    by_size[size].add(t);
  }
  KahanSum grouped;
  for (auto& g : by_size) grouped.add(g.value());
  const double a = direct.value(), b = grouped.value();
  if (warnings && std::abs(a - b) > 1e-8 * std::max(std::abs(a), 1e-300))
    warnings->push_back("alternating sum lost precision (relative disagreement " +
                        std::to_string(std::abs(a - b) / std::abs(a)) + ")");
  return a;
}

inline double extremal_student_constant(double nu) {
  return std::sqrt(std::numbers::pi) * std::pow(2.0, 1.0 - nu / 2.0) / std::tgamma((nu + 1.0) / 2.0);
}

}  // namespace detail

// Per-index terms psi_j of the joint-exceedance measure; they sum to Xi(u).
inline std::vector<MeasureResult> xi_terms(const MgpdModel& m, const Vector& u, const MvnOptions& opt = {}) {
  const auto D = u.size();
  detail::check_model(m, D);
  for (Eigen::Index j = 0; j < D; ++j) require(u[j] > 0 && std::isfinite(u[j]), "mgpd", "thresholds must be positive");
  std::vector<MeasureResult> out(D);
  if (D == 1) {
    out[0].value = 1.0 / u[0];
    return out;
  }
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Logistic>) {
          if (D > kLogisticMaxDim)
            throw InvalidArgument("mgpd", "logistic power-set sum is limited to D <= 20; use Monte Carlo via composition sampling");
          const double e = 1.0 / f.beta - 1.0;
          for (Eigen::Index j = 0; j < D; ++j) {
            std::vector<double> ratios;
            for (Eigen::Index i = 0; i < D; ++i)
              if (i != j) ratios.push_back(std::pow(u[i] / u[j], -f.beta));
            out[j].value = detail::signed_powerset_sum(
                               ratios, [&](double s) { return std::pow(1.0 + s, e); }, &out[j].warnings) /
                           u[j];
          }
        } else if constexpr (std::is_same_v<T, NegLogistic>) {
          double s = 0.0;
          for (Eigen::Index i = 0; i < D; ++i) s += std::pow(u[i], f.theta);
          const double c = std::pow(s, -1.0 / f.theta - 1.0);
          for (Eigen::Index j = 0; j < D; ++j) out[j].value = std::pow(u[j], f.theta) * c;
        } else if constexpr (std::is_same_v<T, HuslerReiss>) {
          for (Eigen::Index j = 0; j < D; ++j) {
            Vector x(D - 1);
            for (Eigen::Index i = 0, k = 0; i < D; ++i)
              if (i != j) x[k++] = std::log(u[j]) - std::log(u[i]);
            OrthantQuery q{Vector::Constant(D - 1, -kInf), x, detail::column_without(f.Gamma, j),
                           detail::hr_sigma_minus(f.Gamma, j), std::nullopt};
            auto r = mvn_rect(q, opt);
            out[j].value = r.probability / u[j];
            out[j].se = r.se / u[j];
          }
        } else {
          for (Eigen::Index j = 0; j < D; ++j) {
            Vector sj = detail::column_without(f.Sigma, j);
            Matrix S = (detail::without(f.Sigma, j) - sj * sj.transpose()) / (f.nu + 1.0);
            Vector x(D - 1);
            for (Eigen::Index i = 0, k = 0; i < D; ++i)
              if (i != j) x[k++] = -std::pow(u[i] / u[j], 1.0 / f.nu);
            OrthantQuery q{Vector::Constant(D - 1, -kInf), x, -sj, S, f.nu + 1.0};
            auto r = mvt_rect(q, opt);
            out[j].value = r.probability / u[j];
            out[j].se = r.se / u[j];
          }
        }
      },
      m.family);
  return out;
}

// Per-index terms phi_j of the exponent measure; they sum to V(u).
inline std::vector<MeasureResult> v_terms(const MgpdModel& m, const Vector& u, const MvnOptions& opt = {}) {
  const auto D = u.size();
  detail::check_model(m, D);
  for (Eigen::Index j = 0; j < D; ++j) require(u[j] > 0 && std::isfinite(u[j]), "mgpd", "thresholds must be positive");
  std::vector<MeasureResult> out(D);
  if (D == 1) {
    out[0].value = 1.0 / u[0];
    return out;
  }
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Logistic>) {
          double s = 0.0;
          for (Eigen::Index i = 0; i < D; ++i) s += std::pow(u[i], -f.beta);
          const double c = std::pow(s, 1.0 / f.beta - 1.0);
          for (Eigen::Index j = 0; j < D; ++j) out[j].value = std::pow(u[j], -f.beta) * c;
        } else if constexpr (std::is_same_v<T, NegLogistic>) {
          if (D > kLogisticMaxDim)
            throw InvalidArgument("mgpd", "negative logistic inclusion-exclusion is limited to D <= 20");
          // phi_j = sum over s containing j of (-1)^{|s|+1} u_j^theta (sum_s u^theta)^{-1/theta-1}
          for (Eigen::Index j = 0; j < D; ++j) {
            std::vector<double> others;
            for (Eigen::Index i = 0; i < D; ++i)
              if (i != j) others.push_back(std::pow(u[i], f.theta));
            const double uj = std::pow(u[j], f.theta);
            out[j].value = uj * detail::signed_powerset_sum(
                                    others, [&](double s) { return std::pow(uj + s, -1.0 / f.theta - 1.0); },
                                    &out[j].warnings);
          }
        } else if constexpr (std::is_same_v<T, HuslerReiss>) {
          for (Eigen::Index j = 0; j < D; ++j) {
            Vector x(D - 1);
            for (Eigen::Index i = 0, k = 0; i < D; ++i)
              if (i != j) x[k++] = std::log(u[i]) - std::log(u[j]);
            OrthantQuery q{Vector::Constant(D - 1, -kInf), x, -detail::column_without(f.Gamma, j),
                           detail::hr_sigma_minus(f.Gamma, j), std::nullopt};
            auto r = mvn_rect(q, opt);
            out[j].value = r.probability / u[j];
            out[j].se = r.se / u[j];
          }
        } else {
          for (Eigen::Index j = 0; j < D; ++j) {
            Vector sj = detail::column_without(f.Sigma, j);
            Matrix S = (detail::without(f.Sigma, j) - sj * sj.transpose()) / (f.nu + 1.0);
            Vector x(D - 1);
            for (Eigen::Index i = 0, k = 0; i < D; ++i)
              if (i != j) x[k++] = std::pow(u[i] / u[j], 1.0 / f.nu);
            OrthantQuery q{Vector::Constant(D - 1, -kInf), x, sj, S, f.nu + 1.0};
            auto r = mvt_rect(q, opt);
            out[j].value = r.probability / u[j];
            out[j].se = r.se / u[j];
          }
        }
      },
      m.family);
  return out;
}

inline MeasureResult sum_terms(const std::vector<MeasureResult>& terms) {
  MeasureResult r;
  double var = 0.0;
  detail::KahanSum s;
  for (auto& t : terms) {
    s.add(t.value);
    var += t.se * t.se;
    r.warnings.insert(r.warnings.end(), t.warnings.begin(), t.warnings.end());
  }
  r.value = s.value();
  r.se = std::sqrt(var);
  return r;
}

inline MeasureResult xi_measure(const MgpdModel& m, const Vector& u, const MvnOptions& opt = {}) {
  return sum_terms(xi_terms(m, u, opt));
}

inline MeasureResult exponent_measure_v(const MgpdModel& m, const Vector& u, const MvnOptions& opt = {}) {
  return sum_terms(v_terms(m, u, opt));
}

// Model-implied tail correlation of D components, Xi(1_D).
inline MeasureResult model_chi(const MgpdModel& m, Eigen::Index D, const MvnOptions& opt = {}) {
  require(D >= 1, "mgpd", "dimension must be positive");
  if (m.dim() > 0) require(D <= m.dim(), "mgpd", "dimension exceeds the model's matrix size");
  return xi_measure(m.leading(D), Vector::Ones(D), opt);
}

// ---------------------------------------------------------------------------
// Generators (extremal functions with unit means)

class GeneratorSampler {
 public:
  GeneratorSampler(const MgpdModel& m, Eigen::Index D) : model_(m), D_(D) {
    detail::check_model(m, D);
    if (auto* h = std::get_if<HuslerReiss>(&m.family)) {
      // W anchored at W_0 = 0: Cov(W_i, W_k) = G_i0 + G_k0 - G_ik
      Matrix C(D, D);
      for (Eigen::Index i = 0; i < D; ++i)
        for (Eigen::Index k = 0; k < D; ++k) C(i, k) = h->Gamma(i, 0) + h->Gamma(k, 0) - h->Gamma(i, k);
      half_var_ = 0.5 * C.diagonal();
      root_ = spectral_root(C);
    } else if (auto* e = std::get_if<ExtremalStudent>(&m.family)) {
      root_ = spectral_root(e->Sigma);
      c_nu_ = detail::extremal_student_constant(e->nu);
    } else if (auto* l = std::get_if<Logistic>(&m.family)) {
      scale_ = 1.0 / std::tgamma(1.0 - 1.0 / l->beta);
    } else if (auto* n = std::get_if<NegLogistic>(&m.family)) {
      scale_ = 1.0 / std::tgamma(1.0 + 1.0 / n->theta);
    }
  }

  void draw(RandomStream& rng, double* out) const {
    switch (model_.family.index()) {
      case 0: {
        const double b = std::get<Logistic>(model_.family).beta;
        for (Eigen::Index i = 0; i < D_; ++i) out[i] = scale_ * std::pow(rng.exponential(), -1.0 / b);
        break;
      }
      case 1: {
        const double t = std::get<NegLogistic>(model_.family).theta;
        for (Eigen::Index i = 0; i < D_; ++i) out[i] = scale_ * std::pow(rng.exponential(), 1.0 / t);
        break;
      }
      case 2: {
        Vector z(D_);
        for (Eigen::Index i = 0; i < D_; ++i) z[i] = rng.normal();
        Vector w = root_ * z;
        for (Eigen::Index i = 0; i < D_; ++i) out[i] = std::exp(w[i] - half_var_[i]);
        break;
      }
      default: {
        const double nu = std::get<ExtremalStudent>(model_.family).nu;
        Vector z(D_);
        for (Eigen::Index i = 0; i < D_; ++i) z[i] = rng.normal();
        Vector w = root_ * z;
        for (Eigen::Index i = 0; i < D_; ++i) out[i] = w[i] > 0 ? c_nu_ * std::pow(w[i], nu) : 0.0;
      }
    }
  }

  Eigen::Index dim() const { return D_; }

 private:
  static Matrix spectral_root(const Matrix& C) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (C + C.transpose()));
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }

  MgpdModel model_;
  Eigen::Index D_;
  Matrix root_;
  Vector half_var_;
  double scale_ = 1.0;
  double c_nu_ = 1.0;
};

// Monte Carlo fallback for Xi and V when no closed form is practical.
inline std::pair<MeasureResult, MeasureResult> measures_monte_carlo(const MgpdModel& m, const Vector& u,
                                                                    std::size_t n, std::uint64_t seed) {
  const auto D = u.size();
  GeneratorSampler g(m, D);
  const std::size_t blocks = 64;
  std::vector<std::array<double, 4>> acc(blocks, {0, 0, 0, 0});
  parallel_for(blocks, [&](std::size_t b) {
    RandomStream rng(seed, b);
    std::vector<double> w(D);
    const std::size_t lo = n * b / blocks, hi = n * (b + 1) / blocks;
    for (std::size_t i = lo; i < hi; ++i) {
      g.draw(rng, w.data());
      double mn = kInf, mx = 0.0;
      for (Eigen::Index j = 0; j < D; ++j) {
        mn = std::min(mn, w[j] / u[j]);
        mx = std::max(mx, w[j] / u[j]);
      }
      acc[b][0] += mn;
      acc[b][1] += mn * mn;
      acc[b][2] += mx;
      acc[b][3] += mx * mx;
    }
  });
  double s[4] = {0, 0, 0, 0};
  for (auto& a : acc)
    for (int k = 0; k < 4; ++k) s[k] += a[k];
  const double nn = static_cast<double>(n);
  MeasureResult xi, v;
  xi.value = s[0] / nn;
  xi.se = std::sqrt(std::max(0.0, s[1] / nn - xi.value * xi.value) / nn);
  v.value = s[2] / nn;
  v.se = std::sqrt(std::max(0.0, s[3] / nn - v.value * v.value) / nn);
  return {xi, v};
}

// ---------------------------------------------------------------------------
// Likelihood fitting

struct DependenceFit {
  std::string family;
  double estimate = kNaN;
  double se = kNaN;
  double loglik = kNaN;
  std::size_t n_exceed = 0;
  std::size_t dropped_all_censored = 0;
  bool converged = false;
  std::vector<std::string> flags;
};

namespace detail {

struct ExceedanceRows {
  std::vector<Eigen::Index> rows;
  std::size_t dropped = 0;
};

inline ExceedanceRows max_exceedances(const Matrix& Y, const Vector& u, const Vector& censor) {
  ExceedanceRows out;
  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
    bool exceed = false, any_uncensored = false;
    for (Eigen::Index j = 0; j < Y.cols(); ++j) {
      exceed = exceed || Y(i, j) > u[j];
      any_uncensored = any_uncensored || Y(i, j) > censor[j];
    }
    if (!exceed) continue;
    if (!any_uncensored) {
      ++out.dropped;
      continue;
    }
    out.rows.push_back(i);
  }
  return out;
}

inline double logistic_row_loglik(const double* x, const double* c, Eigen::Index D, double beta) {
  double A = 0.0, lsum = 0.0;
  int k = 0;
  for (Eigen::Index j = 0; j < D; ++j) {
    if (x[j] > c[j]) {
      A += std::pow(x[j], -beta);
      lsum += (-beta - 1.0) * std::log(x[j]);
      ++k;
    } else {
      A += std::pow(c[j], -beta);
    }
  }
  double lc = 0.0;
  for (int i = 1; i < k; ++i) lc += std::log(i * beta - 1.0);
  return lc + lsum + (1.0 / beta - k) * std::log(A);
}

}  // namespace detail

// Censored likelihood for the logistic MGP on unit-Frechet data: rows with
// some component above its threshold enter; components at or below their
// censoring level contribute through the partial derivatives of V.
inline DependenceFit fit_logistic_censored(const Matrix& Y, const Vector& u, const Vector& censor) {
  const auto D = Y.cols();
  require(D >= 2, "mgpd", "need at least two columns");
  require(u.size() == D && censor.size() == D, "mgpd", "threshold and censoring vectors must match columns");
  for (Eigen::Index j = 0; j < D; ++j) require(u[j] > 0, "mgpd", "thresholds must be positive");
  auto ex = detail::max_exceedances(Y, u, censor);
  if (ex.rows.empty()) throw InvalidArgument("mgpd", "no threshold exceedances");
  DependenceFit fit;
  fit.family = "logistic";
  fit.n_exceed = ex.rows.size();
  fit.dropped_all_censored = ex.dropped;
  if (ex.dropped) fit.flags.push_back("dropped_all_censored_rows");
  Matrix Yr(ex.rows.size(), D);
  for (std::size_t k = 0; k < ex.rows.size(); ++k) Yr.row(k) = Y.row(ex.rows[k]);
  Matrix Yt = Yr.transpose();  // column-major rows for contiguous access
  auto nll_beta = [&](double beta) {
    if (!(beta > 1.0) || beta > 200) return kInf;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < Yt.cols(); ++i) ll += detail::logistic_row_loglik(Yt.col(i).data(), censor.data(), D, beta);
    double s = 0.0;
    for (Eigen::Index j = 0; j < D; ++j) s += std::pow(u[j], -beta);
    ll -= Yt.cols() * std::log(s) / beta;
    return -ll;
  };
  // search on log(beta - 1)
  auto g = [&](double t) { return nll_beta(1.0 + std::exp(t)); };
  double best_t = 0, best = kInf;
  for (double t = -6; t <= 4; t += 0.25) {
    const double v = g(t);
    if (v < best) {
      best = v;
      best_t = t;
    }
  }
  const double t = detail::brent_minimize(g, best_t - 0.25, best_t + 0.25, 1e-12);
  const double beta = 1.0 + std::exp(t);
  fit.estimate = beta;
  fit.loglik = -nll_beta(beta);
  fit.converged = std::isfinite(fit.loglik) && t > -5.9 && t < 3.9;
  if (!fit.converged) fit.flags.push_back("boundary");
  const double h = 1e-4 * beta;
  const double info = (nll_beta(beta + h) - 2 * nll_beta(beta) + nll_beta(beta - h)) / (h * h);
  fit.se = info > 0 ? 1.0 / std::sqrt(info) : kNaN;
  if (!(info > 0)) fit.flags.push_back("degenerate_hessian");
  return fit;
}

namespace detail {

struct HrPairTerms {
  double V, dx, dy, dxy;  // V and -dV/dx, -dV/dy, -d2V/dxdy
};

inline HrPairTerms hr_bivariate(double x, double y, double gamma) {
  const double a = std::sqrt(2.0 * gamma);
  const double l = std::log(y / x) / a;
  const double w1 = a / 2 + l, w2 = a / 2 - l;
  const double p1 = norm_cdf(w1), p2 = norm_cdf(w2);
  return {p1 / x + p2 / y, p1 / (x * x), p2 / (y * y), norm_pdf(w1) / (a * x * x * y)};
}

// Composite contribution of one row to one pair; 0 when the row does not exceed.
inline double hr_pair_loglik(double x, double y, double ux, double uy, double cx, double cy, double gamma,
                             bool* used) {
  *used = false;
  if (!(x > ux || y > uy)) return 0.0;
  const bool ox = x > cx, oy = y > cy;
  if (!ox && !oy) return 0.0;
  *used = true;
  const double lv = std::log(hr_bivariate(ux, uy, gamma).V);
  if (ox && oy) return std::log(hr_bivariate(x, y, gamma).dxy) - lv;
  if (ox) return std::log(hr_bivariate(x, cy, gamma).dx) - lv;
  return std::log(hr_bivariate(cx, y, gamma).dy) - lv;
}

}  // namespace detail

// Pairwise censored composite likelihood for the exchangeable Husler-Reiss
// model; standard error from the sandwich with row-level score variability.
inline DependenceFit fit_hr_exchangeable(const Matrix& Y, const Vector& u, const Vector& censor) {
  const auto D = Y.cols();
  require(D >= 2, "mgpd", "need at least two columns");
  require(u.size() == D && censor.size() == D, "mgpd", "threshold and censoring vectors must match columns");
  auto ex = detail::max_exceedances(Y, u, censor);
  if (ex.rows.empty()) throw InvalidArgument("mgpd", "no threshold exceedances");
  DependenceFit fit;
  fit.family = "husler_reiss";
  fit.n_exceed = ex.rows.size();
  fit.dropped_all_censored = ex.dropped;
  auto row_ll = [&](Eigen::Index i, double gamma) {
    double s = 0.0;
    bool used;
    for (Eigen::Index a = 0; a < D; ++a)
      for (Eigen::Index b = a + 1; b < D; ++b)
        s += detail::hr_pair_loglik(Y(i, a), Y(i, b), u[a], u[b], censor[a], censor[b], gamma, &used);
    return s;
  };
  auto total = [&](double gamma) {
    double s = 0.0;
    for (auto i : ex.rows) s += row_ll(i, gamma);
    return s;
  };
  auto g = [&](double t) {
    const double v = total(std::exp(t));
    return std::isfinite(v) ? -v : 1e300;
  };
  double best_t = 0, best = kInf;
  for (double t = -7; t <= 7; t += 0.25) {
    const double v = g(t);
    if (v < best) {
      best = v;
      best_t = t;
    }
  }
  const double t = detail::brent_minimize(g, best_t - 0.25, best_t + 0.25, 1e-12);
  const double gamma = std::exp(t);
  fit.estimate = gamma;
  fit.loglik = total(gamma);
  fit.converged = t > -6.9 && t < 6.9;
  if (!fit.converged) fit.flags.push_back("boundary");
  const double h = 1e-4 * gamma;
  const double H = -(total(gamma + h) - 2 * fit.loglik + total(gamma - h)) / (h * h);
  double J = 0.0;
  for (auto i : ex.rows) {
    const double sc = (row_ll(i, gamma + h) - row_ll(i, gamma - h)) / (2 * h);
    J += sc * sc;
  }
  fit.se = H > 0 ? std::sqrt(J) / H : kNaN;
  if (!(H > 0)) fit.flags.push_back("degenerate_hessian");
  return fit;
}

// [Xi(s)/V(u)] times the empirical fraction of rows with max_j Y_j/u_j > 1.
inline MeasureResult joint_exceedance_prob(const MgpdModel& m, const Matrix& Y, const Vector& u, const Vector& s,
                                           const MvnOptions& opt = {}) {
  const auto D = u.size();
  require(Y.cols() == D && s.size() == D, "mgpd", "dimensions of data, thresholds and levels differ");
  require(Y.rows() >= 1, "mgpd", "empty data");
  for (Eigen::Index j = 0; j < D; ++j) require(s[j] >= u[j], "mgpd", "target levels must be at least the thresholds");
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
    bool e = false;
    for (Eigen::Index j = 0; j < D; ++j) e = e || Y(i, j) > u[j];
    k += e;
  }
  const double frac = static_cast<double>(k) / Y.rows();
  auto xi = xi_measure(m, s, opt);
  auto v = exponent_measure_v(m, u, opt);
  MeasureResult out;
  out.value = frac * xi.value / v.value;
  const double rel = std::hypot(xi.value > 0 ? xi.se / xi.value : 0.0, v.se / v.value);
  out.se = out.value * rel;
  out.warnings = xi.warnings;
  out.warnings.insert(out.warnings.end(), v.warnings.begin(), v.warnings.end());
  return out;
}

}  // namespace extremis
