#include <gtest/gtest.h>

#include <boost/math/constants/constants.hpp>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <numeric>

#include "extremis/condex.hpp"

using namespace extremis;

namespace {

double laplace_draw(RandomStream& rng) {
  const double e = rng.exponential();
  return rng.uniform() < 0.5 ? e : -e;
}

double skewnormal_draw(RandomStream& rng, double mu, double sigma, double kappa) {
  const double d = kappa / std::sqrt(1 + kappa * kappa);
  return mu + sigma * (d * std::abs(rng.normal()) + std::sqrt(1 - d * d) * rng.normal());
}

// Exchangeable HT rows: a random column sits at u + Exp(1), the others follow
// alpha x + x^beta Z with iid residuals.
template <class Residual>
Matrix exchangeable_rows(int n, int m, double u, double alpha, double beta, std::uint64_t seed, Residual draw) {
  RandomStream rng(seed, 0);
  Matrix L(n, m);
  for (int i = 0; i < n; ++i) {
    const int j = static_cast<int>(rng.below(m));
    const double x = u + rng.exponential();
    for (int k = 0; k < m; ++k) L(i, k) = k == j ? x : alpha * x + std::pow(x, beta) * draw(rng);
  }
  return L;
}

// Gaussian pseudo-likelihood profiled over (mu, sigma) in closed form.
double profile_gauss_nll(const std::vector<double>& xs, const std::vector<double>& ys, double a, double b) {
  const double n = xs.size();
  double m = 0, s2 = 0, jac = 0;
  std::vector<double> z(xs.size());
  for (std::size_t r = 0; r < xs.size(); ++r) {
    z[r] = (ys[r] - a * xs[r]) / std::pow(xs[r], b);
    m += z[r] / n;
    jac += b * std::log(xs[r]);
  }
  for (double v : z) s2 += (v - m) * (v - m) / n;
  return 0.5 * n * (std::log(2 * M_PI * s2) + 1) + jac;
}

double energy_statistic(const std::vector<std::vector<double>>& pts, const std::vector<int>& lab) {
  double ab = 0, aa = 0, bb = 0;
  double nab = 0, naa = 0, nbb = 0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t k = i + 1; k < pts.size(); ++k) {
      double d = 0;
      for (std::size_t c = 0; c < pts[i].size(); ++c) d += (pts[i][c] - pts[k][c]) * (pts[i][c] - pts[k][c]);
      d = std::sqrt(d);
      if (lab[i] != lab[k]) {
        ab += d;
        ++nab;
      } else if (lab[i] == 0) {
        aa += d;
        ++naa;
      } else {
        bb += d;
        ++nbb;
      }
    }
  return 2 * ab / nab - aa / naa - bb / nbb;
}

double energy_pvalue(const Matrix& A, const Matrix& B, int perms, std::uint64_t seed) {
  std::vector<std::vector<double>> pts;
  std::vector<int> lab;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    pts.emplace_back(A.cols(), 0.0);
    for (Eigen::Index c = 0; c < A.cols(); ++c) pts.back()[c] = A(i, c);
    lab.push_back(0);
  }
  for (Eigen::Index i = 0; i < B.rows(); ++i) {
    pts.emplace_back(B.cols(), 0.0);
    for (Eigen::Index c = 0; c < B.cols(); ++c) pts.back()[c] = B(i, c);
    lab.push_back(1);
  }
  const double obs = energy_statistic(pts, lab);
  RandomStream rng(seed, 1);
  int ge = 0;
  for (int p = 0; p < perms; ++p) {
    std::shuffle(lab.begin(), lab.end(), rng.engine());
    ge += energy_statistic(pts, lab) >= obs;
  }
  return (ge + 1.0) / (perms + 1.0);
}

HtParams degenerate(double alpha, double beta, Matrix pool) {
  HtParams p;
  p.alpha = Vector::Constant(pool.cols(), alpha);
  p.beta = Vector::Constant(pool.cols(), beta);
  p.law = SkewNormalResidualLaw{};
  p.u = 1.0;
  p.residual_pool = std::move(pool);
  return p;
}

}  // namespace

TEST(Residuals, IdentityParametersLeaveValues) {
  Matrix L(3, 3);
  L << 2, 0.5, -1, 0.3, 1, 1, 4, 3, 2;
  auto Z = ht_residuals(L, 0, Vector::Zero(2), Vector::Zero(2), 1.0);
  ASSERT_EQ(Z.rows(), 2);
  EXPECT_DOUBLE_EQ(Z(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(Z(0, 1), -1);
  EXPECT_DOUBLE_EQ(Z(1, 0), 3);
  EXPECT_DOUBLE_EQ(Z(1, 1), 2);
}

TEST(Residuals, ComonotoneColumnsGiveZero) {
  Matrix L(4, 2);
  L << 1.5, 1.5, 2, 2, 3, 3, 0.1, 0.1;
  auto Z = ht_residuals(L, 1, Vector::Ones(1), Vector::Zero(1), 1.0);
  EXPECT_EQ(Z.rows(), 3);
  EXPECT_EQ(Z.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Residuals, ReconstructionRoundTrip) {
  RandomStream rng(3, 0);
  Matrix L(200, 4);
  for (Eigen::Index i = 0; i < L.size(); ++i) L.data()[i] = laplace_draw(rng);
  Vector a(3), b(3);
  a << 0.2, 0.7, -0.4;
  b << 0.1, -0.5, 0.6;
  const double u = 0.5;
  auto Z = ht_residuals(L, 2, a, b, u);
  Eigen::Index r = 0;
  double worst = 0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    if (!(L(i, 2) > u)) continue;
    const double x = L(i, 2);
    for (int k = 0, c = 0; k < 4; ++k) {
      if (k == 2) continue;
      worst = std::max(worst, std::abs(a[c] * x + std::pow(x, b[c]) * Z(r, c) - L(i, k)));
      ++c;
    }
    ++r;
  }
  EXPECT_EQ(r, Z.rows());
  EXPECT_LT(worst, 1e-12);
}

TEST(Residuals, RejectsBadInput) {
  Matrix L = Matrix::Zero(5, 2);
  EXPECT_THROW(ht_residuals(L, 0, Vector::Zero(1), Vector::Zero(1), 1.0), InvalidArgument);
  EXPECT_THROW(ht_residuals(L, 0, Vector::Zero(1), Vector::Zero(1), -1.0), InvalidArgument);
  EXPECT_THROW(ht_residuals(L, 3, Vector::Zero(1), Vector::Zero(1), 1.0), InvalidArgument);
}

TEST(RootLevel, Examples) {
  EXPECT_DOUBLE_EQ(ht_root_v(0.0, 1.0, 0.3, 4.0), 4.0);
  EXPECT_NEAR(ht_root_v(2.0, 0.5, 0.0, 5.0), 6.0, 1e-10);
  EXPECT_EQ(ht_root_v(-1.0, 0.0, 0.0, 5.0), kInf);
  EXPECT_THROW(ht_root_v(1.0, -0.1, 0.0, 5.0), InvalidArgument);
}

TEST(RootLevel, SatisfiesEquationAndIsSmallest) {
  for (double z : {-3.0, -1.0, -0.2, 0.4}) {
    const double a = 0.6, b = 0.45, v = 8;
    const double y = ht_root_v(z, a, b, v);
    ASSERT_TRUE(std::isfinite(y));
    EXPECT_GE(y, v);
    EXPECT_NEAR(a * y + std::pow(y, b) * z, std::max(v, a * v + std::pow(v, b) * z), 1e-9);
    if (y > v) EXPECT_LT(a * (y - 1e-6) + std::pow(y - 1e-6, b) * z, v);
  }
}

TEST(AnalyticProb, ComonotoneEqualsMarginTail) {
  auto p = degenerate(1.0, 0.0, Matrix::Zero(50, 3));
  for (double v : {2.0, 7.0, 20.0}) {
    auto r = ht_prob_analytic(p, v);
    EXPECT_NEAR(r.log_prob, std::log(0.5) - v, 1e-12);
    EXPECT_EQ(r.finite_roots, 50u);
  }
}

TEST(AnalyticProb, SingleResidualShift) {
  const double v = 6;
  Matrix pool(1, 2);
  pool << 0.5 * v - 0.5 * std::log(2.0), 10.0;  // min root lands at v + ln 2
  auto p = degenerate(0.5, 0.0, pool);
  auto r = ht_prob_analytic(p, v);
  EXPECT_NEAR(r.log_prob, std::log(0.5) - v - std::log(2.0), 1e-9);
  auto lit = ht_prob_analytic(p, v, MarginSpec::laplace(), true);
  EXPECT_NEAR(lit.log_prob, -v - std::log(2.0), 1e-9);
  EXPECT_NE(std::find(lit.flags.begin(), lit.flags.end(), "literal_exponential_prefactor"), lit.flags.end());
}

TEST(AnalyticProb, AllContributionsZero) {
  auto p = degenerate(0.0, 0.0, Matrix::Constant(4, 2, -1.0));
  auto r = ht_prob_analytic(p, 5);
  EXPECT_EQ(r.log_prob, -kInf);
  EXPECT_NE(std::find(r.flags.begin(), r.flags.end(), "all_contributions_zero"), r.flags.end());
}

TEST(SimulationProb, WholeSpaceReturnsMarginTail) {
  auto p = degenerate(0.3, 0.2, Matrix::Constant(10, 2, 0.1));
  SimRegion all{Vector::Constant(2, -kInf), Vector::Constant(2, kInf)};
  auto r = ht_prob_simulation(p, all, 6, 1000, 1);
  EXPECT_DOUBLE_EQ(r.probability, 0.5 * std::exp(-6.0));
  EXPECT_EQ(r.hits, 1000u);
}

TEST(SimulationProb, ComonotoneFitAllHit) {
  auto p = degenerate(1.0, 0.0, Matrix::Zero(10, 3));
  const double v = 5;
  SimRegion reg{Vector::Constant(3, v), Vector::Constant(3, kInf)};
  auto r = ht_prob_simulation(p, reg, v, 2000, 2);
  EXPECT_DOUBLE_EQ(r.probability, 0.5 * std::exp(-v));
}

TEST(SimulationProb, ZeroHitsFlagged) {
  auto p = degenerate(0.0, 0.0, Matrix::Constant(10, 1, -1.0));
  SimRegion reg{Vector::Constant(1, 0.0), Vector::Constant(1, kInf)};
  auto r = ht_prob_simulation(p, reg, 3, 500, 3);
  EXPECT_EQ(r.probability, 0.0);
  EXPECT_GT(r.se, 0.0);
  EXPECT_NE(std::find(r.flags.begin(), r.flags.end(), "zero_hits"), r.flags.end());
}

TEST(SimulationProb, IndependenceMatchesProductOfMargins) {
  RandomStream rng(11, 0);
  Matrix L(100000, 2);
  for (Eigen::Index i = 0; i < L.size(); ++i) L.data()[i] = laplace_draw(rng);
  auto p = fit_ht_gaussian(L, 0);
  const double v = p.u + 1.0, w = 1.0;
  SimRegion reg{Vector::Constant(1, w), Vector::Constant(1, kInf)};
  auto r = ht_prob_simulation(p, reg, v, 200000, 4);
  const double truth = 0.5 * std::exp(-v) * 0.5 * std::exp(-w);
  EXPECT_NEAR(r.probability, truth, 3 * r.se + 0.05 * truth);
}

TEST(SimulationProb, DeterministicAcrossThreads) {
  auto p = degenerate(0.5, 0.2, Matrix::Constant(7, 2, 0.3));
  p.residual_pool(3, 0) = -2;
  SimRegion reg{Vector::Constant(2, 4.0), Vector::Constant(2, kInf)};
  set_max_threads(1);
  auto a = ht_prob_simulation(p, reg, 5, 5000, 9);
  set_max_threads(4);
  auto b = ht_prob_simulation(p, reg, 5, 5000, 9);
  set_max_threads(0);
  EXPECT_EQ(a.hits, b.hits);
}

TEST(GaussianFit, RecoversSimulatedParameters) {
  const double alpha = 0.5, beta = 0.3, u = 5;
  RandomStream rng(21, 0);
  Matrix L(5000, 2);
  for (int i = 0; i < 5000; ++i) {
    L(i, 0) = u + rng.exponential();
    L(i, 1) = alpha * L(i, 0) + std::pow(L(i, 0), beta) * (0.5 + 0.8 * rng.normal());
  }
  HtFitOptions opt;
  opt.threshold = u;
  auto p = fit_ht_gaussian(L, 0, opt);
  EXPECT_TRUE(p.converged);
  EXPECT_NEAR(p.alpha[0], alpha, 3 * p.alpha_se[0]);
  EXPECT_NEAR(p.beta[0], beta, 3 * p.beta_se[0]);
  EXPECT_EQ(p.residual_pool.rows(), 5000);
  EXPECT_GT(p.alpha_se[0], 0);
}

TEST(GaussianFit, ComonotoneHitsBoundary) {
  RandomStream rng(5, 0);
  Matrix L(3000, 2);
  for (int i = 0; i < 3000; ++i) L(i, 0) = L(i, 1) = laplace_draw(rng);
  auto p = fit_ht_gaussian(L, 0, {0.95});
  EXPECT_GT(p.alpha[0], 0.999);
  EXPECT_NE(std::find(p.flags.begin(), p.flags.end(), "alpha_at_boundary"), p.flags.end());
}

TEST(GaussianFit, IndependentColumnsGiveZeroAlpha) {
  RandomStream rng(6, 0);
  Matrix L(100000, 3);
  for (Eigen::Index i = 0; i < L.size(); ++i) L.data()[i] = laplace_draw(rng);
  auto p = fit_ht_gaussian(L, 1);
  for (int c = 0; c < 2; ++c) EXPECT_NEAR(p.alpha[c], 0.0, 3 * p.alpha_se[c]);
}

TEST(GaussianFit, TooFewExceedances) {
  Matrix L = Matrix::Zero(30, 2);
  L(0, 0) = 3;
  HtFitOptions opt;
  opt.threshold = 1;
  EXPECT_THROW(fit_ht_gaussian(L, 0, opt), InvalidArgument);
}

TEST(SkewNormalFit, ZeroSlantMatchesProfiledGaussian) {
  auto L = exchangeable_rows(1500, 3, 8, 0.4, 0.3, 31, [](RandomStream& r) { return 0.3 + 0.7 * r.normal(); });
  HtFitOptions opt;
  opt.threshold = 8;
  opt.fix_kappa = 0.0;
  auto p = fit_ht_exchangeable_skewnormal(L, opt);

  std::vector<double> xs, ys;
  for (int j = 0; j < 3; ++j)
    for (Eigen::Index i = 0; i < L.rows(); ++i)
      if (L(i, j) > 8)
        for (int k = 0; k < 3; ++k)
          if (k != j) {
            xs.push_back(L(i, j));
            ys.push_back(L(i, k));
          }
  using boost::math::tools::brent_find_minima;
  auto inner = [&](double a) {
    return brent_find_minima([&](double b) { return profile_gauss_nll(xs, ys, a, b); }, -1.0, 0.99, 40);
  };
  auto outer = brent_find_minima([&](double a) { return inner(a).second; }, 0.0, 0.99, 40);
  const double b_hat = inner(outer.first).first;
  EXPECT_NEAR(p.alpha[0], outer.first, 1e-4);
  EXPECT_NEAR(p.beta[0], b_hat, 1e-4);
  EXPECT_NEAR(-p.loglik, outer.second, 1e-5 * std::abs(outer.second));
}

TEST(SkewNormalFit, RecoversSlantedResiduals) {
  const double alpha = 0.3, beta = 0.4, kappa = 2;
  auto L = exchangeable_rows(10000, 3, 12, alpha, beta, 41,
                             [&](RandomStream& r) { return skewnormal_draw(r, 0.0, 1.0, kappa); });
  HtFitOptions opt;
  opt.threshold = 12;
  auto p = fit_ht_exchangeable_skewnormal(L, opt);
  auto law = std::get<SkewNormalResidualLaw>(p.law);
  EXPECT_NEAR(p.alpha[0], alpha, 3 * p.alpha_se[0]);
  EXPECT_NEAR(p.beta[0], beta, 3 * p.beta_se[0]);
  EXPECT_NEAR(law.kappa, kappa, 0.5);

  opt.fix_kappa = 0.0;
  auto g = fit_ht_exchangeable_skewnormal(L, opt);
  EXPECT_GE(p.loglik, g.loglik - 1e-8);
}

TEST(SkewNormalFit, TwoColumnLikelihoodIsOrderedPairSum) {
  auto L = exchangeable_rows(400, 2, 6, 0.5, 0.2, 51, [](RandomStream& r) { return skewnormal_draw(r, 0, 1, 1); });
  HtFitOptions opt;
  opt.threshold = 6;
  auto p = fit_ht_exchangeable_skewnormal(L, opt);
  auto law = std::get<SkewNormalResidualLaw>(p.law);
  double ll = 0;
  Eigen::Index exceed = 0;
  for (int j = 0; j < 2; ++j)
    for (Eigen::Index i = 0; i < L.rows(); ++i)
      if (L(i, j) > 6) {
        ++exceed;
        const double x = L(i, j), y = L(i, 1 - j), xb = std::pow(x, p.beta[0]);
        const double z = (y - p.alpha[0] * x - law.mu * xb) / (law.sigma * xb);
        ll += std::log(2 * boost::math::constants::one_div_root_two_pi<double>() * std::exp(-0.5 * z * z) /
                       (law.sigma * xb)) +
              std::log(0.5 * std::erfc(-law.kappa * z / std::sqrt(2.0)));
      }
  EXPECT_NEAR(p.loglik, ll, 1e-8 * std::abs(ll));
  EXPECT_EQ(p.residual_pool.rows(), exceed);
}

TEST(SkewNormalFit, RejectsSmallInput) {
  Matrix L = Matrix::Constant(10, 1, 2.0);
  EXPECT_THROW(fit_ht_exchangeable_skewnormal(L), InvalidArgument);
  Matrix L2 = Matrix::Zero(40, 2);
  L2(0, 0) = 3;
  HtFitOptions opt;
  opt.threshold = 1;
  EXPECT_THROW(fit_ht_exchangeable_skewnormal(L2, opt), InvalidArgument);
}

TEST(CrossEstimator, AnalyticAgreesWithSimulation) {
  // exchangeable data on Laplace margins: comonotone-ish core plus noise
  RandomStream rng(61, 0);
  const int n = 60000, m = 3;
  Matrix L(n, m);
  for (int i = 0; i < n; ++i) {
    const double common = laplace_draw(rng);
    for (int k = 0; k < m; ++k) L(i, k) = 0.8 * common + 0.2 * laplace_draw(rng);
  }
  auto p = fit_ht_exchangeable_skewnormal(L, {0.98});
  const double v = -std::log(2 * 0.001);
  auto an = ht_prob_analytic(p, v);
  SimRegion reg{Vector::Constant(m - 1, v), Vector::Constant(m - 1, kInf)};
  auto sim = ht_prob_simulation(p, reg, v, 400000, 7);
  EXPECT_NEAR(std::exp(an.log_prob), sim.probability, 3 * sim.se);
}

TEST(ResidualHomogeneity, EnergyTestAcrossConditionings) {
  int pass = 0;
  const int reps = 20;
  for (int r = 0; r < reps; ++r) {
    auto L = exchangeable_rows(600, 3, 10, 0.4, 0.3, 100 + r, [](RandomStream& s) { return skewnormal_draw(s, 0, 1, 1); });
    HtFitOptions opt;
    opt.threshold = 10;
    auto p = fit_ht_exchangeable_skewnormal(L, opt);
    auto A = ht_residuals(L, 0, p);
    auto B = ht_residuals(L, 1, p);
    pass += energy_pvalue(A, B, 99, 500 + r) > 0.01;
  }
  EXPECT_GE(pass, 19);
}

TEST(TwoLevel, MergedLevelsMatchAnalytic) {
  auto L = exchangeable_rows(2000, 4, 8, 0.6, 0.2, 71, [](RandomStream& r) { return skewnormal_draw(r, 0, 1, 1); });
  HtFitOptions opt;
  opt.threshold = 8;
  auto p = fit_ht_exchangeable_skewnormal(L, opt);
  const double s = 10;
  auto a = ht_prob_analytic(p, s);
  EXPECT_NEAR(ht_prob_two_level(p, {1}, s, s, true).log_prob, a.log_prob, 1e-12);
  EXPECT_NEAR(ht_prob_two_level(p, {}, s, 7, true).log_prob, a.log_prob, 1e-12);
  auto lower = ht_prob_two_level(p, {0, 2}, s, 8, true);
  EXPECT_GE(lower.log_prob, a.log_prob);
  EXPECT_EQ(lower.assignment_log_probs.size(), 3u);
  auto fixed = ht_prob_two_level(p, {0, 2}, s, 8, false);
  EXPECT_EQ(fixed.assignment_log_probs.size(), 1u);
}

TEST(TwoLevel, RejectsBadGroups) {
  auto p = degenerate(0.5, 0.1, Matrix::Zero(3, 3));
  EXPECT_THROW(ht_prob_two_level(p, {0}, 4, 5, true), InvalidArgument);
  EXPECT_THROW(ht_prob_two_level(p, {3}, 5, 4, true), InvalidArgument);
  EXPECT_THROW(ht_prob_two_level(p, {1, 1}, 5, 4, true), InvalidArgument);
}
