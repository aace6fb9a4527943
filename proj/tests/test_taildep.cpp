#include <gtest/gtest.h>

#include "extremis/simulate.hpp"
#include "extremis/taildep.hpp"

using namespace extremis;

namespace {

Matrix uniforms(int n, int D, std::uint64_t seed) {
  RandomStream rng(seed);
  Matrix U(n, D);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < D; ++j) U(i, j) = rng.uniform();
  return U;
}

Matrix to_exponential(const Matrix& U) { return (-(1.0 - U.array()).log()).matrix(); }

Matrix logistic_uniforms(double alpha, int n, int D, std::uint64_t seed) {
  RandomStream rng(seed);
  Matrix U(n, D);
  std::vector<double> y(D);
  for (int i = 0; i < n; ++i) {
    draw_logistic_max_stable(alpha, rng, y.data(), D);
    for (int j = 0; j < D; ++j) U(i, j) = std::exp(-1.0 / y[j]);
  }
  return U;
}

}  // namespace

TEST(Chi, ComonotoneIsOne) {
  const int n = 10000;
  Matrix U = uniforms(n, 1, 1);
  Matrix C(n, 2);
  C << U, U;
  for (double v : {0.5, 0.9, 0.99}) {
    auto r = chi_estimate(C, v);
    EXPECT_NEAR(r.chi, 1.0, 2.0 / (n * (1 - v)) + 3 * std::sqrt(r.var));
  }
}

TEST(Chi, IndependenceGivesOneMinusV) {
  const int n = 1000000;
  auto r = chi_estimate(uniforms(n, 2, 2), 0.9);
  EXPECT_NEAR(r.chi, 0.1, 3 * std::sqrt(r.var));
}

TEST(Chi, EmptyExceedanceFlagged) {
  Matrix U = Matrix::Constant(10, 2, 0.3);
  auto r = chi_estimate(U, 0.5);
  EXPECT_TRUE(r.empty);
  EXPECT_EQ(r.chi, 0.0);
  EXPECT_EQ(r.var, 0.0);
  EXPECT_THROW(chi_estimate(Matrix::Constant(2, 2, 1.0), 0.5), InvalidArgument);
}

TEST(Chi, LogisticOracle) {
  const double beta = 2.5;
  Matrix U = logistic_uniforms(1 / beta, 1000000, 2, 3);
  auto r = chi_estimate(U, 0.99);
  EXPECT_NEAR(r.chi, 2 - std::pow(2.0, 1 / beta), 3 * std::sqrt(r.var));
  EXPECT_NEAR(model_chi(MgpdModel::logistic(beta), 2).value, 2 - std::pow(2.0, 1 / beta), 1e-14);
}

TEST(Eta, ComonotoneTruncatedToOne) {
  Matrix U = uniforms(50000, 1, 4);
  Matrix E(50000, 2);
  E << to_exponential(U), to_exponential(U);
  auto T = structure_variable(E);
  auto e = eta_estimate(E, structure_threshold(T, 0.95));
  EXPECT_EQ(e.eta, std::min(1.0, e.eta_raw));
  EXPECT_NEAR(e.eta_raw, 1.0, 4 * e.se);
}

TEST(Eta, IndependentExponentialsHalf) {
  Matrix E = to_exponential(uniforms(1000000, 2, 5));
  auto T = structure_variable(E);
  auto e = eta_estimate(E, structure_threshold(T, 0.985));
  EXPECT_NEAR(e.eta, 0.5, 3 * e.se);
  EXPECT_FALSE(e.truncated);
}

TEST(Eta, SingleExceedance) {
  Matrix E(3, 2);
  E << 0.1, 0.2, 2.3, 2.5, 0.5, 0.1;
  auto e = eta_estimate(E, 2.0);
  EXPECT_NEAR(e.eta, 0.3, 1e-15);
  EXPECT_EQ(e.n_exceed, 1u);
  EXPECT_THROW(eta_estimate(E, 5.0), InvalidArgument);
}

TEST(Hrv, ExtrapolationIdentities) {
  Matrix E(4, 2);
  E << 3.0, 3.5, 3.5, 3.2, 0.1, 0.2, 1.0, 0.4;
  const double u = 2.75;  // exceedances of 0.25 and 0.45: eta = 0.35
  EXPECT_DOUBLE_EQ(hrv_extrapolate(E, u, 0.0), 0.5);
  EXPECT_NEAR(hrv_extrapolate(E, u, 1.0), 0.5 * std::exp(-1 / 0.35), 1e-15);
  Matrix H(2, 2);
  H << 1.0, 1.0, 1.5, 1.5;  // eta = 0.5 at u = 0.75
  EXPECT_NEAR(hrv_extrapolate(H, 0.75, std::log(4.0)), 1.0 / 16, 1e-15);
  double prev = 1;
  for (double t : {0.0, 0.5, 1.0, 3.0}) {
    const double p = hrv_extrapolate(E, u, t);
    EXPECT_LE(p, prev);
    prev = p;
  }
  EXPECT_THROW(hrv_extrapolate(E, u, -1), InvalidArgument);
}

TEST(Taildep, RankInvariance) {
  Matrix U = logistic_uniforms(0.6, 20000, 3, 6);
  Matrix R(U.rows(), 3);
  for (int j = 0; j < 3; ++j) {
    std::vector<double> col(U.col(j).data(), U.col(j).data() + U.rows());
    auto r = rank_transform(col);
    for (Eigen::Index i = 0; i < U.rows(); ++i) R(i, j) = r[i];
  }
  Matrix Rc = R;
  // a strictly increasing distortion followed by re-ranking leaves ranks unchanged
  for (int j = 0; j < 3; ++j) {
    std::vector<double> col(U.rows());
    for (Eigen::Index i = 0; i < U.rows(); ++i) col[i] = std::pow(U(i, j), 3.0) + 7 * j;
    auto r = rank_transform(col);
    for (Eigen::Index i = 0; i < U.rows(); ++i) Rc(i, j) = r[i];
  }
  for (double v : {0.9, 0.95}) {
    EXPECT_EQ(chi_estimate(R, v).chi, chi_estimate(Rc, v).chi);
    EXPECT_EQ(eta_estimate(to_exponential(R), -std::log1p(-v)).eta, eta_estimate(to_exponential(Rc), -std::log1p(-v)).eta);
  }
}

TEST(Taildep, CurveRows) {
  Matrix U = uniforms(1000, 2, 7);
  auto rows = taildep_curve(U, {0.5, 0.9, 0.9999});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_TRUE(rows[0].eta_available);
  EXPECT_FALSE(rows[2].eta_available);
  EXPECT_TRUE(rows[2].chi.empty);
}

TEST(Directional, WeightFromProbabilities) {
  EXPECT_NEAR(direction_weight(1.0 / 300, 12.0 / 300), 0.564340565084789710, 1e-15);
}

TEST(Directional, UnitWeightCollapsesToHrv) {
  Matrix E = to_exponential(logistic_uniforms(0.7, 50000, 4, 8));
  auto T = structure_variable(E);
  const double u = structure_threshold(T, 0.985), t = 2.0;
  const double ref = std::log(hrv_extrapolate(E, u, t));
  auto d = directional_extrapolate(E, {0, 1}, {2, 3}, 1.0, ThresholdSpec::raw(u), u + t, true);
  EXPECT_NEAR(d.log_prob, ref, 1e-12);
  auto all = directional_extrapolate(E, {0, 1, 2, 3}, {}, 0.6, ThresholdSpec::raw(u), u + t, false);
  EXPECT_NEAR(all.log_prob, ref, 1e-12);
  EXPECT_EQ(all.assignments, 1u);
}

TEST(Directional, ExchangeableAssignmentsAgree) {
  Matrix E = to_exponential(logistic_uniforms(0.6, 100000, 5, 9));
  const double omega = direction_weight(1.0 / 300, 12.0 / 300);
  auto d = directional_extrapolate(E, {0, 1, 2}, {3, 4}, omega, ThresholdSpec::quantile(0.985), 8.0, true);
  EXPECT_EQ(d.assignments, 10u);
  double m = 0, s2 = 0;
  for (double lp : d.assignment_log_probs) m += std::exp(lp) / 10;
  for (double lp : d.assignment_log_probs) s2 += std::pow(std::exp(lp) - m, 2) / 9;
  EXPECT_LT(std::sqrt(s2) / m, 0.1);
  EXPECT_NEAR(std::exp(d.log_prob), m, 1e-12 * m);
}

TEST(Directional, SubsamplesHugeAssignmentSets) {
  Matrix E = to_exponential(uniforms(3000, 30, 10));
  std::vector<int> g1, g2;
  for (int j = 0; j < 15; ++j) g1.push_back(j);
  for (int j = 15; j < 30; ++j) g2.push_back(j);
  auto d = directional_extrapolate(E, g1, g2, 0.9, ThresholdSpec::quantile(0.5), 1.0, true, 3);
  EXPECT_TRUE(d.subsampled);
  EXPECT_EQ(d.assignments, kSubsampleAssignments);
}

TEST(Directional, RejectsBadGroups) {
  Matrix E = Matrix::Ones(10, 3);
  EXPECT_THROW(directional_extrapolate(E, {0, 1}, {1}, 0.5, ThresholdSpec::quantile(0.5), 1, true), InvalidArgument);
  EXPECT_THROW(directional_extrapolate(E, {0, 1}, {5}, 0.5, ThresholdSpec::quantile(0.5), 1, true), InvalidArgument);
  EXPECT_THROW(directional_extrapolate(E, {0}, {1}, 1.5, ThresholdSpec::quantile(0.5), 1, true), InvalidArgument);
}
