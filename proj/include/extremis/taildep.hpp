#pragma once
// Tail dependence summaries: chi, eta, hidden-regular-variation extrapolation
// and the directional variant with permutation averaging.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "extremis/core.hpp"
#include "extremis/detail/special.hpp"

namespace extremis {

struct ChiEstimate {
  double chi = 0.0;
  double var = 0.0;
  std::size_t n_exceed = 0;
  bool empty = false;
  bool clipped = false;  // estimate above 1
};

inline ChiEstimate chi_estimate(const Matrix& U, double v) {
  require(v > 0 && v < 1, "taildep", "level must lie in (0,1)");
  require(U.rows() >= 1 && U.cols() >= 1, "taildep", "data must be non-empty");
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    double mn = kInf;
    for (Eigen::Index j = 0; j < U.cols(); ++j) {
      require(U(i, j) > 0 && U(i, j) < 1, "taildep", "uniform-scale entries must lie in (0,1)");
      mn = std::min(mn, U(i, j));
    }
    k += mn > v;
  }
  const double n = static_cast<double>(U.rows()), p = k / n;
  ChiEstimate out;
  out.n_exceed = k;
  out.empty = k == 0;
  out.chi = p / (1 - v);
  out.var = p * (1 - p) / (n * (1 - v) * (1 - v));
  out.clipped = out.chi > 1;
  return out;
}

inline std::vector<double> structure_variable(const Matrix& E, const std::vector<double>& beta = {}) {
  require(beta.empty() || beta.size() == static_cast<std::size_t>(E.cols()), "taildep", "one weight per column");
  std::vector<double> t(E.rows());
  for (Eigen::Index i = 0; i < E.rows(); ++i) {
    double mn = kInf;
    for (Eigen::Index j = 0; j < E.cols(); ++j) mn = std::min(mn, beta.empty() ? E(i, j) : E(i, j) / beta[j]);
    t[i] = mn;
  }
  return t;
}

struct EtaEstimate {
  double eta = kNaN;
  double eta_raw = kNaN;  // before truncation at 1
  double se = kNaN;       // asymptotic eta/sqrt(k), approximate
  double prob_exceed = kNaN;
  double threshold = kNaN;
  std::size_t n_exceed = 0;
  bool truncated = false;
};

inline EtaEstimate eta_from_structure(std::span<const double> T, double u) {
  require(std::isfinite(u), "taildep", "threshold must be finite");
  double s = 0.0;
  std::size_t k = 0;
  for (double t : T)
    if (t > u) {
      s += t - u;
      ++k;
    }
  if (k == 0) throw InvalidArgument("taildep", "no exceedances of the structure variable above the threshold");
  EtaEstimate e;
  e.threshold = u;
  e.n_exceed = k;
  e.eta_raw = s / k;
  e.truncated = e.eta_raw > 1.0;
  e.eta = std::min(1.0, e.eta_raw);
  e.se = e.eta / std::sqrt(static_cast<double>(k));
  e.prob_exceed = static_cast<double>(k) / T.size();
  return e;
}

// E on unit exponential margins, u a raw threshold on T_e = min_j E_j.
inline EtaEstimate eta_estimate(const Matrix& E, double u) {
  require(E.rows() >= 1, "taildep", "data must be non-empty");
  auto T = structure_variable(E);
  return eta_from_structure(T, u);
}

// Threshold given as a quantile level of the structure variable.
inline double structure_threshold(std::span<const double> T, double q) {
  require(q > 0 && q < 1, "taildep", "quantile level must lie in (0,1)");
  return sample_quantile({T.begin(), T.end()}, q);
}

inline double hrv_extrapolate(const Matrix& E, double u, double t) {
  require(t >= 0, "taildep", "extrapolation distance must be non-negative");
  auto e = eta_estimate(E, u);
  return e.prob_exceed * std::exp(-t / e.eta);
}

struct TailDepRow {
  double level;
  ChiEstimate chi;
  EtaEstimate eta;
  bool eta_available;
};

// Chi and eta across uniform-scale levels v; eta uses u = -log(1-v).
inline std::vector<TailDepRow> taildep_curve(const Matrix& U, const std::vector<double>& levels) {
  Matrix E = (-(1.0 - U.array()).log()).matrix();
  auto T = structure_variable(E);
  std::vector<TailDepRow> rows;
  for (double v : levels) {
    TailDepRow r{v, chi_estimate(U, v), {}, false};
    try {
      r.eta = eta_from_structure(T, -std::log1p(-v));
      r.eta_available = true;
    } catch (const InvalidArgument&) {
    }
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Directional extrapolation

inline double direction_weight(double phi1, double phi2) {
  require(phi1 > 0 && phi1 < 1 && phi2 > 0 && phi2 < 1, "taildep", "probabilities must lie in (0,1)");
  return std::log(phi2) / std::log(phi1);
}

struct ThresholdSpec {
  double value = kNaN;
  bool is_quantile = true;

  static ThresholdSpec quantile(double q) { return {q, true}; }
  static ThresholdSpec raw(double u) { return {u, false}; }
};

struct DirectionalResult {
  double log_prob = kNaN;
  std::vector<double> assignment_log_probs;
  std::vector<double> assignment_eta;
  std::size_t assignments = 0;
  bool subsampled = false;
  std::vector<std::string> flags;
};

inline constexpr double kMaxAssignments = 1e6;
inline constexpr std::size_t kSubsampleAssignments = 10000;

// Event {E_i > beta_i * target for all cluster columns}, beta_i = 1 on G1 and
// omega on G2. With `exchangeable`, the omega weights are rotated over every
// |G2|-subset of the cluster and the extrapolated probabilities averaged.
inline DirectionalResult directional_extrapolate(const Matrix& E, const std::vector<int>& g1, const std::vector<int>& g2,
                                                 double omega, ThresholdSpec threshold, double target,
                                                 bool exchangeable, std::uint64_t seed = 0) {
  require(omega > 0 && omega <= 1, "taildep", "direction weight must lie in (0,1]");
  std::vector<int> cols = g1;
  cols.insert(cols.end(), g2.begin(), g2.end());
  require(!cols.empty(), "taildep", "groups must not both be empty");
  {
    auto sorted = cols;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "taildep", "groups must be disjoint");
    require(sorted.front() >= 0 && sorted.back() < E.cols(), "taildep", "group index out of range");
  }
  const int m = static_cast<int>(cols.size()), k2 = static_cast<int>(g2.size());
  Matrix sub(E.rows(), m);
  for (int j = 0; j < m; ++j) sub.col(j) = E.col(cols[j]);

  // assignments as subsets of positions in `cols` carrying omega
  std::vector<std::vector<int>> assignments;
  DirectionalResult out;
  if (!exchangeable || k2 == 0 || k2 == m) {
    std::vector<int> a(k2);
    std::iota(a.begin(), a.end(), static_cast<int>(g1.size()));
    assignments.push_back(a);
  } else if (detail::choose(m, k2) <= kMaxAssignments) {
    detail::for_each_combination(m, k2, [&](std::span<const int> c) { assignments.emplace_back(c.begin(), c.end()); });
  } else {
    RandomStream rng(seed, 0xD1);
    std::vector<int> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t r = 0; r < kSubsampleAssignments; ++r) {
      std::shuffle(idx.begin(), idx.end(), rng.engine());
      std::vector<int> a(idx.begin(), idx.begin() + k2);
      std::sort(a.begin(), a.end());
      assignments.push_back(a);
    }
    out.subsampled = true;
    out.flags.push_back("assignment_subsample");
  }

  out.assignments = assignments.size();
  out.assignment_log_probs.resize(assignments.size());
  out.assignment_eta.resize(assignments.size());
  parallel_for(assignments.size(), [&](std::size_t a) {
    std::vector<double> beta(m, 1.0);
    for (int p : assignments[a]) beta[p] = omega;
    auto T = structure_variable(sub, beta);
    const double u = threshold.is_quantile ? structure_threshold(T, threshold.value) : threshold.value;
    auto e = eta_from_structure(T, u);
    const double t = std::max(0.0, target - u);
    out.assignment_eta[a] = e.eta;
    out.assignment_log_probs[a] = std::log(e.prob_exceed) - t / e.eta;
  });
  out.log_prob = detail::log_sum_exp(out.assignment_log_probs) - std::log(static_cast<double>(assignments.size()));
  return out;
}

}  // namespace extremis
