#pragma once
// Dependence diagnostics and model selection: Kendall's tau, Ward clustering,
// partial-exchangeability tests, subset chi cross-validation, omega2 and
// threshold-stability scans.

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "extremis/condex.hpp"
#include "extremis/core.hpp"
#include "extremis/mgpd.hpp"

namespace extremis {

// ---------------------------------------------------------------------------
// Kendall's tau

namespace detail {

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : t_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < t_.size(); i += i & (~i + 1)) ++t_[i];
  }
  // count of entries with index < i
  long long prefix(std::size_t i) const {
    long long s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += t_[i];
    return s;
  }

 private:
  std::vector<long long> t_;
};

// Dense ranks 0..K-1 with ties sharing a rank.
inline std::vector<int> dense_ranks(const double* x, std::size_t n, std::size_t stride) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a * stride] < x[b * stride]; });
  std::vector<int> r(n);
  int cur = -1;
  for (std::size_t k = 0; k < n; ++k) {
    if (k == 0 || x[idx[k] * stride] != x[idx[k - 1] * stride]) ++cur;
    r[idx[k]] = cur;
  }
  return r;
}

struct KendallCounts {
  std::vector<long long> s;  // per point: sum_l sign(x_k-x_l) sign(y_k-y_l)
  std::vector<long long> tx, ty;  // per point: number of others tied in x, in y
  long long S = 0, Tx = 0, Ty = 0;  // pair totals
};

inline KendallCounts kendall_counts(const std::vector<int>& rx, const std::vector<int>& ry) {
  const std::size_t n = rx.size();
  const int ky = *std::max_element(ry.begin(), ry.end()) + 1;
  KendallCounts c;
  c.s.assign(n, 0);
  c.tx.assign(n, 0);
  c.ty.assign(n, 0);
  std::vector<long long> cx(*std::max_element(rx.begin(), rx.end()) + 1, 0), cy(ky, 0);
  for (std::size_t k = 0; k < n; ++k) {
    ++cx[rx[k]];
    ++cy[ry[k]];
  }
  for (std::size_t k = 0; k < n; ++k) {
    c.tx[k] = cx[rx[k]] - 1;
    c.ty[k] = cy[ry[k]] - 1;
  }
  for (auto v : cx) c.Tx += v * (v - 1) / 2;
  for (auto v : cy) c.Ty += v * (v - 1) / 2;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return rx[a] < rx[b]; });
  // sweep in both directions; points with equal x enter the tree together
  for (int dir = 0; dir < 2; ++dir) {
    Fenwick bit(ky);
    long long inserted = 0;
    std::size_t g = 0;
    while (g < n) {
      std::size_t h = g;
      const std::size_t at = dir == 0 ? g : n - 1 - g;
      while (h < n && rx[order[dir == 0 ? h : n - 1 - h]] == rx[order[at]]) ++h;
      for (std::size_t q = g; q < h; ++q) {
        const auto k = order[dir == 0 ? q : n - 1 - q];
        const long long below = bit.prefix(ry[k]);
        const long long above = inserted - bit.prefix(ry[k] + 1);
        // dir 0: others have smaller x; dir 1: larger x
        c.s[k] += dir == 0 ? below - above : above - below;
      }
      for (std::size_t q = g; q < h; ++q) {
        bit.add(ry[order[dir == 0 ? q : n - 1 - q]]);
        ++inserted;
      }
      g = h;
    }
  }
  for (auto v : c.s) c.S += v;
  c.S /= 2;
  return c;
}

inline double tau_b(double S, double n0, double tx, double ty) {
  const double den = std::sqrt((n0 - tx) * (n0 - ty));
  return S / den;
}

}  // namespace detail

inline Matrix kendall_tau_matrix(const Matrix& Y) {
  const auto n = Y.rows(), D = Y.cols();
  require(n >= 2, "validate", "need at least two observations");
  std::vector<std::vector<int>> ranks(D);
  for (Eigen::Index j = 0; j < D; ++j) {
    ranks[j] = detail::dense_ranks(Y.col(j).data(), n, 1);
    if (*std::max_element(ranks[j].begin(), ranks[j].end()) == 0)
      throw InvalidArgument("validate", "column " + std::to_string(j) + " is constant; Kendall's tau is undefined");
  }
  Matrix T = Matrix::Identity(D, D);
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < D; ++a)
    for (int b = a + 1; b < D; ++b) pairs.push_back({a, b});
  const double n0 = 0.5 * n * (n - 1.0);
  parallel_for(pairs.size(), [&](std::size_t q) {
    auto [a, b] = pairs[q];
    auto c = detail::kendall_counts(ranks[a], ranks[b]);
    T(a, b) = T(b, a) = detail::tau_b(c.S, n0, c.Tx, c.Ty);
  });
  return T;
}

// ---------------------------------------------------------------------------
// Clustering

struct ClusterSpec {
  std::vector<std::vector<int>> blocks;

  int dim() const {
    int d = 0;
    for (auto& b : blocks) d += static_cast<int>(b.size());
    return d;
  }
  std::vector<int> labels() const {
    std::vector<int> lab(dim(), -1);
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (int j : blocks[b]) lab[j] = static_cast<int>(b);
    return lab;
  }
};

inline void validate_clusters(const ClusterSpec& c, Eigen::Index D) {
  require(!c.blocks.empty(), "validate", "cluster specification is empty");
  std::vector<int> seen(D, 0);
  for (auto& b : c.blocks) {
    require(!b.empty(), "validate", "cluster blocks must be non-empty");
    for (int j : b) {
      require(j >= 0 && j < D, "validate", "cluster index out of range");
      require(!seen[j]++, "validate", "cluster blocks must be disjoint");
    }
  }
  for (Eigen::Index j = 0; j < D; ++j) require(seen[j], "validate", "cluster blocks must cover every column");
}

// Ward linkage on d_ij = 1 - tau_ij (Lance-Williams on squared distances).
// Blocks are returned sorted, ordered by smallest member.
inline ClusterSpec ward_cluster(const Matrix& tau, int k) {
  const int D = static_cast<int>(tau.rows());
  require(tau.cols() == D && D >= 1, "validate", "tau must be a square matrix");
  require(k >= 1 && k <= D, "validate", "number of clusters must lie in [1, D]");
  Matrix d2(D, D);
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) d2(i, j) = i == j ? 0.0 : std::pow(1.0 - tau(i, j), 2);
  std::vector<std::vector<int>> members(D);
  for (int i = 0; i < D; ++i) members[i] = {i};
  std::vector<char> alive(D, 1);
  for (int clusters = D; clusters > k; --clusters) {
    int bi = -1, bj = -1;
    double best = kInf;
    for (int i = 0; i < D; ++i) {
      if (!alive[i]) continue;
      for (int j = i + 1; j < D; ++j)
        if (alive[j] && d2(i, j) < best) {
          best = d2(i, j);
          bi = i;
          bj = j;
        }
    }
    const double ni = members[bi].size(), nj = members[bj].size();
    for (int q = 0; q < D; ++q) {
      if (!alive[q] || q == bi || q == bj) continue;
      const double nq = members[q].size();
      const double v = ((ni + nq) * d2(bi, q) + (nj + nq) * d2(bj, q) - nq * d2(bi, bj)) / (ni + nj + nq);
      d2(bi, q) = d2(q, bi) = v;
    }
    members[bi].insert(members[bi].end(), members[bj].begin(), members[bj].end());
    alive[bj] = 0;
  }
  ClusterSpec out;
  for (int i = 0; i < D; ++i)
    if (alive[i]) {
      std::sort(members[i].begin(), members[i].end());
      out.blocks.push_back(members[i]);
    }
  std::sort(out.blocks.begin(), out.blocks.end());
  return out;
}

// ---------------------------------------------------------------------------
// Partial exchangeability test

enum class BetweenClasses { Pooled, PerBlockPair };

struct ExchTestOptions {
  std::size_t n_mc = 10000;
  std::uint64_t seed = 0;
  bool structured_covariance = true;  // orbit-average the jackknife covariance
  BetweenClasses between = BetweenClasses::Pooled;
};

struct ExchTestResult {
  double E_n = kNaN, M_n = kNaN;
  double p_E = kNaN, p_M = kNaN;
  double p_E_chi2 = kNaN;
  int L = 0;   // rank of the structure matrix
  int p = 0;   // number of pairs
  int df = 0;  // p - L
  std::vector<std::string> flags;
};

namespace detail {

inline Matrix sym_power(const Matrix& S, double power, bool* singular) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  const Vector& ev = es.eigenvalues();
  const double floor = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Vector f(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] > floor) {
      f[i] = std::pow(ev[i], power);
    } else {
      f[i] = 0.0;
      if (singular) *singular = true;
    }
  }
  return es.eigenvectors() * f.asDiagonal() * es.eigenvectors().transpose();
}

// Orbit key of a covariance entry between pairs (i,j) and (k,l) under
// within-block permutations: block labels plus the coincidence pattern,
// minimised over the symmetries of the entry.
inline std::vector<int> covariance_orbit_key(int i, int j, int k, int l, const std::vector<int>& lab) {
  std::vector<int> best;
  const std::array<std::array<int, 4>, 8> orders{{{i, j, k, l}, {j, i, k, l}, {i, j, l, k}, {j, i, l, k},
                                                  {k, l, i, j}, {l, k, i, j}, {k, l, j, i}, {l, k, j, i}}};
  for (auto& o : orders) {
    std::vector<int> key;
    std::array<int, 4> first{};
    for (int a = 0; a < 4; ++a) {
      int id = a;
      for (int b = 0; b < a; ++b)
        if (o[b] == o[a]) {
          id = first[b];
          break;
        }
      first[a] = id;
      key.push_back(lab[o[a]]);
      key.push_back(id);
    }
    if (best.empty() || key < best) best = key;
  }
  return best;
}

}  // namespace detail

inline ExchTestResult exch_test(const Matrix& Y, const ClusterSpec& clusters, const ExchTestOptions& opt = {}) {
  const auto n = Y.rows(), D = Y.cols();
  require(D >= 2 && D <= 60, "validate", "exchangeability test needs 2 to 60 columns");
  if (n < 50) throw InvalidArgument("validate", "jackknife covariance needs at least 50 observations");
  require(opt.n_mc >= 1000, "validate", "need at least 1000 Monte Carlo null draws");
  validate_clusters(clusters, D);
  const auto lab = clusters.labels();

  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < D; ++a)
    for (int b = a + 1; b < D; ++b) pairs.push_back({a, b});
  const int p = static_cast<int>(pairs.size());

  std::vector<std::vector<int>> ranks(D);
  for (Eigen::Index j = 0; j < D; ++j) {
    ranks[j] = detail::dense_ranks(Y.col(j).data(), n, 1);
    if (*std::max_element(ranks[j].begin(), ranks[j].end()) == 0)
      throw InvalidArgument("validate", "column " + std::to_string(j) + " is constant; Kendall's tau is undefined");
  }
  // tau and leave-one-out values per pair
  Vector tau(p);
  Matrix loo(n, p);
  const double nn = static_cast<double>(n), n0 = 0.5 * nn * (nn - 1), n0m = 0.5 * (nn - 1) * (nn - 2);
  parallel_for(pairs.size(), [&](std::size_t q) {
    auto [a, b] = pairs[q];
    auto c = detail::kendall_counts(ranks[a], ranks[b]);
    tau[q] = detail::tau_b(c.S, n0, c.Tx, c.Ty);
    for (Eigen::Index k = 0; k < n; ++k)
      loo(k, q) = detail::tau_b(c.S - c.s[k], n0m, c.Tx - c.tx[k], c.Ty - c.ty[k]);
  });
  Matrix centered = loo.rowwise() - loo.colwise().mean();
  Matrix cov = (nn - 1) / nn * (centered.transpose() * centered);

  ExchTestResult out;
  out.p = p;
  if (opt.structured_covariance) {
    std::map<std::vector<int>, std::pair<double, int>> acc;
    std::vector<std::vector<int>> keys(static_cast<std::size_t>(p) * p);
    for (int q = 0; q < p; ++q)
      for (int r = q; r < p; ++r) {
        auto key = detail::covariance_orbit_key(pairs[q].first, pairs[q].second, pairs[r].first, pairs[r].second, lab);
        auto& slot = acc[key];
        slot.first += cov(q, r);
        ++slot.second;
        keys[q * p + r] = std::move(key);
      }
    for (int q = 0; q < p; ++q)
      for (int r = q; r < p; ++r) {
        auto& slot = acc[keys[q * p + r]];
        cov(q, r) = cov(r, q) = slot.first / slot.second;
      }
  }

  // structure matrix: one column per within-block class plus between classes
  std::map<std::pair<int, int>, int> cls;
  std::vector<int> pair_class(p);
  for (int q = 0; q < p; ++q) {
    int la = lab[pairs[q].first], lb = lab[pairs[q].second];
    if (la > lb) std::swap(la, lb);
    std::pair<int, int> key = la == lb ? std::pair{la, la}
                              : opt.between == BetweenClasses::Pooled ? std::pair{-1, -1}
                                                                      : std::pair{la, lb};
    auto it = cls.try_emplace(key, static_cast<int>(cls.size())).first;
    pair_class[q] = it->second;
  }
  Matrix B = Matrix::Zero(p, static_cast<Eigen::Index>(cls.size()));
  for (int q = 0; q < p; ++q) B(q, pair_class[q]) = 1.0;
  out.L = static_cast<int>(cls.size());
  out.df = p - out.L;
  // B has disjoint indicator columns: B B^+ averages within classes
  Matrix P = Matrix::Identity(p, p) - B * (B.transpose() * B).inverse() * B.transpose();

  Matrix Sigma = nn * cov;
  bool singular = false;
  Matrix S_mhalf = detail::sym_power(Sigma, -0.5, &singular);
  Matrix S_half = detail::sym_power(Sigma, 0.5, nullptr);
  Matrix S_inv = detail::sym_power(Sigma, -1.0, nullptr);
  if (singular) out.flags.push_back("singular_covariance_pseudo_inverse");
  const Vector d = std::sqrt(nn) * (P * tau);
  out.E_n = (S_mhalf * d).norm();
  out.M_n = (S_inv * d).cwiseAbs().maxCoeff();

  // null: Z = Sigma^{-1/2} P Sigma^{1/2} G; M-type null Sigma^{-1/2} Z
  const Matrix A = S_mhalf * P * S_half;
  const Matrix Am = S_mhalf * A;
  const std::size_t blocks = std::min<std::size_t>(64, opt.n_mc);
  std::vector<std::size_t> geE(blocks, 0), geM(blocks, 0);
  const double tolE = out.E_n * (1 - 1e-12), tolM = out.M_n * (1 - 1e-12);
  parallel_for(blocks, [&](std::size_t b) {
    RandomStream rng(opt.seed, b);
    Vector g(p);
    for (std::size_t s = opt.n_mc * b / blocks; s < opt.n_mc * (b + 1) / blocks; ++s) {
      for (int q = 0; q < p; ++q) g[q] = rng.normal();
      geE[b] += (A * g).norm() >= tolE;
      geM[b] += (Am * g).cwiseAbs().maxCoeff() >= tolM;
    }
  });
  const double cE = std::accumulate(geE.begin(), geE.end(), 0.0), cM = std::accumulate(geM.begin(), geM.end(), 0.0);
  out.p_E = (cE + 1) / (opt.n_mc + 1.0);
  out.p_M = (cM + 1) / (opt.n_mc + 1.0);
  if (out.df > 0)
    out.p_E_chi2 = boost::math::cdf(boost::math::complement(boost::math::chi_squared(out.df), out.E_n * out.E_n));
  else
    out.p_E_chi2 = 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Subset chi cross-validation

enum class ChiModel { Logistic, HuslerReiss, HeffernanTawn };

inline ChiModel parse_chi_model(const std::string& s) {
  if (s == "logistic") return ChiModel::Logistic;
  if (s == "hr" || s == "husler_reiss") return ChiModel::HuslerReiss;
  if (s == "ht" || s == "heffernan_tawn") return ChiModel::HeffernanTawn;
  throw InvalidArgument("validate", "unknown model '" + s + "' (expected logistic, hr or ht)");
}

// Model-implied chi of dimension k from training data on uniform scale.
using ChiFitter = std::function<double(const Matrix& train_uniform, double u, int k)>;

namespace detail {

inline Matrix uniform_to_frechet(const Matrix& U) { return (-1.0 / U.array().log()).matrix(); }

inline Matrix uniform_to_laplace(const Matrix& U) {
  Matrix L(U.rows(), U.cols());
  const auto lap = MarginSpec::laplace();
  for (Eigen::Index i = 0; i < U.size(); ++i) L.data()[i] = lap.quantile(U.data()[i]);
  return L;
}

// P(all k-1 others exceed v | conditioning variable above v) under the fitted
// skew-normal model with conditionally independent residual components.
inline double ht_chi_monte_carlo(const HtParams& p, double v, int k, std::size_t N, std::uint64_t seed) {
  const auto law = std::get<SkewNormalResidualLaw>(p.law);
  const double a = p.alpha[0], b = p.beta[0];
  const double d = law.kappa / std::sqrt(1 + law.kappa * law.kappa);
  const std::size_t blocks = std::min<std::size_t>(64, N);
  std::vector<std::size_t> hits(blocks, 0);
  parallel_for(blocks, [&](std::size_t blk) {
    RandomStream rng(seed, blk);
    for (std::size_t s = N * blk / blocks; s < N * (blk + 1) / blocks; ++s) {
      const double l0 = v + rng.exponential();
      bool all = true;
      for (int c = 0; c < k - 1 && all; ++c) {
        const double z = law.mu + law.sigma * (d * std::abs(rng.normal()) + std::sqrt(1 - d * d) * rng.normal());
        all = a * l0 + std::pow(l0, b) * z > v;
      }
      hits[blk] += all;
    }
  });
  return std::accumulate(hits.begin(), hits.end(), 0.0) / N;
}

}  // namespace detail

inline ChiFitter chi_fitter(ChiModel model, std::size_t mc_draws = 1000000, std::uint64_t seed = 0) {
  return [=](const Matrix& U, double u, int k) -> double {
    if (model == ChiModel::HeffernanTawn) {
      const double v = MarginSpec::laplace().quantile(u);
      HtFitOptions o;
      o.threshold = v;
      auto p = fit_ht_exchangeable_skewnormal(detail::uniform_to_laplace(U), o);
      return detail::ht_chi_monte_carlo(p, v, k, mc_draws, seed);
    }
    const Matrix Y = detail::uniform_to_frechet(U);
    const Vector thr = Vector::Constant(Y.cols(), -1.0 / std::log(u));
    if (model == ChiModel::Logistic) {
      auto f = fit_logistic_censored(Y, thr, thr);
      if (!f.converged) throw ComputationError("validate", "logistic fit did not converge");
      return model_chi(MgpdModel::logistic(f.estimate), k).value;
    }
    auto f = fit_hr_exchangeable(Y, thr, thr);
    if (!f.converged) throw ComputationError("validate", "Husler-Reiss fit did not converge");
    return model_chi(MgpdModel::husler_reiss_exchangeable(k, f.estimate), k).value;
  };
}

struct CvScore {
  double l2 = kNaN;
  std::size_t subsets = 0;
  std::size_t failed = 0;
};

// U: cluster data on uniform scale. For every k-subset the empirical chi is
// compared with the model chi fitted on the remaining m-k columns.
inline CvScore subset_chi_cv(const Matrix& U, int k, double u, const ChiFitter& fitter) {
  const int m = static_cast<int>(U.cols());
  require(k >= 2 && m > k, "validate", "need cluster size m > k >= 2");
  require(u > 0 && u < 1, "validate", "level must lie in (0,1)");
  require(detail::choose(m, k) <= 1e5, "validate", "too many subsets (limit 1e5)");
  std::vector<std::vector<int>> subsets;
  detail::for_each_combination(m, k, [&](std::span<const int> c) { subsets.emplace_back(c.begin(), c.end()); });
  std::vector<double> sq(subsets.size(), 0.0);
  std::vector<char> ok(subsets.size(), 0);
  parallel_for(subsets.size(), [&](std::size_t s) {
    const auto& S = subsets[s];
    std::vector<int> rest;
    for (int j = 0; j < m; ++j)
      if (!std::binary_search(S.begin(), S.end(), j)) rest.push_back(j);
    std::size_t cnt = 0;
    for (Eigen::Index i = 0; i < U.rows(); ++i) {
      bool all = true;
      for (int j : S) all = all && U(i, j) > u;
      cnt += all;
    }
    const double emp = cnt / (U.rows() * (1 - u));
    Matrix train(U.rows(), rest.size());
    for (std::size_t c = 0; c < rest.size(); ++c) train.col(c) = U.col(rest[c]);
    try {
      const double model = fitter(train, u, k);
      if (!std::isfinite(model)) return;
      sq[s] = (emp - model) * (emp - model);
      ok[s] = 1;
    } catch (const std::exception&) {
    }
  });
  CvScore out;
  double total = 0.0;
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    if (ok[s]) {
      total += sq[s];
      ++out.subsets;
    } else {
      ++out.failed;
    }
  }
  if (out.subsets) out.l2 = std::sqrt(total) / out.subsets;
  return out;
}

// ---------------------------------------------------------------------------
// omega2: joint exceedance at unequal levels given the maximum exceeds t

inline void check_omega2_levels(double u1, double u2, double t) {
  for (double v : {u1, u2, t}) require(v > 0 && v < 1, "validate", "levels must lie in (0,1)");
}

inline double omega2_empirical(const Matrix& U, double u1, double u2, double t) {
  require(U.cols() == 2, "validate", "omega2 needs two columns");
  check_omega2_levels(u1, u2, t);
  std::size_t joint = 0, mx = 0;
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    joint += U(i, 0) > u1 && U(i, 1) > u2;
    mx += std::max(U(i, 0), U(i, 1)) > t;
  }
  if (mx == 0) throw InvalidArgument("validate", "no observations with maximum above t");
  return static_cast<double>(joint) / mx;
}

// Xi/V with levels mapped to unit-Frechet scale x = -1/log(u).
inline double omega2_model(const MgpdModel& m, double u1, double u2, double t) {
  check_omega2_levels(u1, u2, t);
  Vector x(2), xt(2);
  x << -1 / std::log(u1), -1 / std::log(u2);
  xt.setConstant(-1 / std::log(t));
  return xi_measure(m, x).value / exponent_measure_v(m, xt).value;
}

// Conditional-extremes version on Laplace scale: the second variable is
// drawn above its level, the first follows alpha y + y^beta Z with Z from the
// residual pool. The denominator uses the same scheme at level t.
inline double omega2_ht(const HtParams& p, double u1, double u2, double t, std::size_t N, std::uint64_t seed) {
  check_omega2_levels(u1, u2, t);
  require(p.residual_pool.rows() > 0, "validate", "residual pool is empty");
  require(N >= 1, "validate", "need at least one simulation");
  const auto lap = MarginSpec::laplace();
  auto cond = [&](double lo, double cond_level, std::uint64_t stream) {
    const double v = lap.quantile(cond_level), w = lap.quantile(lo);
    const std::size_t blocks = std::min<std::size_t>(64, N);
    std::vector<std::size_t> hits(blocks, 0);
    parallel_for(blocks, [&](std::size_t b) {
      RandomStream rng(seed, stream * 64 + b);
      for (std::size_t s = N * b / blocks; s < N * (b + 1) / blocks; ++s) {
        const double y2 = v + rng.exponential();
        const double z = p.residual_pool(rng.below(p.residual_pool.rows()), 0);
        hits[b] += p.alpha[0] * y2 + std::pow(y2, p.beta[0]) * z > w;
      }
    });
    return std::accumulate(hits.begin(), hits.end(), 0.0) / N;
  };
  const double num = (1 - u2) * cond(u1, u2, 0);
  const double both_t = (1 - t) * cond(t, t, 1);
  return num / (2 * (1 - t) - both_t);
}

// ---------------------------------------------------------------------------
// Threshold stability

using DependenceFitter = std::function<DependenceFit(const Matrix& Y, const Vector& u, const Vector& censor)>;

struct StabilityRow {
  double level = kNaN;
  double threshold = kNaN;
  DependenceFit fit;
  double lower = kNaN, upper = kNaN;
  bool ok = false;
  std::string error;
};

// Y on unit-Frechet scale; each level q is mapped to threshold -1/log(q) and
// used as both exceedance and censoring level.
inline std::vector<StabilityRow> threshold_stability_scan(const Matrix& Y, const std::vector<double>& levels,
                                                          const DependenceFitter& fitter) {
  require(!levels.empty(), "validate", "need at least one level");
  for (double q : levels) require(q > 0.5 && q < 0.999, "validate", "levels must lie in (0.5, 0.999)");
  std::vector<StabilityRow> rows(levels.size());
  for (std::size_t l = 0; l < levels.size(); ++l) {
    auto& r = rows[l];
    r.level = levels[l];
    r.threshold = -1.0 / std::log(levels[l]);
    const Vector thr = Vector::Constant(Y.cols(), r.threshold);
    try {
      r.fit = fitter(Y, thr, thr);
      r.lower = r.fit.estimate - 1.96 * r.fit.se;
      r.upper = r.fit.estimate + 1.96 * r.fit.se;
      r.ok = std::isfinite(r.fit.estimate);
    } catch (const std::exception& e) {
      r.error = e.what();
    }
  }
  return rows;
}

}  // namespace extremis
