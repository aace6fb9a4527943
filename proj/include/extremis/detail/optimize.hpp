#pragma once
// Derivative-free simplex search followed by a quasi-Newton polish with
// finite-difference gradients. Objectives return +inf outside their domain.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace extremis::detail {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct OptimOptions {
  int max_evals = 10000;
  double ftol = 1e-10;
  double gtol = 1e-6;
  bool simplex = true;
  bool polish = true;
  Eigen::VectorXd initial_step;  // empty -> 10% of |x0| or 0.1
};

struct OptimResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

class CountingObjective {
 public:
  CountingObjective(const Objective& f, int budget) : f_(f), budget_(budget) {}
  double operator()(const Eigen::VectorXd& x) {
    ++count_;
    double v = f_(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  }
  int count() const { return count_; }
  bool exhausted() const { return count_ >= budget_; }

 private:
  const Objective& f_;
  int budget_;
  int count_ = 0;
};

inline OptimResult nelder_mead(CountingObjective& f, const Eigen::VectorXd& x0,
                               const Eigen::VectorXd& step, double ftol) {
  const int n = static_cast<int>(x0.size());
  std::vector<Eigen::VectorXd> pts(n + 1, x0);
  std::vector<double> val(n + 1);
  val[0] = f(x0);
  for (int i = 0; i < n; ++i) {
    pts[i + 1][i] += step[i];
    val[i + 1] = f(pts[i + 1]);
    if (!std::isfinite(val[i + 1])) {
      pts[i + 1][i] = x0[i] - step[i];
      val[i + 1] = f(pts[i + 1]);
    }
  }
  std::vector<int> order(n + 1);
  OptimResult res;
  while (!f.exhausted()) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return val[a] < val[b]; });
    const int best = order[0], worst = order[n], second = order[n - 1];
    const double spread = std::abs(val[worst] - val[best]);
    if (std::isfinite(val[worst]) &&
        spread <= ftol * (std::abs(val[best]) + std::abs(val[worst]) + 1e-300)) {
      double size = 0.0;
      for (int i = 0; i <= n; ++i) size = std::max(size, (pts[i] - pts[best]).cwiseAbs().maxCoeff());
      if (size < 1e-8 * (1.0 + pts[best].cwiseAbs().maxCoeff()) || spread <= 1e-14) {
        res.converged = true;
        break;
      }
      if (spread == 0.0) {
        res.converged = true;
        break;
      }
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += pts[i];
    centroid /= n;
    Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
    double fr = f(xr);
    if (fr < val[best]) {
      Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      double fe = f(xe);
      if (fe < fr) {
        pts[worst] = xe;
        val[worst] = fe;
      } else {
        pts[worst] = xr;
        val[worst] = fr;
      }
      continue;
    }
    if (fr < val[second]) {
      pts[worst] = xr;
      val[worst] = fr;
      continue;
    }
    const bool outside = fr < val[worst];
    Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                 : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
    double fc = f(xc);
    if (fc < std::min(fr, val[worst])) {
      pts[worst] = xc;
      val[worst] = fc;
      continue;
    }
    for (int i = 0; i <= n; ++i) {
      if (i == best) continue;
      pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
      val[i] = f(pts[i]);
    }
  }
  int best = static_cast<int>(std::min_element(val.begin(), val.end()) - val.begin());
  res.x = pts[best];
  res.value = val[best];
  return res;
}

inline double fd_step(double x) { return 1e-6 * std::max(1.0, std::abs(x)); }

inline Eigen::VectorXd fd_gradient(CountingObjective& f, const Eigen::VectorXd& x, double fx) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = fd_step(x[i]);
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fp = f(xp), fm = f(xm);
    if (std::isfinite(fp) && std::isfinite(fm))
      g[i] = (fp - fm) / (2 * h);
    else if (std::isfinite(fp))
      g[i] = (fp - fx) / h;
    else if (std::isfinite(fm))
      g[i] = (fx - fm) / h;
    else
      g[i] = 0.0;
  }
  return g;
}

inline OptimResult bfgs(CountingObjective& f, const Eigen::VectorXd& x0, double gtol) {
  const auto n = x0.size();
  OptimResult res;
  Eigen::VectorXd x = x0;
  double fx = f(x);
  if (!std::isfinite(fx)) {
    res.x = x;
    res.value = fx;
    res.message = "non-finite objective at start";
    return res;
  }
  Eigen::VectorXd g = fd_gradient(f, x, fx);
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  for (int iter = 0; iter < 500 && !f.exhausted(); ++iter) {
    const double scale = 1.0 + std::abs(fx);
    if (g.cwiseAbs().maxCoeff() <= gtol * scale) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd d = -H * g;
    if (g.dot(d) >= 0) {
      H.setIdentity();
      d = -g;
    }
    double t = 1.0, ft = 0.0;
    Eigen::VectorXd xt;
    bool accepted = false;
    for (int k = 0; k < 40; ++k) {
      xt = x + t * d;
      ft = f(xt);
      if (std::isfinite(ft) && ft <= fx + 1e-4 * t * g.dot(d)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (H.isIdentity()) {
        res.converged = std::abs(g.cwiseAbs().maxCoeff()) <= 1e-3 * scale;
        res.message = "line search stalled";
        break;
      }
      H.setIdentity();
      continue;
    }
    Eigen::VectorXd gt = fd_gradient(f, xt, ft);
    Eigen::VectorXd s = xt - x, y = gt - g;
    const double sy = s.dot(y);
    const double df = fx - ft;
    x = xt;
    fx = ft;
    g = gt;
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    if (df >= 0 && df <= 1e-14 * scale && s.cwiseAbs().maxCoeff() < 1e-10 * (1 + x.cwiseAbs().maxCoeff())) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.value = fx;
  return res;
}

// Simplex search (with one restart at the optimum) then BFGS polish.
inline OptimResult minimize(const Objective& objective, const Eigen::VectorXd& x0,
                            const OptimOptions& opt = {}) {
  CountingObjective f(objective, opt.max_evals);
  Eigen::VectorXd step = opt.initial_step;
  if (step.size() != x0.size()) {
    step.resize(x0.size());
    for (Eigen::Index i = 0; i < x0.size(); ++i) step[i] = std::abs(x0[i]) > 1e-3 ? 0.1 * std::abs(x0[i]) : 0.1;
  }
  OptimResult res;
  res.x = x0;
  res.value = f(x0);
  if (opt.simplex) {
    res = nelder_mead(f, x0, step, opt.ftol);
    if (!f.exhausted()) {
      Eigen::VectorXd step2 = step * 0.1;
      OptimResult again = nelder_mead(f, res.x, step2, opt.ftol);
      if (again.value <= res.value) res = again;
    }
  }
  if (opt.polish && std::isfinite(res.value) && !f.exhausted()) {
    OptimResult polished = bfgs(f, res.x, opt.gtol);
    if (polished.value <= res.value) {
      res.x = polished.x;
      res.value = polished.value;
      res.converged = polished.converged || res.converged;
    }
  }
  res.evaluations = f.count();
  if (!std::isfinite(res.value)) {
    res.converged = false;
    res.message = "objective not finite at any evaluated point";
  } else if (f.exhausted() && !res.converged) {
    res.message = "evaluation budget exhausted";
  }
  return res;
}

// A few damped Newton steps using finite-difference derivatives; used after
// the quasi-Newton stage to drive the gradient to round-off level.
inline Eigen::VectorXd newton_polish(const Objective& f, Eigen::VectorXd x, int iterations = 4);

// Central-difference Hessian; steps shrink toward the interior when a
// neighbouring point leaves the domain.
inline Eigen::MatrixXd numerical_hessian(const Objective& f, const Eigen::VectorXd& x,
                                         double rel_step = 1e-4) {
  const auto n = x.size();
  Eigen::VectorXd h(n);
  for (Eigen::Index i = 0; i < n; ++i) h[i] = rel_step * std::max(1.0, std::abs(x[i]));
  const double f0 = f(x);
  Eigen::MatrixXd H(n, n);
  auto at = [&](Eigen::Index i, double di, Eigen::Index j, double dj) {
    Eigen::VectorXd y = x;
    y[i] += di;
    y[j] += dj;
    return f(y);
  };
  for (int attempt = 0; attempt < 6; ++attempt) {
    bool finite = true;
    for (Eigen::Index i = 0; i < n && finite; ++i) {
      const double fp = at(i, h[i], i, 0.0), fm = at(i, -h[i], i, 0.0);
      H(i, i) = (fp - 2 * f0 + fm) / (h[i] * h[i]);
      finite = std::isfinite(H(i, i));
      for (Eigen::Index j = 0; j < i && finite; ++j) {
        const double v = (at(i, h[i], j, h[j]) - at(i, h[i], j, -h[j]) - at(i, -h[i], j, h[j]) +
                          at(i, -h[i], j, -h[j])) /
                         (4 * h[i] * h[j]);
        H(i, j) = H(j, i) = v;
        finite = std::isfinite(v);
      }
    }
    if (finite) return H;
    h *= 0.1;
  }
  return Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
}

// Inverse of a Hessian when it is positive definite, empty otherwise.
inline Eigen::MatrixXd inverse_information(const Eigen::MatrixXd& H) {
  if (!H.allFinite()) return {};
  Eigen::MatrixXd S = 0.5 * (H + H.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) return {};
  Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(S.rows(), S.cols()));
  return 0.5 * (inv + inv.transpose());
}

// Brent's bounded scalar minimization.
inline double brent_minimize(const std::function<double(double)>& f, double a, double b,
                             double tol = 1e-10, int max_iter = 200) {
  const double golden = 0.3819660112501051;
  double x = a + golden * (b - a), w = x, v = x;
  double fx = f(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    const double m = 0.5 * (a + b);
    const double tol1 = tol * std::abs(x) + 1e-12, tol2 = 2 * tol1;
    if (std::abs(x - m) <= tol2 - 0.5 * (b - a)) break;
    bool golden_step = true;
    if (std::abs(e) > tol1) {
      double r = (x - w) * (fx - fv), q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2 * (q - r);
      if (q > 0) p = -p;
      q = std::abs(q);
      if (std::abs(p) < std::abs(0.5 * q * e) && p > q * (a - x) && p < q * (b - x)) {
        e = d;
        d = p / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = x < m ? tol1 : -tol1;
        golden_step = false;
      }
    }
    if (golden_step) {
      e = (x < m ? b : a) - x;
      d = golden * e;
    }
    const double u = x + (std::abs(d) >= tol1 ? d : (d > 0 ? tol1 : -tol1));
    const double fu = f(u);
    if (fu <= fx) {
      (u < x ? b : a) = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      (u < x ? a : b) = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  return x;
}

// Root of an increasing-or-decreasing f on [a,b] with f(a), f(b) of opposite sign.
inline double bisect(const std::function<double(double)>& f, double a, double b, double xtol,
                     int max_iter = 400) {
  double fa = f(a);
  for (int i = 0; i < max_iter && b - a > xtol; ++i) {
    const double m = 0.5 * (a + b);
    const double fm = f(m);
    if (fm == 0.0) return m;
    if ((fm < 0) == (fa < 0)) {
      a = m;
      fa = fm;
    } else {
      b = m;
    }
  }
  return 0.5 * (a + b);
}

inline Eigen::VectorXd newton_polish(const Objective& f, Eigen::VectorXd x, int iterations) {
  double fx = f(x);
  if (!std::isfinite(fx)) return x;
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(x[i]));
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      g[i] = (f(xp) - f(xm)) / (2 * h);
    }
    if (!g.allFinite()) return x;
    Eigen::MatrixXd H = numerical_hessian(f, x);
    if (!H.allFinite()) return x;
    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (H + H.transpose()));
    if (llt.info() != Eigen::Success) return x;
    Eigen::VectorXd step = llt.solve(g);
    double t = 1.0;
    bool moved = false;
    for (int k = 0; k < 20; ++k) {
      Eigen::VectorXd xt = x - t * step;
      const double ft = f(xt);
      if (std::isfinite(ft) && ft <= fx) {
        x = xt;
        fx = ft;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved || step.cwiseAbs().maxCoeff() < 1e-12 * (1.0 + x.cwiseAbs().maxCoeff())) break;
  }
  return x;
}

}  // namespace extremis::detail
