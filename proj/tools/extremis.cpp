// extremis command-line front end.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <unistd.h>

#include "extremis/extremis.hpp"

using namespace extremis;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Plumbing

struct Common {
  std::string input;
  std::string margins;
  std::string columns;
  std::uint64_t seed = 1;
  int threads = 0;
  std::string out;
  std::string format = "json";
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

json nums(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v[i]));
  return a;
}

json nums(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

json matrix_json(const Matrix& M) {
  json a = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) a.push_back(nums(Vector(M.row(i).transpose())));
  return a;
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  for (auto& p : split(s, sep)) out.push_back(trim(p));
  return out;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw UsageError("not a number: '" + s + "'");
  return v;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (auto& p : split_list(s)) out.push_back(parse_double(p));
  return out;
}

Vector to_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), v.size()); }

// "0,1,2;3,4" -> groups of column positions
std::vector<std::vector<int>> parse_groups(const std::string& s) {
  std::vector<std::vector<int>> out;
  for (auto& g : split(s, ';')) {
    out.push_back({});
    for (auto& p : split_list(g)) out.back().push_back(static_cast<int>(parse_double(p)));
  }
  return out;
}

Matrix parse_matrix(const std::string& s) {
  auto rows = split(s, ';');
  Matrix M(rows.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto r = parse_doubles(rows[i]);
    if (r.size() != rows.size()) throw UsageError("matrix rows must have " + std::to_string(rows.size()) + " entries");
    for (std::size_t j = 0; j < r.size(); ++j) M(i, j) = r[j];
  }
  return M;
}

std::string checksum_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  char buf[65536];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string timestamp() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw InvalidArgument("cli", "cannot write '" + tmp + "'");
    f << content;
    if (!f.flush()) throw ComputationError("cli", "write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw ComputationError("cli", "cannot rename into '" + path + "': " + ec.message());
  }
}

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<json>> rows;

  json to_json() const {
    json a = json::array();
    for (auto& r : rows) {
      json o = json::object();
      for (std::size_t c = 0; c < columns.size(); ++c) o[columns[c]] = r[c];
      a.push_back(o);
    }
    return a;
  }
  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "," : "") << columns[c];
    os << '\n';
    for (auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) {
        if (c) os << ',';
        if (r[c].is_number_float()) os << r[c].get<double>();
        else if (r[c].is_string()) os << r[c].get<std::string>();
        else os << r[c].dump();
      }
      os << '\n';
    }
    return os.str();
  }
};

struct Output {
  json result = json::object();
  std::optional<Table> table;
};

json manifest(const std::string& command, const Common& c, const std::vector<std::string>& args) {
  json m;
  m["tool"] = "extremis";
  m["version"] = kToolVersion;
  m["command"] = command;
  m["arguments"] = args;
  m["input"] = c.input.empty() ? json(nullptr) : json(c.input);
  m["input_checksum_fnv1a64"] = c.input.empty() ? json(nullptr) : json(checksum_file(c.input));
  m["seed"] = c.seed;
  m["threads"] = max_threads();
  m["timestamp"] = timestamp();
  return m;
}

void emit(const std::string& command, const Common& c, const std::vector<std::string>& args, Output o) {
  if (o.table) o.result["table"] = o.table->to_json();
  json doc;
  doc["command"] = command;
  doc["seed"] = c.seed;
  doc["result"] = o.result;
  doc["manifest"] = manifest(command, c, args);
  std::string payload;
  if (c.format == "csv") {
    if (!o.table) throw UsageError("command '" + command + "' has no tabular output; use --format json");
    payload = o.table->to_csv();
    std::cerr << doc["manifest"].dump(2) << '\n';
  } else {
    payload = doc.dump(2) + "\n";
  }
  if (c.out.empty()) std::cout << payload;
  else write_atomic(c.out, payload);
}

// ---------------------------------------------------------------------------
// Data access

Dataset load(const Common& c) {
  if (c.input.empty()) throw UsageError("--input is required");
  Dataset ds = read_csv_file(c.input);
  if (!c.columns.empty()) {
    std::vector<Eigen::Index> idx;
    for (auto& name : split_list(c.columns)) {
      auto it = std::find(ds.names.begin(), ds.names.end(), name);
      if (it != ds.names.end()) idx.push_back(it - ds.names.begin());
      else {
        const double v = parse_double(name);
        if (v < 0 || v >= ds.cols()) throw UsageError("column '" + name + "' not found");
        idx.push_back(static_cast<Eigen::Index>(v));
      }
    }
    Dataset sub;
    sub.values.resize(ds.rows(), idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      sub.values.col(k) = ds.values.col(idx[k]);
      sub.names.push_back(ds.names[idx[k]]);
    }
    ds = std::move(sub);
  }
  auto ms = split_list(c.margins);
  if (ms.size() == 1) ds.margins.assign(ds.cols(), parse_margin(ms[0]));
  else if (!ms.empty()) {
    if (static_cast<Eigen::Index>(ms.size()) != ds.cols()) throw UsageError("--margins needs one entry or one per column");
    for (auto& m : ms) ds.margins.push_back(parse_margin(m));
  }
  ds.validate();
  return ds;
}

// Values on a standard scale: declared margins when given, ranks otherwise.
Matrix on_scale(const Dataset& ds, const MarginSpec& target) {
  if (!ds.margins.empty()) return ds.on_scale(target);
  Matrix out(ds.rows(), ds.cols());
  for (Eigen::Index j = 0; j < ds.cols(); ++j) {
    auto r = rank_transform(ds.column(j));
    for (Eigen::Index i = 0; i < ds.rows(); ++i) out(i, j) = target.quantile(r[i]);
  }
  return out;
}

std::vector<double> column_of(const Dataset& ds, const std::string& name) {
  return ds.column(name.empty() ? 0 : ds.index_of(name));
}

MgpdModel build_model(const std::string& family, double param, double df, int D) {
  if (family == "logistic") return MgpdModel::logistic(param);
  if (family == "neg_logistic" || family == "negative_logistic") return MgpdModel::neg_logistic(param);
  if (family == "hr" || family == "husler_reiss") return MgpdModel::husler_reiss_exchangeable(D, param);
  if (family == "student" || family == "extremal_student") return MgpdModel::extremal_student_exchangeable(D, param, df);
  throw UsageError("unknown family '" + family + "' (logistic, neg_logistic, hr, student)");
}

json fit_json(const DependenceFit& f) {
  json o;
  o["family"] = f.family;
  o["estimate"] = num(f.estimate);
  o["se"] = num(f.se);
  o["loglik"] = num(f.loglik);
  o["n_exceed"] = f.n_exceed;
  o["dropped_all_censored"] = f.dropped_all_censored;
  o["converged"] = f.converged;
  o["flags"] = f.flags;
  return o;
}

json ht_json(const HtParams& p) {
  json o;
  o["alpha"] = nums(p.alpha);
  o["beta"] = nums(p.beta);
  o["alpha_se"] = nums(p.alpha_se);
  o["beta_se"] = nums(p.beta_se);
  if (auto* g = std::get_if<GaussianResidualLaw>(&p.law)) {
    o["residual_law"] = {{"kind", "gaussian"}, {"mu", nums(g->mu)}, {"sigma", nums(g->sigma)}};
  } else {
    auto& s = std::get<SkewNormalResidualLaw>(p.law);
    o["residual_law"] = {{"kind", "skew_normal"}, {"mu", num(s.mu)}, {"sigma", num(s.sigma)}, {"kappa", num(s.kappa)}};
  }
  o["threshold_laplace"] = num(p.u);
  o["conditioning"] = p.conditioning;
  o["residual_pool_size"] = p.residual_pool.rows();
  o["loglik"] = num(p.loglik);
  o["converged"] = p.converged;
  o["flags"] = p.flags;
  return o;
}

// ---------------------------------------------------------------------------
// Univariate commands

struct UniOpts {
  std::string response;
  double threshold = kNaN;
  double threshold_quantile = 0.95;
  std::string threshold_column;
  std::string sigma_cov, xi_cov, threshold_cov;
  double fix_xi = kNaN;
  double tau = 0.95;
  double T = 200, ny = 300;
  std::string convention = "annual";
  bool ci = false;
  std::string models = "model1";
  int repeats = 10, draws = 1000;
  double alpha = 0.5;
  std::string weights;
  std::string save_thresholds;
  std::string predict;
  double target_prob = 0.9999;
  int bootstrap = 100;
  std::string bootstrap_kind = "bayesian";
};

std::vector<double> thresholds_for(const Dataset& ds, const std::vector<double>& y, const UniOpts& o) {
  if (!o.threshold_column.empty()) return column_of(ds, o.threshold_column);
  const double u = std::isfinite(o.threshold) ? o.threshold : sample_quantile(y, o.threshold_quantile);
  return std::vector<double>(y.size(), u);
}

Output cmd_fit_gpd(const Common& c, const UniOpts& o) {
  auto ds = load(c);
  auto y = column_of(ds, o.response);
  auto u = thresholds_for(ds, y, o);
  Output out;
  out.result["zeta_u"] = exceedance_fraction(y, u);
  if (o.sigma_cov.empty() && o.xi_cov.empty()) {
    std::vector<double> ex;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] > u[i]) ex.push_back(y[i] - u[i]);
    auto f = fit_gpd_mle(ex, std::isfinite(o.fix_xi) ? std::optional<double>(o.fix_xi) : std::nullopt);
    out.result["sigma"] = num(f.params.sigma);
    out.result["xi"] = num(f.params.xi);
    out.result["cov"] = matrix_json(f.cov);
    out.result["loglik"] = num(f.loglik);
    out.result["n_exceed"] = f.n;
    out.result["converged"] = f.converged;
    out.result["flags"] = f.flags;
    return out;
  }
  RegressionSpec spec{"custom", split_list(o.sigma_cov), split_list(o.xi_cov)};
  auto f = fit_gpd_regression(ds.values, ds.names, y, u, spec);
  out.result["beta_sigma"] = nums(f.beta_sigma);
  out.result["beta_xi"] = nums(f.beta_xi);
  out.result["sigma_columns"] = f.sigma_columns;
  out.result["xi_columns"] = f.xi_columns;
  out.result["cov"] = matrix_json(f.cov);
  out.result["loglik"] = num(f.loglik);
  out.result["n_exceed"] = f.n_exceed;
  out.result["converged"] = f.converged;
  out.result["flags"] = f.flags;
  return out;
}

Matrix design_for(const Dataset& ds, const std::vector<std::string>& cols) {
  return design_with_intercept(ds.values, resolve_columns(cols, ds.names));
}

Output cmd_fit_threshold(const Common& c, const UniOpts& o) {
  auto ds = load(c);
  auto y = column_of(ds, o.response);
  auto cols = split_list(o.threshold_cov);
  auto X = design_for(ds, cols);
  std::vector<std::string> names{"(intercept)"};
  names.insert(names.end(), cols.begin(), cols.end());
  auto f = fit_ald(X, y, o.tau, names);
  Output out;
  out.result["tau"] = f.tau;
  out.result["columns"] = names;
  out.result["beta_eta"] = nums(f.beta_eta);
  out.result["log_nu"] = num(f.log_nu);
  out.result["cov"] = matrix_json(f.cov);
  out.result["check_loss"] = num(f.check_loss);
  Vector fitted = X * f.beta_eta;
  out.result["exceedance_fraction"] = exceedance_fraction(y, std::vector<double>(fitted.data(), fitted.data() + fitted.size()));
  if (!o.save_thresholds.empty()) {
    Matrix M(ds.rows(), ds.cols() + 1);
    M << ds.values, fitted;
    auto nm = ds.names;
    nm.push_back("threshold");
    std::ostringstream os;
    write_csv(os, M, nm);
    write_atomic(o.save_thresholds, os.str());
    out.result["thresholds_file"] = o.save_thresholds;
  }
  return out;
}

ReturnConvention convention(const std::string& s) {
  if (s == "annual") return ReturnConvention::AnnualMaximum;
  if (s == "rate") return ReturnConvention::ExceedanceRate;
  throw UsageError("--convention must be annual or rate");
}

Output cmd_return_level(const Common& c, const UniOpts& o) {
  auto ds = load(c);
  auto y = column_of(ds, o.response);
  auto u = thresholds_for(ds, y, o);
  if (!o.threshold_column.empty()) throw UsageError("return-level uses a constant threshold");
  std::vector<double> ex;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] > u[i]) ex.push_back(y[i] - u[i]);
  auto f = fit_gpd_mle(ex);
  BinGpdModel m{u[0], exceedance_fraction(y, u), f.params};
  Output out;
  out.result["threshold"] = u[0];
  out.result["zeta_u"] = m.zeta_u;
  out.result["sigma"] = num(f.params.sigma);
  out.result["xi"] = num(f.params.xi);
  out.result["T"] = o.T;
  out.result["records_per_year"] = o.ny;
  out.result["return_level_closed"] = num(return_level_closed(m, o.T, o.ny));
  std::vector<BinGpdModel> one{m};
  out.result["convention"] = o.convention;
  out.result["return_level"] = num(solve_return_level(one, o.T, o.ny, convention(o.convention)));
  if (o.ci) {
    auto ci = profile_return_level_ci(ex, m.u, m.zeta_u, o.T, o.ny);
    out.result["profile_ci"] = {{"level", ci.level}, {"lower", num(ci.lower)}, {"upper", num(ci.upper)},
                                {"lower_bounded", ci.lower_bounded}, {"upper_bounded", ci.upper_bounded}};
  }
  return out;
}

std::vector<RegressionSpec> specs_from(const std::string& s) {
  auto presets = preset_regression_specs();
  std::vector<RegressionSpec> out;
  for (auto& item : split_list(s, ' ')) {
    auto it = std::find_if(presets.begin(), presets.end(), [&](auto& p) { return p.name == item; });
    if (it != presets.end()) {
      out.push_back(*it);
      continue;
    }
    // name:sigma1+sigma2:xi1
    auto parts = split(item, ':');
    if (parts.size() != 3) throw UsageError("model '" + item + "' is neither a preset nor name:sigma+cols:xi+cols");
    out.push_back({parts[0], split_list(parts[1], '+'), split_list(parts[2], '+')});
  }
  if (out.empty()) throw UsageError("no models given");
  return out;
}

Output cmd_cv_score(const Common& c, const UniOpts& o) {
  auto ds = load(c);
  auto y = column_of(ds, o.response);
  auto u = thresholds_for(ds, y, o);
  CvOptions opt;
  opt.alpha = o.alpha;
  opt.repeats = o.repeats;
  opt.draws = o.draws;
  opt.seed = c.seed;
  auto res = cv_interval_score(ds.values, ds.names, y, u, specs_from(o.models), opt);
  Output out;
  Table t{{"model", "mean_score", "mean_coverage", "repeats", "failed_repeats"}, {}};
  for (auto& r : res)
    t.rows.push_back({r.model, num(r.mean_score()), num(r.mean_coverage()), r.score.size(), r.failed_repeats});
  out.table = t;
  out.result["alpha"] = o.alpha;
  return out;
}

Output cmd_loss_min(const Common& c, const UniOpts& o) {
  auto ds = load(c);
  auto q = column_of(ds, o.response);
  std::vector<double> w;
  if (!o.weights.empty()) w = column_of(ds, o.weights);
  const double qhat = minimize_expected_loss(q, w);
  Output out;
  out.result["qhat"] = num(qhat);
  out.result["expected_loss"] = num(expected_loss(q, qhat, w));
  out.result["draws"] = q.size();
  return out;
}

// ---------------------------------------------------------------------------
// Dependence commands

Output cmd_taildep(const Common& c, const std::string& levels) {
  auto ds = load(c);
  Matrix U = on_scale(ds, MarginSpec::uniform());
  auto rows = taildep_curve(U, parse_doubles(levels));
  Table t{{"level", "chi", "chi_se", "chi_exceed", "eta", "eta_se", "eta_exceed", "eta_truncated"}, {}};
  for (auto& r : rows)
    t.rows.push_back({r.level, num(r.chi.chi), num(std::sqrt(r.chi.var)), r.chi.n_exceed,
                      r.eta_available ? num(r.eta.eta) : json("nan"), r.eta_available ? num(r.eta.se) : json("nan"),
                      r.eta_available ? r.eta.n_exceed : 0, r.eta_available && r.eta.truncated});
  Output out;
  out.table = t;
  return out;
}

struct CondexOpts {
  double quantile = 0.95;
  int conditioning = -1;
  double level = kNaN;
  std::string levels;
  std::string groups;
  std::size_t simulate = 0;
  bool literal = false;
};

HtParams fit_condex(const Matrix& L, const CondexOpts& o) {
  HtFitOptions f;
  f.quantile = o.quantile;
  return o.conditioning < 0 ? fit_ht_exchangeable_skewnormal(L, f) : fit_ht_gaussian(L, o.conditioning, f);
}

Output cmd_condex(const std::string& which, const Common& c, const CondexOpts& o) {
  auto ds = load(c);
  Matrix L = on_scale(ds, MarginSpec::laplace());
  auto p = fit_condex(L, o);
  Output out;
  out.result["fit"] = ht_json(p);
  if (which == "fit") return out;
  if (which == "prob") {
    if (!std::isfinite(o.level)) throw UsageError("--level is required");
    auto a = ht_prob_analytic(p, o.level, MarginSpec::laplace(), o.literal);
    out.result["level"] = o.level;
    out.result["log_prob"] = num(a.log_prob);
    out.result["prob"] = num(std::exp(a.log_prob));
    out.result["finite_roots"] = a.finite_roots;
    out.result["prefactor"] = o.literal ? "exp(-v)" : "laplace_tail";
    out.result["flags"] = a.flags;
    if (o.simulate) {
      SimRegion reg{Vector::Constant(p.others(), o.level), Vector::Constant(p.others(), kInf)};
      auto s = ht_prob_simulation(p, reg, o.level, o.simulate, c.seed);
      out.result["simulation"] = {{"prob", num(s.probability)}, {"se", num(s.se)}, {"hits", s.hits}, {"flags", s.flags}};
    }
    return out;
  }
  // prob2: groups "G1;G2" as positions among the selected columns
  auto lv = parse_doubles(o.levels);
  if (lv.size() != 2) throw UsageError("--levels needs s1,s2");
  auto groups = parse_groups(o.groups);
  if (groups.size() != 2) throw UsageError("--groups needs two groups separated by ';'");
  const bool exch = o.conditioning < 0;
  const int j = exch ? (groups[0].empty() ? -1 : groups[0][0]) : o.conditioning;
  if (j < 0 || std::find(groups[0].begin(), groups[0].end(), j) == groups[0].end())
    throw UsageError("the conditioning variable must belong to group 1");
  std::vector<int> g2;
  for (int col : groups[1]) {
    if (col < 0 || col >= L.cols() || col == j) throw UsageError("group-2 column out of range");
    g2.push_back(col < j ? col : col - 1);
  }
  auto r = ht_prob_two_level(p, g2, lv[0], lv[1], exch, MarginSpec::laplace(), c.seed);
  out.result["levels"] = lv;
  out.result["log_prob"] = num(r.log_prob);
  out.result["prob"] = num(std::exp(r.log_prob));
  out.result["assignments"] = r.assignment_log_probs.size();
  out.result["subsampled"] = r.subsampled;
  out.result["flags"] = r.flags;
  return out;
}

struct MgpdOpts {
  std::string family = "logistic";
  double quantile = 0.95;
  double level = kNaN;
};

Output cmd_mgpd(const std::string& which, const Common& c, const MgpdOpts& o) {
  auto ds = load(c);
  Matrix Y = on_scale(ds, MarginSpec::frechet());
  const auto D = Y.cols();
  const Vector u = Vector::Constant(D, -1.0 / std::log(o.quantile));
  DependenceFit f;
  MgpdModel m = MgpdModel::logistic(2.0);
  if (o.family == "logistic") {
    f = fit_logistic_censored(Y, u, u);
    m = MgpdModel::logistic(f.estimate);
  } else if (o.family == "hr" || o.family == "husler_reiss") {
    f = fit_hr_exchangeable(Y, u, u);
    m = MgpdModel::husler_reiss_exchangeable(static_cast<int>(D), f.estimate);
  } else {
    throw UsageError("--family must be logistic or hr for fitting");
  }
  Output out;
  out.result["fit"] = fit_json(f);
  out.result["threshold_frechet"] = u[0];
  out.result["chi_pair"] = num(model_chi(m, 2).value);
  out.result["chi_all"] = num(model_chi(m, D).value);
  if (which == "prob") {
    const double lvl = std::isfinite(o.level) ? o.level : o.quantile;
    if (!(lvl > 0 && lvl < 1)) throw UsageError("--level must lie in (0,1)");
    const Vector s = Vector::Constant(D, -1.0 / std::log(lvl));
    MvnOptions mo;
    mo.seed = c.seed;
    auto p = joint_exceedance_prob(m, Y, u, s, mo);
    out.result["level"] = lvl;
    out.result["prob"] = num(p.value);
    out.result["log_prob"] = num(std::log(p.value));
    out.result["se"] = num(p.se);
    out.result["warnings"] = p.warnings;
  }
  return out;
}

struct MvnCliOpts {
  std::string lower, upper, mean, cov;
  double df = kNaN;
  int points = 100000, shifts = 10;
};

Output cmd_mvn_tail(const Common& c, const MvnCliOpts& o) {
  OrthantQuery q;
  q.Sigma = parse_matrix(o.cov);
  const auto D = q.Sigma.rows();
  auto bound = [&](const std::string& s, double fill) {
    if (s.empty()) return Vector(Vector::Constant(D, fill));
    Vector v(D);
    auto parts = split_list(s);
    if (static_cast<Eigen::Index>(parts.size()) != D) throw UsageError("bounds must have one entry per dimension");
    for (Eigen::Index i = 0; i < D; ++i) v[i] = parts[i] == "inf" ? kInf : parts[i] == "-inf" ? -kInf : parse_double(parts[i]);
    return v;
  };
  q.lower = bound(o.lower, -kInf);
  q.upper = bound(o.upper, kInf);
  if (!o.mean.empty()) q.mu = to_vector(parse_doubles(o.mean));
  if (std::isfinite(o.df)) q.df = o.df;
  MvnOptions mo{o.points, o.shifts, c.seed};
  auto r = q.df ? mvt_rect(q, mo) : mvn_rect(q, mo);
  Output out;
  out.result["probability"] = num(r.probability);
  out.result["se"] = num(r.se);
  out.result["distribution"] = q.df ? "student" : "normal";
  return out;
}

struct SimOpts {
  std::string family = "logistic";
  double param = 2.0, df = 3.0;
  int dim = 3;
  std::string functional = "max";
  std::string thresholds;
  std::size_t n = 1000;
  bool dataset = false;
  double exceed_fraction = 0.05;
  std::string alphas = "0.3,0.5,0.7,0.9";
  std::string levels = "0.8,0.9,0.95";
};

Output cmd_simulate(const Common& c, const SimOpts& o) {
  if (c.out.empty()) throw UsageError("simulate needs --out for the sample CSV");
  auto m = build_model(o.family, o.param, o.df, o.dim);
  Output out;
  std::ostringstream os;
  if (o.dataset) {
    std::vector<MarginSpec> margins(o.dim, c.margins.empty() ? MarginSpec::frechet() : parse_margin(c.margins));
    auto ds = simulate_mgpd_dataset(m, margins, o.n, o.exceed_fraction, c.seed);
    write_csv(os, ds.values, ds.names);
    out.result["rows"] = ds.rows();
  } else {
    RiskFunctional r{parse_functional(o.functional),
                     o.thresholds.empty() ? Vector(Vector::Ones(o.dim)) : to_vector(parse_doubles(o.thresholds))};
    auto s = composition_sample(m, r, o.n, c.seed);
    Matrix M(s.Y.rows(), s.Y.cols() + 2);
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < s.Y.cols(); ++j) names.push_back("Y" + std::to_string(j + 1));
    names.push_back("R");
    names.push_back("index");
    for (Eigen::Index i = 0; i < s.Y.rows(); ++i) {
      M.row(i).head(s.Y.cols()) = s.Y.row(i);
      M(i, s.Y.cols()) = s.R[i];
      M(i, s.Y.cols() + 1) = s.index[i];
    }
    write_csv(os, M, names);
    out.result["rows"] = s.Y.rows();
    out.result["approximate"] = s.approximate;
    out.result["flags"] = s.flags;
  }
  write_atomic(c.out, os.str());
  out.result["model"] = m.name();
  out.result["file"] = c.out;
  return out;
}

Output cmd_mixture(const Common& c, const SimOpts& o) {
  auto alphas = parse_doubles(o.alphas);
  auto levels = parse_doubles(o.levels);
  if (alphas.empty()) throw UsageError("--alphas is empty");
  auto t = mixture_threshold_experiment(alphas, std::max<std::size_t>(1, o.n / alphas.size()), levels, c.seed, o.dim);
  Table tab{{"alpha"}, {}};
  for (double q : levels) {
    std::ostringstream h;
    h << "share_" << q;
    tab.columns.push_back(h.str());
  }
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    std::vector<json> row{alphas[a]};
    for (std::size_t l = 0; l < levels.size(); ++l) row.push_back(num(t.shares(a, l)));
    tab.rows.push_back(row);
  }
  Output out;
  out.table = tab;
  out.result["samples_per_component"] = o.n / alphas.size();
  return out;
}

json clusters_json(const ClusterSpec& c) {
  json a = json::array();
  for (auto& b : c.blocks) a.push_back(b);
  return a;
}

Output cmd_cluster(const Common& c, int k) {
  auto ds = load(c);
  auto tau = kendall_tau_matrix(ds.values);
  auto cl = ward_cluster(tau, k);
  Output out;
  out.result["names"] = ds.names;
  out.result["tau"] = matrix_json(tau);
  out.result["clusters"] = clusters_json(cl);
  return out;
}

Output cmd_exch_test(const Common& c, const std::string& groups, int k, std::size_t n_mc, bool per_pair) {
  auto ds = load(c);
  ClusterSpec cl;
  if (!groups.empty()) cl.blocks = parse_groups(groups);
  else cl = ward_cluster(kendall_tau_matrix(ds.values), k);
  ExchTestOptions opt;
  opt.n_mc = n_mc;
  opt.seed = c.seed;
  if (per_pair) opt.between = BetweenClasses::PerBlockPair;
  auto r = exch_test(ds.values, cl, opt);
  Output out;
  out.result["clusters"] = clusters_json(cl);
  out.result["E_n"] = num(r.E_n);
  out.result["M_n"] = num(r.M_n);
  out.result["p_E"] = num(r.p_E);
  out.result["p_M"] = num(r.p_M);
  out.result["p_E_chi2"] = num(r.p_E_chi2);
  out.result["pairs"] = r.p;
  out.result["L"] = r.L;
  out.result["df"] = r.df;
  out.result["flags"] = r.flags;
  return out;
}

struct SelectOpts {
  std::string models = "logistic,hr,ht";
  std::string ks = "2,3";
  double level = 0.99;
  std::string omega = "0.96,0.99,0.97";
  std::size_t mc = 1000000;
};

Output cmd_model_select(const Common& c, const SelectOpts& o) {
  auto ds = load(c);
  Matrix U = on_scale(ds, MarginSpec::uniform());
  const int m = static_cast<int>(U.cols());
  auto om = parse_doubles(o.omega);
  if (om.size() != 3) throw UsageError("--omega needs u1,u2,t");
  // empirical omega2 averaged over ordered pairs
  double emp = 0;
  int npairs = 0;
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) {
      if (a == b) continue;
      Matrix P(U.rows(), 2);
      P << U.col(a), U.col(b);
      emp += omega2_empirical(P, om[0], om[1], om[2]);
      ++npairs;
    }
  emp /= npairs;
  Table t{{"model"}, {}};
  auto ks = parse_doubles(o.ks);
  for (double k : ks) t.columns.push_back("l2_k" + std::to_string(static_cast<int>(k)));
  t.columns.insert(t.columns.end(), {"omega2_model", "omega2_empirical", "omega2_abs_diff"});
  for (auto& name : split_list(o.models)) {
    auto kind = parse_chi_model(name);
    std::vector<json> row{name};
    for (double k : ks) {
      if (static_cast<int>(k) >= m) {
        row.push_back("nan");
        continue;
      }
      row.push_back(num(subset_chi_cv(U, static_cast<int>(k), o.level, chi_fitter(kind, o.mc, c.seed)).l2));
    }
    double w = kNaN;
    try {
      if (kind == ChiModel::HeffernanTawn) {
        HtFitOptions f;
        f.threshold = MarginSpec::laplace().quantile(o.level);
        Matrix L = on_scale(ds, MarginSpec::laplace());
        w = omega2_ht(fit_ht_exchangeable_skewnormal(L, f), om[0], om[1], om[2], o.mc, c.seed);
      } else {
        Matrix Y = on_scale(ds, MarginSpec::frechet());
        const Vector thr = Vector::Constant(m, -1.0 / std::log(o.level));
        if (kind == ChiModel::Logistic) w = omega2_model(MgpdModel::logistic(fit_logistic_censored(Y, thr, thr).estimate), om[0], om[1], om[2]);
        else w = omega2_model(MgpdModel::husler_reiss_exchangeable(2, fit_hr_exchangeable(Y, thr, thr).estimate), om[0], om[1], om[2]);
      }
    } catch (const std::exception&) {
    }
    row.push_back(num(w));
    row.push_back(num(emp));
    row.push_back(num(std::abs(w - emp)));
    t.rows.push_back(row);
  }
  Output out;
  out.table = t;
  out.result["level"] = o.level;
  return out;
}

// ---------------------------------------------------------------------------
// Task presets

Output cmd_task1(const Common& c, const UniOpts& o) {
  auto ds = load(c);
  auto y = column_of(ds, o.response);
  auto tcols = split_list(o.threshold_cov);
  auto ald = fit_ald(design_for(ds, tcols), y, o.tau);
  Vector uhat = design_for(ds, tcols) * ald.beta_eta;
  std::vector<double> u(uhat.data(), uhat.data() + uhat.size());
  const double zeta = exceedance_fraction(y, u);
  RegressionSpec spec{"task1", split_list(o.sigma_cov), split_list(o.xi_cov)};
  auto fit = fit_gpd_regression(ds.values, ds.names, y, u, spec);
  if (fit.cov.size() == 0) throw ComputationError("cli", "GPD regression information matrix is not positive definite");
  Dataset pred = ds;
  if (!o.predict.empty()) {
    Common pc = c;
    pc.input = o.predict;
    pc.columns.clear();
    pc.margins.clear();
    pred = load(pc);
  } else if (pred.rows() > 100) {
    pred.values = pred.values.topRows(100).eval();
  }
  Matrix Ds = design_for(pred, spec.sigma_columns), Dx = design_for(pred, spec.xi_columns);
  Vector ut = design_for(pred, tcols) * ald.beta_eta;
  auto draws = sample_params_gaussian(fit.coefficients(), fit.cov, o.draws, c.seed);
  const auto ps = fit.beta_sigma.size();
  const double level_sf = (1 - o.target_prob) / zeta;
  if (!(level_sf < 1)) throw InvalidArgument("cli", "target quantile lies below the threshold");
  Table t{{"row", "threshold", "lower", "median", "upper"}, {}};
  std::vector<double> qs(o.draws);
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    for (int d = 0; d < o.draws; ++d) {
      const double sg = std::exp(Ds.row(i).dot(draws.row(d).head(ps)));
      const double xi = Dx.row(i).dot(draws.row(d).tail(draws.cols() - ps));
      qs[d] = ut[i] + gpd_isf(level_sf, {sg, xi});
    }
    t.rows.push_back({i, num(ut[i]), num(sample_quantile(qs, o.alpha / 2)), num(sample_quantile(qs, 0.5)),
                      num(sample_quantile(qs, 1 - o.alpha / 2))});
  }
  Output out;
  out.table = t;
  out.result["tau"] = o.tau;
  out.result["zeta_u"] = zeta;
  out.result["target_probability"] = o.target_prob;
  out.result["interval_level"] = 1 - o.alpha;
  out.result["beta_sigma"] = nums(fit.beta_sigma);
  out.result["beta_xi"] = nums(fit.beta_xi);
  return out;
}

Output cmd_task2(const Common& c, const UniOpts& o) {
  auto ds = load(c);
  auto y = column_of(ds, o.response);
  auto u = thresholds_for(ds, y, o);
  const double zeta = exceedance_fraction(y, u);
  RegressionSpec spec{"task2", split_list(o.sigma_cov), split_list(o.xi_cov)};
  auto fit = fit_gpd_regression(ds.values, ds.names, y, u, spec);
  if (fit.cov.size() == 0) throw ComputationError("cli", "GPD regression information matrix is not positive definite");
  Matrix Ds = design_for(ds, spec.sigma_columns), Dx = design_for(ds, spec.xi_columns);
  auto draws = sample_params_gaussian(fit.coefficients(), fit.cov, o.bootstrap, c.seed);
  const auto ps = fit.beta_sigma.size();
  const auto kind = o.bootstrap_kind == "nonparametric" ? BootstrapKind::Nonparametric : BootstrapKind::Bayesian;
  if (o.bootstrap_kind != "nonparametric" && o.bootstrap_kind != "bayesian")
    throw UsageError("--bootstrap-kind must be bayesian or nonparametric");
  std::vector<double> q(o.bootstrap, kNaN);
  parallel_for(static_cast<std::size_t>(o.bootstrap), [&](std::size_t b) {
    auto w = bootstrap_weights(y.size(), kind, stream_seed(c.seed, b + 1));
    std::vector<BinGpdModel> models(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double sg = std::exp(Ds.row(i).dot(draws.row(b).head(ps)));
      const double xi = Dx.row(i).dot(draws.row(b).tail(draws.cols() - ps));
      models[i] = {u[i], zeta, {sg, xi}};
    }
    try {
      q[b] = solve_return_level(models, o.T, o.ny, convention(o.convention), w);
    } catch (const std::exception&) {
    }
  });
  std::vector<double> ok;
  for (double v : q)
    if (std::isfinite(v)) ok.push_back(v);
  if (ok.empty()) throw ComputationError("cli", "no bootstrap replicate produced a return level");
  Output out;
  out.result["T"] = o.T;
  out.result["records_per_year"] = o.ny;
  out.result["zeta_u"] = zeta;
  out.result["replicates"] = ok.size();
  out.result["failed_replicates"] = q.size() - ok.size();
  out.result["qhat"] = num(minimize_expected_loss(ok));
  out.result["median_draw"] = num(sample_quantile(ok, 0.5));
  return out;
}

Output cmd_task3(const Common& c, double yv, double vv, double mv, double quantile, std::size_t nsim) {
  auto ds = load(c);
  if (ds.cols() != 3) throw UsageError("task3 needs exactly three columns");
  if (ds.margins.empty()) ds.margins.assign(3, MarginSpec::gumbel());
  Matrix L = ds.on_scale(MarginSpec::laplace());
  const auto lap = MarginSpec::laplace(), gum = MarginSpec::gumbel();
  const double ly = transform_margin(yv, gum, lap), lv = transform_margin(vv, gum, lap);
  Output out;
  // p1: exchangeable conditional extremes and the eta-based extrapolation
  HtFitOptions f;
  f.quantile = quantile;
  auto p = fit_ht_exchangeable_skewnormal(L, f);
  auto a = ht_prob_analytic(p, ly);
  Matrix E = ds.on_scale(MarginSpec::exponential());
  auto d = directional_extrapolate(E, {0, 1, 2}, {}, 1.0, ThresholdSpec::quantile(quantile),
                                   transform_margin(yv, gum, MarginSpec::exponential()), false);
  out.result["p1"] = {{"conditional_extremes", num(std::exp(a.log_prob))},
                      {"eta_extrapolation", num(std::exp(d.log_prob))},
                      {"fit", ht_json(p)}};
  // p2 = 0.5 P(Y1 > v, Y2 > v | Y3 < m)
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < ds.rows(); ++i)
    if (ds.values(i, 2) < mv) keep.push_back(i);
  Matrix L2(keep.size(), 2);
  for (std::size_t k = 0; k < keep.size(); ++k) L2.row(k) = L.row(keep[k]).head(2);
  HtFitOptions f2;
  f2.quantile = quantile;
  auto p2 = fit_ht_gaussian(L2, 0, f2);
  auto a2 = ht_prob_analytic(p2, lv);
  SimRegion reg{Vector::Constant(1, lv), Vector::Constant(1, kInf)};
  auto s2 = ht_prob_simulation(p2, reg, lv, nsim, c.seed);
  out.result["p2"] = {{"conditional_extremes", num(0.5 * std::exp(a2.log_prob))},
                      {"simulation", num(0.5 * s2.probability)},
                      {"simulation_se", num(0.5 * s2.se)},
                      {"filtered_rows", keep.size()},
                      {"fit", ht_json(p2)}};
  out.result["levels"] = {{"y", yv}, {"v", vv}, {"m", mv}};
  return out;
}

Output cmd_task4(const Common& c, int k, double phi1, double phi2, double quantile) {
  auto ds = load(c);
  const int D = static_cast<int>(ds.cols());
  if (ds.margins.empty()) ds.margins.assign(D, MarginSpec::gumbel());
  auto cl = ward_cluster(kendall_tau_matrix(ds.values), k);
  Matrix E = ds.on_scale(MarginSpec::exponential());
  Matrix Lp = ds.on_scale(MarginSpec::laplace());
  const double omega = direction_weight(phi1, phi2);
  const double target = -std::log(phi1);
  const auto lap = MarginSpec::laplace();
  const double s1 = lap.isf(phi1), s2 = lap.isf(phi2);
  double lp1 = 0, lp2 = 0, hp1 = 0, hp2 = 0;
  json per = json::array();
  for (auto& block : cl.blocks) {
    std::vector<int> g1, g2;
    for (int j : block) (j < D / 2 ? g1 : g2).push_back(j);
    auto d1 = directional_extrapolate(E, g1, g2, omega, ThresholdSpec::quantile(quantile), target, true, c.seed);
    auto d2 = directional_extrapolate(E, block, {}, 1.0, ThresholdSpec::quantile(quantile), target, false, c.seed);
    lp1 += d1.log_prob;
    lp2 += d2.log_prob;
    json item = {{"columns", block}, {"u1_size", g1.size()}, {"u2_size", g2.size()},
                 {"log_p1_eta", num(d1.log_prob)}, {"log_p2_eta", num(d2.log_prob)}};
    if (block.size() >= 2) {
      Matrix Lb(Lp.rows(), block.size());
      for (std::size_t q = 0; q < block.size(); ++q) Lb.col(q) = Lp.col(block[q]);
      HtFitOptions f;
      f.quantile = quantile;
      try {
        auto p = fit_ht_exchangeable_skewnormal(Lb, f);
        std::vector<int> pos;
        // conditioning variable in the stricter group when it is non-empty
        const int k2 = g1.empty() ? 0 : static_cast<int>(g2.size());
        for (int q = 0; q < k2; ++q) pos.push_back(q);
        auto t1 = g1.empty() ? ht_prob_two_level(p, {}, s2, s2, true) : ht_prob_two_level(p, pos, s1, s2, true, lap, c.seed);
        auto t2 = ht_prob_two_level(p, {}, s1, s1, true);
        item["log_p1_ht"] = num(t1.log_prob);
        item["log_p2_ht"] = num(t2.log_prob);
        hp1 += t1.log_prob;
        hp2 += t2.log_prob;
      } catch (const std::exception& e) {
        item["ht_error"] = e.what();
        hp1 = hp2 = kNaN;
      }
    } else {
      hp1 += std::log(g1.empty() ? phi2 : phi1);
      hp2 += std::log(phi1);
    }
    per.push_back(item);
  }
  Output out;
  out.result["clusters"] = per;
  out.result["omega"] = omega;
  out.result["eta_extrapolation"] = {{"log_p1", num(lp1)}, {"log_p2", num(lp2)}};
  out.result["conditional_extremes"] = {{"log_p1", num(hp1)}, {"log_p2", num(hp2)}};
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"extremis: extreme-value analysis toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  std::vector<std::string> args(argv + 1, argv + argc);

  Common common;
  auto add_common = [&](CLI::App* s, bool input) {
    if (input) s->add_option("--input", common.input, "CSV file with a header row")->check(CLI::ExistingFile);
    s->add_option("--margins", common.margins, "margin per column or one for all (gumbel, exponential, laplace, frechet, pareto, uniform)");
    s->add_option("--columns", common.columns, "comma-separated column names or positions");
    s->add_option("--seed", common.seed, "random seed");
    s->add_option("--threads", common.threads, "worker threads (0 = EXTREMIS_THREADS or hardware)");
    s->add_option("--out", common.out, "output file (written atomically)");
    s->add_option("--format", common.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  };

  UniOpts uni;
  auto add_threshold = [&](CLI::App* s) {
    s->add_option("--response", uni.response, "response column (default: first)");
    s->add_option("--threshold", uni.threshold, "constant threshold");
    s->add_option("--threshold-quantile", uni.threshold_quantile, "threshold as an empirical quantile");
    s->add_option("--threshold-column", uni.threshold_column, "column holding per-row thresholds");
  };
  auto* fit_gpd = app.add_subcommand("fit-gpd", "generalized Pareto fit to threshold exceedances");
  add_common(fit_gpd, true);
  add_threshold(fit_gpd);
  fit_gpd->add_option("--sigma-covariates", uni.sigma_cov, "covariates in log scale");
  fit_gpd->add_option("--xi-covariates", uni.xi_cov, "covariates in shape");
  fit_gpd->add_option("--fix-xi", uni.fix_xi, "fix the shape");

  auto* fit_thr = app.add_subcommand("fit-threshold", "asymmetric Laplace quantile regression threshold");
  add_common(fit_thr, true);
  fit_thr->add_option("--response", uni.response, "response column");
  fit_thr->add_option("--tau", uni.tau, "quantile level");
  fit_thr->add_option("--covariates", uni.threshold_cov, "covariates in the location");
  fit_thr->add_option("--save-thresholds", uni.save_thresholds, "write the data plus a threshold column");

  auto* rl = app.add_subcommand("return-level", "return level of a binomial-GPD model");
  add_common(rl, true);
  add_threshold(rl);
  rl->add_option("--T", uni.T, "return period in years");
  rl->add_option("--ny", uni.ny, "records per year");
  rl->add_option("--convention", uni.convention, "annual or rate");
  rl->add_flag("--ci", uni.ci, "profile likelihood interval");

  auto* cv = app.add_subcommand("cv-score", "cross-validated interval scores of GPD regressions");
  add_common(cv, true);
  add_threshold(cv);
  cv->add_option("--models", uni.models, "space-separated presets (model1..model7) or name:sig+cols:xi+cols");
  cv->add_option("--repeats", uni.repeats, "cross-validation repeats");
  cv->add_option("--draws", uni.draws, "parameter draws");
  cv->add_option("--alpha", uni.alpha, "interval miscoverage");

  auto* lm = app.add_subcommand("loss-min", "return level minimising the expected asymmetric loss");
  add_common(lm, true);
  lm->add_option("--response", uni.response, "column of posterior draws");
  lm->add_option("--weights", uni.weights, "optional weight column");

  std::string levels = "0.9,0.95,0.98,0.99";
  auto* td = app.add_subcommand("taildep", "chi and eta across levels");
  add_common(td, true);
  td->add_option("--levels", levels, "uniform-scale levels");

  CondexOpts cx;
  auto* condex = app.add_subcommand("condex", "conditional extremes");
  condex->require_subcommand(1);
  std::string condex_which;
  for (const char* name : {"fit", "prob", "prob2"}) {
    auto* s = condex->add_subcommand(name, std::string("conditional extremes ") + name);
    add_common(s, true);
    s->add_option("--threshold-quantile", cx.quantile, "threshold quantile on the Laplace scale");
    s->add_option("--conditioning", cx.conditioning, "conditioning column (Gaussian fit); omit for the exchangeable skew-normal fit");
    if (std::string(name) == "prob") {
      s->add_option("--level", cx.level, "Laplace-scale level")->required();
      s->add_option("--simulate", cx.simulate, "also estimate by simulation with this many draws");
      s->add_flag("--literal-prefactor", cx.literal, "use exp(-v) instead of the Laplace tail");
    }
    if (std::string(name) == "prob2") {
      s->add_option("--levels", cx.levels, "s1,s2 on the Laplace scale")->required();
      s->add_option("--groups", cx.groups, "group 1;group 2 as column positions")->required();
    }
    s->callback([&condex_which, name] { condex_which = name; });
  }

  MgpdOpts mg;
  auto* mgpd = app.add_subcommand("mgpd", "multivariate generalized Pareto models");
  mgpd->require_subcommand(1);
  std::string mgpd_which;
  for (const char* name : {"fit", "prob"}) {
    auto* s = mgpd->add_subcommand(name, std::string("mgpd ") + name);
    add_common(s, true);
    s->add_option("--family", mg.family, "logistic or hr");
    s->add_option("--threshold-quantile", mg.quantile, "threshold quantile");
    if (std::string(name) == "prob") s->add_option("--level", mg.level, "joint exceedance level as a probability");
    s->callback([&mgpd_which, name] { mgpd_which = name; });
  }

  MvnCliOpts mv;
  auto* mvn = app.add_subcommand("mvn-tail", "Gaussian or Student rectangle probability");
  add_common(mvn, false);
  mvn->add_option("--lower", mv.lower, "lower bounds (use -inf)");
  mvn->add_option("--upper", mv.upper, "upper bounds (use inf)");
  mvn->add_option("--mean", mv.mean, "location");
  mvn->add_option("--cov", mv.cov, "scale matrix, rows separated by ';'")->required();
  mvn->add_option("--df", mv.df, "Student degrees of freedom");
  mvn->add_option("--points", mv.points, "lattice points per shift");
  mvn->add_option("--shifts", mv.shifts, "random shifts");

  SimOpts so;
  auto* sim = app.add_subcommand("simulate", "composition sampling of generalized Pareto vectors");
  add_common(sim, false);
  sim->add_option("--family", so.family, "logistic, neg_logistic, hr, student");
  sim->add_option("--param", so.param, "dependence parameter (beta, theta, gamma or rho)");
  sim->add_option("--df", so.df, "Student degrees of freedom");
  sim->add_option("--dim", so.dim, "dimension");
  sim->add_option("--functional", so.functional, "min, max or sum");
  sim->add_option("--thresholds", so.thresholds, "per-component thresholds");
  sim->add_option("--n", so.n, "sample size");
  sim->add_flag("--dataset", so.dataset, "emit a dataset with bulk rows and declared margins");
  sim->add_option("--exceed-fraction", so.exceed_fraction, "fraction of exceedance rows in --dataset mode");

  auto* mix = app.add_subcommand("mixture-experiment", "exceedance shares of a logistic mixture");
  add_common(mix, false);
  mix->add_option("--alphas", so.alphas, "component dependence parameters in (0,1]");
  mix->add_option("--levels", so.levels, "quantile levels");
  mix->add_option("--n", so.n, "total sample size");
  mix->add_option("--dim", so.dim, "dimension");

  int k = 5;
  auto* clus = app.add_subcommand("cluster", "Kendall tau matrix and Ward clusters");
  add_common(clus, true);
  clus->add_option("--k", k, "number of clusters");

  std::string groups;
  std::size_t n_mc = 10000;
  bool per_pair = false;
  auto* ex = app.add_subcommand("exch-test", "partial exchangeability test");
  add_common(ex, true);
  ex->add_option("--groups", groups, "blocks as positions, e.g. 0,1,2;3,4 (default: Ward clusters)");
  ex->add_option("--k", k, "clusters when --groups is absent");
  ex->add_option("--n-mc", n_mc, "Monte Carlo null draws");
  ex->add_flag("--per-block-pair", per_pair, "one between-block class per pair of blocks");

  SelectOpts sel;
  auto* ms = app.add_subcommand("model-select", "subset chi cross-validation and omega2");
  add_common(ms, true);
  ms->add_option("--models", sel.models, "logistic, hr, ht");
  ms->add_option("--k", sel.ks, "subset sizes");
  ms->add_option("--level", sel.level, "uniform-scale level");
  ms->add_option("--omega", sel.omega, "u1,u2,t");
  ms->add_option("--mc", sel.mc, "Monte Carlo draws for conditional extremes");

  auto* t1 = app.add_subcommand("task1", "intervals for extreme conditional quantiles");
  add_common(t1, true);
  t1->add_option("--response", uni.response, "response column");
  t1->add_option("--tau", uni.tau, "threshold quantile level");
  t1->add_option("--threshold-covariates", uni.threshold_cov, "covariates of the threshold");
  t1->add_option("--sigma-covariates", uni.sigma_cov, "covariates in log scale");
  t1->add_option("--xi-covariates", uni.xi_cov, "covariates in shape");
  t1->add_option("--predict", uni.predict, "CSV of covariate rows (default: first 100 input rows)");
  t1->add_option("--target", uni.target_prob, "conditional quantile level");
  t1->add_option("--draws", uni.draws, "parameter draws");
  t1->add_option("--alpha", uni.alpha, "interval miscoverage");

  auto* t2 = app.add_subcommand("task2", "loss-minimising return level with covariate bootstrap");
  add_common(t2, true);
  add_threshold(t2);
  t2->add_option("--sigma-covariates", uni.sigma_cov, "covariates in log scale");
  t2->add_option("--xi-covariates", uni.xi_cov, "covariates in shape");
  t2->add_option("--T", uni.T, "return period");
  t2->add_option("--ny", uni.ny, "records per year");
  t2->add_option("--convention", uni.convention, "annual or rate");
  t2->add_option("--bootstrap", uni.bootstrap, "bootstrap replicates");
  t2->add_option("--bootstrap-kind", uni.bootstrap_kind, "bayesian or nonparametric");

  double y3 = 6, v3 = 7, m3 = -std::log(std::log(2.0)), q3 = 0.95;
  std::size_t nsim = 1000000;
  auto* t3 = app.add_subcommand("task3", "trivariate joint tail probabilities on Gumbel margins");
  add_common(t3, true);
  t3->add_option("--y", y3, "joint level for p1");
  t3->add_option("--v", v3, "joint level for p2");
  t3->add_option("--m", m3, "upper bound of the third variable for p2");
  t3->add_option("--threshold-quantile", q3, "threshold quantile");
  t3->add_option("--simulate", nsim, "simulation draws for p2");

  double phi1 = 1.0 / 300, phi2 = 12.0 / 300, q4 = 0.985;
  auto* t4 = app.add_subcommand("task4", "high-dimensional joint tail probabilities with clustering");
  add_common(t4, true);
  t4->add_option("--k", k, "number of clusters");
  t4->add_option("--phi1", phi1, "exceedance probability for the first half of the columns");
  t4->add_option("--phi2", phi2, "exceedance probability for the second half");
  t4->add_option("--threshold-quantile", q4, "threshold quantile of the structure variable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    set_max_threads(common.threads);
    const std::string cmd = app.get_subcommands().front()->get_name();
    Output out;
    std::string label = cmd;
    if (cmd == "fit-gpd") out = cmd_fit_gpd(common, uni);
    else if (cmd == "fit-threshold") out = cmd_fit_threshold(common, uni);
    else if (cmd == "return-level") out = cmd_return_level(common, uni);
    else if (cmd == "cv-score") out = cmd_cv_score(common, uni);
    else if (cmd == "loss-min") out = cmd_loss_min(common, uni);
    else if (cmd == "taildep") out = cmd_taildep(common, levels);
    else if (cmd == "condex") {
      label += " " + condex_which;
      out = cmd_condex(condex_which, common, cx);
    } else if (cmd == "mgpd") {
      label += " " + mgpd_which;
      out = cmd_mgpd(mgpd_which, common, mg);
    } else if (cmd == "mvn-tail") out = cmd_mvn_tail(common, mv);
    else if (cmd == "simulate") {
      out = cmd_simulate(common, so);
      Common c2 = common;
      c2.out.clear();
      emit(label, c2, args, std::move(out));
      return 0;
    } else if (cmd == "mixture-experiment") out = cmd_mixture(common, so);
    else if (cmd == "cluster") out = cmd_cluster(common, k);
    else if (cmd == "exch-test") out = cmd_exch_test(common, groups, k, n_mc, per_pair);
    else if (cmd == "model-select") out = cmd_model_select(common, sel);
    else if (cmd == "task1") out = cmd_task1(common, uni);
    else if (cmd == "task2") out = cmd_task2(common, uni);
    else if (cmd == "task3") out = cmd_task3(common, y3, v3, m3, q3, nsim);
    else if (cmd == "task4") out = cmd_task4(common, k, phi1, phi2, q4);
    emit(label, common, args, std::move(out));
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ComputationError& e) {
    std::cerr << "computation failed: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "computation failed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
