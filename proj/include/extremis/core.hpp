#pragma once
// Marginal scales, rank utilities, dataset container and the seeded RNG
// contract shared by every extremis module.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace extremis {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Input violates a precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  InvalidArgument(const std::string& module, const std::string& what)
      : std::invalid_argument(module + ": " + what), module_(module) {}
  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

// A computation ran but could not produce a result (non-convergence etc).
class ComputationError : public std::runtime_error {
 public:
  ComputationError(const std::string& module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(module) {}
  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

inline void require(bool ok, const char* module, const std::string& what) {
  if (!ok) throw InvalidArgument(module, what);
}

// ---------------------------------------------------------------------------
// Random numbers

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Seed of the index-th independent stream derived from a run seed.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::uint64_t index = 0)
      : engine_(stream_seed(seed, index)) {}

  // Uniform on the open interval (0,1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }
  double normal() { return normal_(engine_); }
  double exponential() { return -std::log(uniform()); }
  double gamma(double shape) {
    return std::gamma_distribution<double>(shape, 1.0)(engine_);
  }
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Threading: work is split into fixed blocks and each block owns a derived
// stream, so the result never depends on how many threads ran.

inline std::atomic<int>& thread_limit_storage() {
  static std::atomic<int> limit{0};
  return limit;
}

inline void set_max_threads(int n) { thread_limit_storage() = std::max(0, n); }

inline int max_threads() {
  int n = thread_limit_storage();
  if (n > 0) return n;
  if (const char* env = std::getenv("EXTREMIS_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

template <class Fn>
void parallel_for(std::size_t n_tasks, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(n_tasks, static_cast<std::size_t>(max_threads()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < n_tasks && !failed; i = next++) {
      try {
        fn(i);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Marginal laws

enum class MarginKind { Gumbel, Exponential, Laplace, Frechet, Pareto, Uniform, Empirical };

inline constexpr double kProbFloor = 1e-15;

// Counts probabilities clamped into [1e-15, 1-1e-15] during transforms.
struct TransformStats {
  std::size_t clamped = 0;
};

class MarginSpec {
 public:
  MarginSpec() = default;
  explicit MarginSpec(MarginKind kind) : kind_(kind) {
    require(kind != MarginKind::Empirical, "core",
            "empirical margins need a reference sample");
  }

  static MarginSpec gumbel() { return MarginSpec(MarginKind::Gumbel); }
  static MarginSpec exponential() { return MarginSpec(MarginKind::Exponential); }
  static MarginSpec laplace() { return MarginSpec(MarginKind::Laplace); }
  static MarginSpec frechet() { return MarginSpec(MarginKind::Frechet); }
  static MarginSpec pareto() { return MarginSpec(MarginKind::Pareto); }
  static MarginSpec uniform() { return MarginSpec(MarginKind::Uniform); }
  static MarginSpec empirical(std::span<const double> reference) {
    require(reference.size() >= 2, "core", "empirical margin needs at least 2 reference values");
    MarginSpec m;
    m.kind_ = MarginKind::Empirical;
    auto sorted = std::make_shared<std::vector<double>>(reference.begin(), reference.end());
    std::sort(sorted->begin(), sorted->end());
    m.reference_ = std::move(sorted);
    return m;
  }

  MarginKind kind() const { return kind_; }

  bool in_support(double x) const {
    if (!std::isfinite(x)) return false;
    switch (kind_) {
      case MarginKind::Exponential: return x >= 0.0;
      case MarginKind::Frechet: return x > 0.0;
      case MarginKind::Pareto: return x >= 1.0;
      case MarginKind::Uniform: return x >= 0.0 && x <= 1.0;
      default: return true;
    }
  }

  double cdf(double x) const {
    switch (kind_) {
      case MarginKind::Gumbel: return std::exp(-std::exp(-x));
      case MarginKind::Exponential: return x <= 0 ? 0.0 : -std::expm1(-x);
      case MarginKind::Laplace: return x < 0 ? 0.5 * std::exp(x) : 1.0 - 0.5 * std::exp(-x);
      case MarginKind::Frechet: return x <= 0 ? 0.0 : std::exp(-1.0 / x);
      case MarginKind::Pareto: return x <= 1 ? 0.0 : (x - 1.0) / x;
      case MarginKind::Uniform: return std::clamp(x, 0.0, 1.0);
      case MarginKind::Empirical: return empirical_rank(x) / (reference_->size() + 1.0);
    }
    return kNaN;
  }

  // Survival function 1 - cdf, computed without cancellation in the upper tail.
  double sf(double x) const {
    switch (kind_) {
      case MarginKind::Gumbel: return -std::expm1(-std::exp(-x));
      case MarginKind::Exponential: return x <= 0 ? 1.0 : std::exp(-x);
      case MarginKind::Laplace: return x < 0 ? 1.0 - 0.5 * std::exp(x) : 0.5 * std::exp(-x);
      case MarginKind::Frechet: return x <= 0 ? 1.0 : -std::expm1(-1.0 / x);
      case MarginKind::Pareto: return x <= 1 ? 1.0 : 1.0 / x;
      case MarginKind::Uniform: return 1.0 - std::clamp(x, 0.0, 1.0);
      case MarginKind::Empirical: return 1.0 - cdf(x);
    }
    return kNaN;
  }

  double quantile(double p) const {
    switch (kind_) {
      case MarginKind::Gumbel: return -std::log(-std::log(p));
      case MarginKind::Exponential: return -std::log1p(-p);
      case MarginKind::Laplace: return p < 0.5 ? std::log(2.0 * p) : -std::log(2.0 * (1.0 - p));
      case MarginKind::Frechet: return -1.0 / std::log(p);
      case MarginKind::Pareto: return 1.0 / (1.0 - p);
      case MarginKind::Uniform: return p;
      case MarginKind::Empirical: return empirical_quantile(p);
    }
    return kNaN;
  }

  // Inverse survival: the x with sf(x) = q.
  double isf(double q) const {
    switch (kind_) {
      case MarginKind::Gumbel: return -std::log(-std::log1p(-q));
      case MarginKind::Exponential: return -std::log(q);
      case MarginKind::Laplace: return q > 0.5 ? std::log(2.0 * (1.0 - q)) : -std::log(2.0 * q);
      case MarginKind::Frechet: return -1.0 / std::log1p(-q);
      case MarginKind::Pareto: return 1.0 / q;
      case MarginKind::Uniform: return 1.0 - q;
      case MarginKind::Empirical: return empirical_quantile(1.0 - q);
    }
    return kNaN;
  }

  std::string name() const {
    switch (kind_) {
      case MarginKind::Gumbel: return "gumbel";
      case MarginKind::Exponential: return "exponential";
      case MarginKind::Laplace: return "laplace";
      case MarginKind::Frechet: return "frechet";
      case MarginKind::Pareto: return "pareto";
      case MarginKind::Uniform: return "uniform";
      case MarginKind::Empirical: return "empirical";
    }
    return "?";
  }

 private:
  double empirical_rank(double x) const {
    return static_cast<double>(
        std::upper_bound(reference_->begin(), reference_->end(), x) - reference_->begin());
  }
  // Smallest order statistic whose rank/(n+1) reaches p.
  double empirical_quantile(double p) const {
    const auto n = reference_->size();
    auto k = static_cast<std::size_t>(std::ceil(p * (n + 1.0)));
    k = std::clamp<std::size_t>(k, 1, n);
    return (*reference_)[k - 1];
  }

  MarginKind kind_ = MarginKind::Uniform;
  std::shared_ptr<const std::vector<double>> reference_;
};

inline MarginSpec parse_margin(const std::string& name) {
  if (name == "gumbel") return MarginSpec::gumbel();
  if (name == "exponential" || name == "exp") return MarginSpec::exponential();
  if (name == "laplace") return MarginSpec::laplace();
  if (name == "frechet") return MarginSpec::frechet();
  if (name == "pareto") return MarginSpec::pareto();
  if (name == "uniform") return MarginSpec::uniform();
  throw InvalidArgument("core", "unknown margin '" + name + "'");
}

// to.quantile(from.cdf(x)), routed through survival functions in the upper
// tail so extreme values keep full relative precision.
inline double transform_margin(double x, const MarginSpec& from, const MarginSpec& to,
                               TransformStats* stats = nullptr) {
  require(std::isfinite(x), "core", "non-finite input to transform_margin");
  const double p = from.cdf(x);
  if (p > 0.5) {
    double q = from.sf(x);
    if (q < kProbFloor) {
      q = kProbFloor;
      if (stats) ++stats->clamped;
    }
    return to.isf(q);
  }
  double pc = p;
  if (pc < kProbFloor) {
    pc = kProbFloor;
    if (stats) ++stats->clamped;
  }
  return to.quantile(pc);
}

// rank(x)/(n+1) with rank = #{column <= x}.
inline double empirical_cdf(std::span<const double> column, double x) {
  require(!column.empty(), "core", "empirical_cdf of an empty column");
  const auto rank = std::count_if(column.begin(), column.end(), [x](double c) { return c <= x; });
  return static_cast<double>(rank) / (column.size() + 1.0);
}

// Rank transform of a whole column to (0,1): rank/(n+1), ties get the max rank
// (consistent with empirical_cdf).
inline std::vector<double> rank_transform(std::span<const double> column) {
  const std::size_t n = column.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return column[a] < column[b]; });
  std::vector<double> out(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && column[order[j + 1]] == column[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = (j + 1.0) / (n + 1.0);
    i = j + 1;
  }
  return out;
}

// Empirical quantile with linear interpolation between order statistics
// (type 7), used for threshold selection.
inline double sample_quantile(std::vector<double> values, double p) {
  require(!values.empty(), "core", "quantile of an empty sample");
  require(p >= 0.0 && p <= 1.0, "core", "quantile level outside [0,1]");
  std::sort(values.begin(), values.end());
  const double h = (values.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - lo) * (values[hi] - values[lo]);
}

// ---------------------------------------------------------------------------
// Dataset

struct Dataset {
  Matrix values;  // n x D
  std::vector<std::string> names;
  std::vector<MarginSpec> margins;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }

  std::vector<double> column(Eigen::Index j) const {
    std::vector<double> out(values.rows());
    for (Eigen::Index i = 0; i < values.rows(); ++i) out[i] = values(i, j);
    return out;
  }

  Eigen::Index index_of(const std::string& name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name) return static_cast<Eigen::Index>(j);
    throw InvalidArgument("core", "no column named '" + name + "'");
  }

  void validate() const {
    require(values.rows() >= 1 && values.cols() >= 1, "core", "dataset must be non-empty");
    require(names.size() == static_cast<std::size_t>(values.cols()), "core",
            "column names do not match column count");
    require(margins.empty() || margins.size() == names.size(), "core",
            "margin declarations do not match column count");
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      for (Eigen::Index i = 0; i < values.rows(); ++i) {
        require(std::isfinite(values(i, j)), "core", "missing or non-finite entry in '" + names[j] + "'");
        if (!margins.empty())
          require(margins[j].in_support(values(i, j)), "core",
                  "value outside the declared " + margins[j].name() + " support in '" + names[j] + "'");
      }
  }

  // Copy of the data mapped column-wise onto a common target scale.
  Matrix on_scale(const MarginSpec& target, TransformStats* stats = nullptr) const {
    require(!margins.empty(), "core", "dataset has no margin declarations");
    Matrix out(values.rows(), values.cols());
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      for (Eigen::Index i = 0; i < values.rows(); ++i)
        out(i, j) = transform_margin(values(i, j), margins[j], target, stats);
    return out;
  }
};

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  auto notspace = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
  s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
  return s;
}

// Comma-separated, header row, numeric cells.
inline Dataset read_csv(std::istream& in) {
  Dataset ds;
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("core", "CSV input is empty");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  for (auto& h : split(line, ',')) ds.names.push_back(trim(h));
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != ds.names.size())
      throw InvalidArgument("core", "CSV line " + std::to_string(lineno) + " has " +
                                        std::to_string(cells.size()) + " cells, expected " +
                                        std::to_string(ds.names.size()));
    std::vector<double> row;
    for (auto& c : cells) {
      auto t = trim(c);
      char* end = nullptr;
      double v = std::strtod(t.c_str(), &end);
      if (t.empty() || end != t.c_str() + t.size())
        throw InvalidArgument("core", "non-numeric cell '" + t + "' on CSV line " + std::to_string(lineno));
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  ds.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < ds.names.size(); ++j) ds.values(i, j) = rows[i][j];
  return ds;
}

inline Dataset read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("core", "cannot open '" + path + "'");
  return read_csv(in);
}

inline void write_csv(std::ostream& out, const Matrix& values, const std::vector<std::string>& names) {
  out.precision(17);
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << '\n';
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) out << (j ? "," : "") << values(i, j);
    out << '\n';
  }
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace extremis
