#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "csv.hpp"
#include "errors.hpp"
#include "linalg.hpp"

namespace ivqr {

/// Column-aligned sample: outcome Y, endogenous regressors D (N x s),
/// exogenous covariates X (N x k) and excluded instruments Z (N x m).
///
/// Immutable once constructed. The library never adds an intercept: include a
/// column of ones in X when one is wanted.
class Dataset
{
public:
  Dataset(Vector y, Matrix d, Matrix x, Matrix z, std::string y_label = "y",
          std::vector<std::string> d_labels = {}, std::vector<std::string> x_labels = {},
          std::vector<std::string> z_labels = {})
    : y_(std::move(y))
    , d_(std::move(d))
    , x_(std::move(x))
    , z_(std::move(z))
    , y_label_(std::move(y_label))
    , d_labels_(std::move(d_labels))
    , x_labels_(std::move(x_labels))
    , z_labels_(std::move(z_labels))
  {
    const Index n = y_.size();
    if (n < 1)
      throw DataError("dataset must contain at least one row");
    auto check_rows = [n](const Matrix& m, const char* name) {
      if (m.rows() != n && !(m.cols() == 0))
        throw DataError(std::string("block ") + name + " has " + std::to_string(m.rows()) +
                        " rows, expected " + std::to_string(n));
    };
    check_rows(d_, "D");
    check_rows(x_, "X");
    check_rows(z_, "Z");
    if (d_.cols() == 0)
      d_.resize(n, 0);
    if (x_.cols() == 0)
      x_.resize(n, 0);
    if (z_.cols() == 0)
      z_.resize(n, 0);
    if (!y_.allFinite() || !d_.allFinite() || !x_.allFinite() || !z_.allFinite())
      throw DataError("dataset contains non-finite entries");
    fill_labels(d_labels_, d_.cols(), "d");
    fill_labels(x_labels_, x_.cols(), "x");
    fill_labels(z_labels_, z_.cols(), "z");
    std::set<std::string> seen{ y_label_ };
    for (const auto* group : { &d_labels_, &x_labels_, &z_labels_ })
      for (const auto& l : *group)
        if (!seen.insert(l).second)
          throw ConfigError("duplicated column label '" + l + "'");
  }

  Index n() const { return y_.size(); }
  Index s() const { return d_.cols(); }
  Index k() const { return x_.cols(); }
  Index m() const { return z_.cols(); }

  const Vector& y() const { return y_; }
  const Matrix& d() const { return d_; }
  const Matrix& x() const { return x_; }
  const Matrix& z() const { return z_; }

  const std::string& y_label() const { return y_label_; }
  const std::vector<std::string>& d_labels() const { return d_labels_; }
  const std::vector<std::string>& x_labels() const { return x_labels_; }
  const std::vector<std::string>& z_labels() const { return z_labels_; }

  /// Same labels, rows reordered (or subset) by `rows`.
  Dataset select_rows(const std::vector<Index>& rows) const
  {
    const Index n2 = static_cast<Index>(rows.size());
    Vector y(n2);
    Matrix d(n2, s()), x(n2, k()), z(n2, m());
    for (Index i = 0; i < n2; ++i) {
      const Index r = rows[static_cast<std::size_t>(i)];
      y(i) = y_(r);
      d.row(i) = d_.row(r);
      x.row(i) = x_.row(r);
      z.row(i) = z_.row(r);
    }
    return Dataset(y, d, x, z, y_label_, d_labels_, x_labels_, z_labels_);
  }

  /// Copy with Y replaced (used by profiling and rescaling checks).
  Dataset with_y(Vector y) const
  {
    return Dataset(std::move(y), d_, x_, z_, y_label_, d_labels_, x_labels_, z_labels_);
  }

  Dataset with_x(Matrix x) const
  {
    return Dataset(y_, d_, std::move(x), z_, y_label_, d_labels_, {}, z_labels_);
  }

  Dataset with_z(Matrix z) const
  {
    return Dataset(y_, d_, x_, std::move(z), y_label_, d_labels_, x_labels_, {});
  }

private:
  static void fill_labels(std::vector<std::string>& labels, Index cols, const char* prefix)
  {
    if (labels.empty()) {
      for (Index j = 0; j < cols; ++j)
        labels.push_back(std::string(prefix) + std::to_string(j + 1));
    }
    if (static_cast<Index>(labels.size()) != cols)
      throw ConfigError(std::string("label count mismatch for block ") + prefix);
  }

  Vector y_;
  Matrix d_, x_, z_;
  std::string y_label_;
  std::vector<std::string> d_labels_, x_labels_, z_labels_;
};

/// Role assignment of CSV columns.
struct ColumnMap
{
  std::string y;
  std::vector<std::string> d;
  std::vector<std::string> x;
  std::vector<std::string> z;
};

/// Loads a dataset from an RFC 4180 CSV file with a header row. Row order is
/// preserved. Missing columns raise ConfigError; blank or non-numeric cells
/// raise ParseError carrying the 1-based data row.
inline Dataset load_dataset(std::istream& in, const ColumnMap& map)
{
  const csv::Table table = csv::read(in);
  std::map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (!index.emplace(table.header[j], j).second)
      throw ConfigError("duplicated column name '" + table.header[j] + "' in header");
  }
  auto find = [&](const std::string& name, const char* role) {
    auto it = index.find(name);
    if (it == index.end())
      throw ConfigError(std::string("column '") + name + "' for role " + role +
                        " not found in header");
    return it->second;
  };
  if (map.y.empty())
    throw ConfigError("no column assigned to role y");
  const std::size_t yc = find(map.y, "y");
  std::vector<std::size_t> dc, xc, zc;
  for (const auto& c : map.d)
    dc.push_back(find(c, "d"));
  for (const auto& c : map.x)
    xc.push_back(find(c, "x"));
  for (const auto& c : map.z)
    zc.push_back(find(c, "z"));

  const Index n = static_cast<Index>(table.rows.size());
  if (n == 0)
    throw ParseError("file has no data rows", 0);
  Vector y(n);
  Matrix d(n, static_cast<Index>(dc.size())), x(n, static_cast<Index>(xc.size())),
    z(n, static_cast<Index>(zc.size()));
  for (Index i = 0; i < n; ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    const std::size_t r = static_cast<std::size_t>(i) + 1;
    y(i) = csv::parse_number(row[yc], r, map.y);
    for (std::size_t j = 0; j < dc.size(); ++j)
      d(i, static_cast<Index>(j)) = csv::parse_number(row[dc[j]], r, map.d[j]);
    for (std::size_t j = 0; j < xc.size(); ++j)
      x(i, static_cast<Index>(j)) = csv::parse_number(row[xc[j]], r, map.x[j]);
    for (std::size_t j = 0; j < zc.size(); ++j)
      z(i, static_cast<Index>(j)) = csv::parse_number(row[zc[j]], r, map.z[j]);
  }
  return Dataset(y, d, x, z, map.y, map.d, map.x, map.z);
}

inline Dataset load_dataset(const std::string& path, const ColumnMap& map)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError("cannot open dataset file: " + path);
  return load_dataset(in, map);
}

/// Column map matching the labels of `ds` (what write_dataset emits).
inline ColumnMap column_map_of(const Dataset& ds)
{
  return ColumnMap{ ds.y_label(), ds.d_labels(), ds.x_labels(), ds.z_labels() };
}

inline void write_dataset(const Dataset& ds, std::ostream& out,
                          const std::vector<std::string>& comments = {})
{
  csv::Writer w(out);
  for (const auto& c : comments)
    w.comment(c);
  std::vector<std::string> header{ ds.y_label() };
  header.insert(header.end(), ds.d_labels().begin(), ds.d_labels().end());
  header.insert(header.end(), ds.x_labels().begin(), ds.x_labels().end());
  header.insert(header.end(), ds.z_labels().begin(), ds.z_labels().end());
  w.row(header);
  std::vector<std::string> fields;
  for (Index i = 0; i < ds.n(); ++i) {
    fields.clear();
    fields.push_back(csv::format_number(ds.y()(i)));
    for (Index j = 0; j < ds.s(); ++j)
      fields.push_back(csv::format_number(ds.d()(i, j)));
    for (Index j = 0; j < ds.k(); ++j)
      fields.push_back(csv::format_number(ds.x()(i, j)));
    for (Index j = 0; j < ds.m(); ++j)
      fields.push_back(csv::format_number(ds.z()(i, j)));
    w.row(fields);
  }
}

inline void write_dataset(const Dataset& ds, const std::string& path,
                          const std::vector<std::string>& comments = {})
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw ConfigError("cannot write dataset file: " + path);
  write_dataset(ds, out, comments);
}

/// How the instrument vector Psi(X, Z) is formed.
enum class InstrumentRule
{
  stacked_zx, ///< Psi = (Z', X')'
  z_only      ///< Psi = Z
};

inline Matrix instruments(const Dataset& ds, InstrumentRule rule)
{
  if (rule == InstrumentRule::z_only)
    return ds.z();
  Matrix psi(ds.n(), ds.m() + ds.k());
  psi << ds.z(), ds.x();
  return psi;
}

inline Index instrument_dim(const Dataset& ds, InstrumentRule rule)
{
  return rule == InstrumentRule::z_only ? ds.m() : ds.m() + ds.k();
}

/// Cartesian grid with one strictly increasing axis per coordinate. Nodes are
/// enumerated in lexicographic order (first axis slowest), so "first node
/// attaining the minimum" is the lexicographically smallest minimiser.
class Grid
{
public:
  Grid() = default;

  explicit Grid(std::vector<std::vector<double>> axes)
    : axes_(std::move(axes))
  {
    if (axes_.empty())
      throw DomainError("grid must have at least one axis");
    for (const auto& a : axes_) {
      if (a.empty())
        throw DomainError("grid axis is empty");
      for (std::size_t i = 1; i < a.size(); ++i)
        if (!(a[i] > a[i - 1]))
          throw DomainError("grid axis must be strictly increasing");
    }
  }

  /// Single axis from lower to upper inclusive with the given step.
  static Grid linspace(double lower, double upper, double step)
  {
    return Grid({ axis(lower, upper, step) });
  }

  static std::vector<double> axis(double lower, double upper, double step)
  {
    if (!(upper >= lower))
      throw DomainError("grid upper bound below lower bound");
    if (upper == lower)
      return { lower };
    if (!(step > 0.0))
      throw DomainError("grid step must be positive");
    const auto count = static_cast<long>(std::floor((upper - lower) / step + 1e-9));
    std::vector<double> a;
    for (long i = 0; i <= count; ++i)
      a.push_back(lower + static_cast<double>(i) * step);
    return a;
  }

  /// Default resolution: (upper - lower) / 200 per axis.
  static std::vector<double> default_axis(double lower, double upper)
  {
    return axis(lower, upper, (upper - lower) / 200.0);
  }

  Index dim() const { return static_cast<Index>(axes_.size()); }
  const std::vector<std::vector<double>>& axes() const { return axes_; }

  std::size_t size() const
  {
    std::size_t n = 1;
    for (const auto& a : axes_)
      n *= a.size();
    return axes_.empty() ? 0 : n;
  }

  Vector node(std::size_t flat) const
  {
    Vector v(dim());
    for (Index j = dim() - 1; j >= 0; --j) {
      const auto& a = axes_[static_cast<std::size_t>(j)];
      v(j) = a[flat % a.size()];
      flat /= a.size();
    }
    return v;
  }

  /// Largest step over all axes (0 for single-node axes).
  double max_step() const
  {
    double s = 0.0;
    for (const auto& a : axes_)
      for (std::size_t i = 1; i < a.size(); ++i)
        s = std::max(s, a[i] - a[i - 1]);
    return s;
  }

private:
  std::vector<std::vector<double>> axes_;
};

/// Axis-aligned box for joint-parameter procedures.
struct Box
{
  Vector lower;
  Vector upper;

  Index dim() const { return lower.size(); }

  bool contains(const Vector& v) const
  {
    for (Index j = 0; j < dim(); ++j)
      if (v(j) < lower(j) || v(j) > upper(j))
        return false;
    return true;
  }

  Grid grid(const std::vector<double>& steps) const
  {
    std::vector<std::vector<double>> axes;
    for (Index j = 0; j < dim(); ++j)
      axes.push_back(Grid::axis(lower(j), upper(j), steps[static_cast<std::size_t>(j)]));
    return Grid(axes);
  }

  void validate() const
  {
    if (lower.size() != upper.size() || lower.size() == 0)
      throw DomainError("parameter box must be nonempty with matching bounds");
    for (Index j = 0; j < dim(); ++j)
      if (!(upper(j) >= lower(j)) || !std::isfinite(lower(j)) || !std::isfinite(upper(j)))
        throw DomainError("parameter box must be bounded with upper >= lower");
  }
};

inline void check_tau(double tau)
{
  if (!(tau > 0.0 && tau < 1.0))
    throw DomainError("quantile level tau must lie in (0,1), got " + std::to_string(tau));
}

struct ModelSpec
{
  double tau = 0.5;
  InstrumentRule instrument_rule = InstrumentRule::stacked_zx;
  Grid alpha_grid;
  std::optional<Box> theta_space;
};

/// Point estimate produced by any estimator in the library.
struct EstimateResult
{
  Vector alpha_hat;
  Vector beta_hat;
  double tau = 0.5;
  std::optional<Matrix> covariance; ///< covariance of (alpha_hat, beta_hat) when available
  std::string method;
  double objective = 0.0;
  std::map<std::string, std::string> notes;

  Vector theta() const
  {
    Vector t(alpha_hat.size() + beta_hat.size());
    t << alpha_hat, beta_hat;
    return t;
  }
};

/// Report produced by validate(); purely descriptive.
struct ValidationReport
{
  Index n = 0, s = 0, k = 0, m = 0, r = 0;
  bool order_condition = false;
  Matrix instrument_endogenous_corr; ///< m x s sample correlations (0 for constant columns)
};

inline double sample_corr(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b)
{
  const double ma = a.mean();
  const double mb = b.mean();
  const double saa = (a.array() - ma).square().sum();
  const double sbb = (b.array() - mb).square().sum();
  if (saa <= 0.0 || sbb <= 0.0)
    return 0.0;
  return ((a.array() - ma) * (b.array() - mb)).sum() / std::sqrt(saa * sbb);
}

inline ValidationReport validate(const Dataset& ds, const ModelSpec& spec)
{
  ValidationReport rep;
  rep.n = ds.n();
  rep.s = ds.s();
  rep.k = ds.k();
  rep.m = ds.m();
  rep.r = instrument_dim(ds, spec.instrument_rule);
  rep.order_condition = rep.r >= rep.k + rep.s;
  rep.instrument_endogenous_corr.resize(ds.m(), ds.s());
  for (Index i = 0; i < ds.m(); ++i)
    for (Index j = 0; j < ds.s(); ++j)
      rep.instrument_endogenous_corr(i, j) = sample_corr(ds.z().col(i), ds.d().col(j));
  return rep;
}

} // namespace ivqr
