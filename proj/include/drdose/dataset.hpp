#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace drdose {

// Row-major numeric matrix; just enough for covariate storage.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  const double* data() const { return data_.data(); }
  double* data() { return data_.data(); }

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Immutable observational sample: covariates L (n x d), treatment A, outcome Y,
// and an optional discrete group label with contiguous codes {0..k-1}.
class Dataset {
public:
  Dataset(Matrix covariates, std::vector<double> treatment, std::vector<double> outcome,
          std::optional<std::vector<int>> group = std::nullopt)
      : covariates_(std::move(covariates)),
        treatment_(std::move(treatment)),
        outcome_(std::move(outcome)),
        group_(std::move(group)) {
    validate();
  }

  std::size_t n() const { return treatment_.size(); }
  std::size_t dim() const { return covariates_.cols(); }
  const Matrix& covariates() const { return covariates_; }
  std::span<const double> treatment() const { return treatment_; }
  std::span<const double> outcome() const { return outcome_; }
  bool has_group() const { return group_.has_value(); }
  std::span<const int> group() const { return *group_; }
  int n_groups() const { return n_groups_; }

  // row indices of each group, in dataset order
  std::vector<std::vector<std::uint32_t>> group_indices() const {
    std::vector<std::vector<std::uint32_t>> idx(static_cast<std::size_t>(std::max(n_groups_, 1)));
    if (!group_) {
      idx[0].resize(n());
      for (std::uint32_t i = 0; i < n(); ++i) idx[0][i] = i;
      return idx;
    }
    for (std::uint32_t i = 0; i < n(); ++i) idx[static_cast<std::size_t>((*group_)[i])].push_back(i);
    return idx;
  }

private:
  void validate() {
    const std::size_t n = treatment_.size();
    if (n < 1) throw std::invalid_argument("dataset: need at least one observation (n >= 1)");
    if (outcome_.size() != n || covariates_.rows() != n)
      throw std::invalid_argument("dataset: columns have different lengths");
    if (group_ && group_->size() != n)
      throw std::invalid_argument("dataset: group column length differs from n");
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(treatment_[i]))
        throw std::invalid_argument("dataset: non-finite treatment value at data row " + std::to_string(i + 1));
      if (!std::isfinite(outcome_[i]))
        throw std::invalid_argument("dataset: non-finite outcome value at data row " + std::to_string(i + 1));
      for (std::size_t j = 0; j < covariates_.cols(); ++j)
        if (!std::isfinite(covariates_(i, j)))
          throw std::invalid_argument("dataset: non-finite covariate l" + std::to_string(j + 1) +
                                      " at data row " + std::to_string(i + 1));
    }
    if (group_) {
      int max_code = -1;
      for (std::size_t i = 0; i < n; ++i) {
        const int g = (*group_)[i];
        if (g < 0)
          throw std::invalid_argument("dataset: negative group code at data row " + std::to_string(i + 1));
        max_code = std::max(max_code, g);
      }
      std::vector<char> seen(static_cast<std::size_t>(max_code) + 1, 0);
      for (int g : *group_) seen[static_cast<std::size_t>(g)] = 1;
      for (std::size_t c = 0; c < seen.size(); ++c)
        if (!seen[c])
          throw std::invalid_argument("dataset: group codes are not contiguous, code " +
                                      std::to_string(c) + " never occurs");
      n_groups_ = max_code + 1;
    }
  }

  Matrix covariates_;
  std::vector<double> treatment_;
  std::vector<double> outcome_;
  std::optional<std::vector<int>> group_;
  int n_groups_ = 0;
};

inline std::pair<double, double> treatment_range(const Dataset& ds) {
  const auto a = ds.treatment();
  auto [lo, hi] = std::minmax_element(a.begin(), a.end());
  return {*lo, *hi};
}

// Column naming of the CSV interface: outcome `y`, treatment `a`,
// covariates `l1..ld`, optional group column.
struct CsvSchema {
  std::string outcome = "y";
  std::string treatment = "a";
  std::string covariate_prefix = "l";
  std::string group = "group";
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

inline double parse_cell(const std::string& cell, std::size_t data_row, const std::string& col) {
  const char* b = cell.data();
  const char* e = b + cell.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t')) --e;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e)
    throw std::runtime_error("csv: non-numeric cell in column '" + col + "' at data row " +
                             std::to_string(data_row));
  if (!std::isfinite(v))
    throw std::runtime_error("csv: non-finite value (" + cell + ") in column '" + col +
                             "' at data row " + std::to_string(data_row));
  return v;
}

}  // namespace detail

// Loads a dataset from a UTF-8, comma-separated, '.'-decimal CSV file whose
// first row names the columns. The covariate dimension d is inferred from the
// header (l1..ld must be contiguous from 1).
inline Dataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: empty file '" + path + "'");
  const auto header = detail::split_csv_line(line);

  int y_col = -1, a_col = -1, g_col = -1;
  std::vector<int> l_cols;  // l_cols[j] = column index of l{j+1}
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& name = header[c];
    if (name == schema.outcome) y_col = static_cast<int>(c);
    else if (name == schema.treatment) a_col = static_cast<int>(c);
    else if (name == schema.group) g_col = static_cast<int>(c);
    else if (name.size() > schema.covariate_prefix.size() &&
             name.compare(0, schema.covariate_prefix.size(), schema.covariate_prefix) == 0) {
      int idx = 0;
      const char* b = name.data() + schema.covariate_prefix.size();
      const char* e = name.data() + name.size();
      if (std::from_chars(b, e, idx).ptr == e && idx >= 1) {
        if (static_cast<std::size_t>(idx) > l_cols.size()) l_cols.resize(static_cast<std::size_t>(idx), -1);
        l_cols[static_cast<std::size_t>(idx) - 1] = static_cast<int>(c);
      }
    }
  }
  if (y_col < 0) throw std::runtime_error("csv: missing required column '" + schema.outcome + "'");
  if (a_col < 0) throw std::runtime_error("csv: missing required column '" + schema.treatment + "'");
  if (l_cols.empty())
    throw std::runtime_error("csv: missing covariate columns '" + schema.covariate_prefix + "1..'");
  for (std::size_t j = 0; j < l_cols.size(); ++j)
    if (l_cols[j] < 0)
      throw std::runtime_error("csv: covariate columns are not contiguous, missing '" +
                               schema.covariate_prefix + std::to_string(j + 1) + "'");

  const std::size_t d = l_cols.size();
  std::vector<double> y, a;
  std::vector<double> lflat;
  std::vector<int> g;
  std::size_t data_row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++data_row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("csv: data row " + std::to_string(data_row) + " has " +
                               std::to_string(cells.size()) + " cells, header has " +
                               std::to_string(header.size()));
    y.push_back(detail::parse_cell(cells[static_cast<std::size_t>(y_col)], data_row, schema.outcome));
    a.push_back(detail::parse_cell(cells[static_cast<std::size_t>(a_col)], data_row, schema.treatment));
    for (std::size_t j = 0; j < d; ++j)
      lflat.push_back(detail::parse_cell(cells[static_cast<std::size_t>(l_cols[j])], data_row,
                                         schema.covariate_prefix + std::to_string(j + 1)));
    if (g_col >= 0) {
      const double gv = detail::parse_cell(cells[static_cast<std::size_t>(g_col)], data_row, schema.group);
      if (gv != std::floor(gv) || gv < 0.0 || gv > 1e9)
        throw std::runtime_error("csv: column '" + schema.group +
                                 "' must hold small non-negative integer codes, got " + std::to_string(gv) +
                                 " at data row " + std::to_string(data_row));
      g.push_back(static_cast<int>(gv));
    }
  }
  if (data_row == 0) throw std::runtime_error("csv: file '" + path + "' has a header but no data rows");

  Matrix L(y.size(), d);
  std::copy(lflat.begin(), lflat.end(), L.data());
  std::optional<std::vector<int>> group;
  if (g_col >= 0) group = std::move(g);
  return Dataset(std::move(L), std::move(a), std::move(y), std::move(group));
}

// 17 significant digits: decimal text round-trips every double bit-exactly.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void save_csv(const Dataset& ds, const std::string& path, const CsvSchema& schema = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot write file '" + path + "'");
  out << schema.outcome << ',' << schema.treatment;
  for (std::size_t j = 1; j <= ds.dim(); ++j) out << ',' << schema.covariate_prefix << j;
  if (ds.has_group()) out << ',' << schema.group;
  out << '\n';
  for (std::size_t i = 0; i < ds.n(); ++i) {
    out << format_double(ds.outcome()[i]) << ',' << format_double(ds.treatment()[i]);
    for (std::size_t j = 0; j < ds.dim(); ++j) out << ',' << format_double(ds.covariates()(i, j));
    if (ds.has_group()) out << ',' << ds.group()[i];
    out << '\n';
  }
}

// type-7 (linear interpolation) sample quantile
inline double percentile(std::vector<double> sorted_copy, double p) {
  auto& x = sorted_copy;
  std::sort(x.begin(), x.end());
  if (x.empty()) throw std::invalid_argument("percentile: empty sample");
  const double h = (static_cast<double>(x.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

// Integration range and grid for the weighted statistic; the weight function is
// the indicator of [lo, hi].
struct WeightSpec {
  double lo = 0.0;
  double hi = 1.0;
  int grid_points = 100;

  void validate(double a_min, double a_max) const {
    if (!(lo < hi)) throw std::invalid_argument("weight: lo must be < hi");
    if (grid_points < 10) throw std::invalid_argument("weight: need at least 10 grid points");
    if (lo < a_min || hi > a_max)
      throw std::invalid_argument("weight: [lo, hi] must lie inside the observed treatment range");
  }

  std::vector<double> grid() const {
    std::vector<double> g(static_cast<std::size_t>(grid_points));
    const double step = (hi - lo) / static_cast<double>(grid_points - 1);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = lo + step * static_cast<double>(i);
    g.back() = hi;
    return g;
  }
};

// Default range: central 95% of the observed doses, 100 quadrature points.
// Trimming keeps the integral away from boundary regions where local designs
// can be ill-conditioned.
inline WeightSpec default_weight(const Dataset& ds) {
  std::vector<double> a(ds.treatment().begin(), ds.treatment().end());
  WeightSpec w;
  w.lo = percentile(a, 0.025);
  w.hi = percentile(a, 0.975);
  w.grid_points = 100;
  if (!(w.lo < w.hi)) {  // nearly constant treatment: fall back to the full range
    auto [mn, mx] = treatment_range(ds);
    w.lo = mn;
    w.hi = mx;
  }
  return w;
}

enum class BootDist { two_point, rademacher };
enum class ResidualMode { local, global };

inline const char* to_string(BootDist d) { return d == BootDist::two_point ? "twopoint" : "rademacher"; }
inline const char* to_string(ResidualMode m) { return m == ResidualMode::local ? "local" : "global"; }

struct TestConfig {
  std::optional<double> bandwidth;        // empty = rule-of-thumb
  int boot_reps = 200;                    // B
  BootDist boot_dist = BootDist::two_point;
  ResidualMode residual_mode = ResidualMode::local;
  double alpha = 0.05;
  double trunc_floor = 0.01;
  std::uint64_t seed = 1;
  std::optional<WeightSpec> weight;       // empty = percentile default
  int default_grid_points = 100;          // grid size when weight is defaulted

  // weight range resolved against a dataset's treatment percentiles when unset
  template <class DatasetT>
  WeightSpec resolve_weight(const DatasetT& ds) const {
    if (weight) return *weight;
    WeightSpec w = default_weight(ds);
    w.grid_points = default_grid_points;
    return w;
  }

  void validate() const {
    if (bandwidth && !(*bandwidth > 0.0)) throw std::invalid_argument("config: bandwidth must be positive");
    if (boot_reps < 1) throw std::invalid_argument("config: boot_reps must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("config: alpha must be in (0, 1)");
    if (!(trunc_floor >= 0.0 && trunc_floor < 0.5))
      throw std::invalid_argument("config: trunc_floor must be in [0, 0.5)");
    if (weight && !(weight->lo < weight->hi))
      throw std::invalid_argument("config: weight lo must be < hi");
    if (weight && weight->grid_points < 10)
      throw std::invalid_argument("config: weight grid needs at least 10 points");
    if (default_grid_points < 10)
      throw std::invalid_argument("config: weight grid needs at least 10 points");
  }
};

}  // namespace drdose
