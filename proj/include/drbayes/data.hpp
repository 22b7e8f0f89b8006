#pragma once

// Observed-data container, CSV ingestion and the covariate transforms used by
// the benchmark scenarios.

#include <algorithm>
#include <array>
#include <charconv>
#include <numeric>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "drbayes/error.hpp"
#include "drbayes/numeric.hpp"

namespace drbayes {

/// Ground truth attached to simulated data.
struct TruthInfo {
  std::optional<Vector> true_ps;
  std::optional<double> true_ate;
  std::optional<Vector> y1;
  std::optional<Vector> y0;
};

/// Observed triplets (outcome, binary treatment, covariates).
struct Dataset {
  Vector y;
  Vector a;  // entries are exactly 0.0 or 1.0
  Matrix x;  // n x p
  std::vector<std::string> column_names;
  std::optional<TruthInfo> truth;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index p() const { return x.cols(); }

  /// Index of a covariate column by name; throws SchemaError when absent.
  std::size_t column_index(std::string_view name) const {
    for (std::size_t j = 0; j < column_names.size(); ++j) {
      if (column_names[j] == name) return j;
    }
    throw SchemaError("no covariate column named '" + std::string(name) + "'");
  }

  Eigen::Index treated_count() const {
    return static_cast<Eigen::Index>(a.sum());
  }
};

enum class Severity { warning, error };

struct ValidationIssue {
  Severity severity;
  std::string message;
};

struct ValidationReport {
  bool ok = true;
  std::vector<ValidationIssue> issues;
  Eigen::Index treated_count = 0;
  Eigen::Index control_count = 0;
};

inline ValidationReport validate(const Dataset& d) {
  ValidationReport report;
  auto error = [&](std::string msg) {
    report.issues.push_back({Severity::error, std::move(msg)});
    report.ok = false;
  };
  auto warn = [&](std::string msg) { report.issues.push_back({Severity::warning, std::move(msg)}); };

  const Eigen::Index n = d.y.size();
  if (d.a.size() != n || d.x.rows() != n) {
    error("y, a and x have different numbers of rows");
    return report;
  }
  if (n < 2) error("fewer than 2 units");
  if (d.x.cols() < 1) error("no covariate columns");
  if (static_cast<Eigen::Index>(d.column_names.size()) != d.x.cols()) {
    error("column_names does not match the number of covariate columns");
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.a[i] == 1.0) {
      ++report.treated_count;
    } else if (d.a[i] == 0.0) {
      ++report.control_count;
    } else {
      error("treatment value outside {0,1} at row " + std::to_string(i + 1));
      break;
    }
  }
  if (n > 0 && report.control_count == 0) error("no control units");
  if (n > 0 && report.treated_count == 0) error("no treated units");
  if (!d.y.allFinite()) error("non-finite outcome value");
  if (!d.x.allFinite()) error("non-finite covariate value");
  if (!report.ok) return report;

  for (Eigen::Index j = 0; j < d.x.cols(); ++j) {
    if ((d.x.col(j).array() == d.x(0, j)).all()) {
      warn("constant covariate column '" + d.column_names[static_cast<std::size_t>(j)] + "'");
    }
  }
  if ((d.y.array() == d.y[0]).all()) warn("outcome is constant");
  return report;
}

/// Throws PreconditionError carrying the first error message when invalid.
inline void require_valid(const Dataset& d) {
  const auto report = validate(d);
  if (!report.ok) {
    for (const auto& issue : report.issues) {
      if (issue.severity == Severity::error) throw PreconditionError("invalid dataset: " + issue.message);
    }
  }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        cell.push_back('"');
        ++k;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  out.push_back(std::move(cell));
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline double parse_cell(const std::string& raw, std::size_t row, const std::string& column) {
  std::string_view s = trim(raw);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(value)) {
    throw ParseError("non-numeric value '" + raw + "' at row " + std::to_string(row) + ", column '" +
                         column + "'",
                     row, column);
  }
  return value;
}

}  // namespace detail

/// Reads a CSV with a header row. `covariate_cols` empty means "all remaining
/// columns" in file order. Rows are numbered from 1 for the first data row.
inline Dataset load_dataset(const std::string& path, const std::string& outcome_col,
                            const std::string& treatment_col,
                            const std::vector<std::string>& covariate_cols = {}) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open dataset file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("dataset file '" + path + "' has no header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  std::vector<std::string> header = detail::split_csv_line(line);
  for (auto& h : header) h = std::string(detail::trim(h));

  auto find = [&](const std::string& name) -> std::size_t {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (header[k] == name) return k;
    }
    throw SchemaError("missing column '" + name + "' in '" + path + "'");
  };
  const std::size_t y_idx = find(outcome_col);
  const std::size_t a_idx = find(treatment_col);
  std::vector<std::size_t> x_idx;
  std::vector<std::string> names;
  if (covariate_cols.empty()) {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (k == y_idx || k == a_idx) continue;
      x_idx.push_back(k);
      names.push_back(header[k]);
    }
  } else {
    for (const auto& c : covariate_cols) {
      x_idx.push_back(find(c));
      names.push_back(c);
    }
  }
  if (x_idx.empty()) throw SchemaError("no covariate columns selected");

  std::vector<double> ys;
  std::vector<double> as;
  std::vector<double> xs;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty() || line == "\r") continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                           " cells, header has " + std::to_string(header.size()),
                       row, "");
    }
    ys.push_back(detail::parse_cell(cells[y_idx], row, outcome_col));
    const double av = detail::parse_cell(cells[a_idx], row, treatment_col);
    if (av != 0.0 && av != 1.0) {
      throw DomainError("treatment value " + std::string(detail::trim(cells[a_idx])) + " at row " +
                        std::to_string(row) + " is outside {0,1}");
    }
    as.push_back(av);
    for (std::size_t k = 0; k < x_idx.size(); ++k) {
      xs.push_back(detail::parse_cell(cells[x_idx[k]], row, names[k]));
    }
  }

  Dataset d;
  const auto n = static_cast<Eigen::Index>(ys.size());
  const auto p = static_cast<Eigen::Index>(x_idx.size());
  d.y = Eigen::Map<Vector>(ys.data(), n);
  d.a = Eigen::Map<Vector>(as.data(), n);
  d.x = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(xs.data(), n, p);
  d.column_names = std::move(names);
  return d;
}

/// Writes y, a and the covariates with 17 significant digits so that
/// load_dataset reproduces the values bit-exactly.
inline void write_dataset(const std::string& path, const Dataset& d, const std::string& outcome_col = "y",
                          const std::string& treatment_col = "a") {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot write dataset file '" + path + "'");
  out << outcome_col << ',' << treatment_col;
  for (const auto& name : d.column_names) out << ',' << name;
  out << '\n';
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    out << d.y[i] << ',' << static_cast<int>(d.a[i]);
    for (Eigen::Index j = 0; j < d.p(); ++j) out << ',' << d.x(i, j);
    out << '\n';
  }
}

/// Column means 0 and sample sd 1 (n-1 denominator) on the selected columns.
inline Dataset standardize_covariates(const Dataset& d, const std::vector<std::size_t>& cols) {
  Dataset out = d;
  const auto n = static_cast<double>(d.n());
  for (std::size_t j : cols) {
    if (j >= static_cast<std::size_t>(d.p())) throw DomainError("column index out of range");
    auto col = out.x.col(static_cast<Eigen::Index>(j));
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() / (n - 1.0));
    if (!(sd > 0.0)) {
      throw DomainError("column '" + d.column_names[j] + "' has zero variance and cannot be standardized");
    }
    col = ((col.array() - mean) / sd).matrix();
  }
  return out;
}

inline Dataset standardize_covariates(const Dataset& d) {
  std::vector<std::size_t> all(static_cast<std::size_t>(d.p()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  return standardize_covariates(d, all);
}

/// Appends covariate columns (same row order) to a copy of `d`.
inline Dataset append_covariates(const Dataset& d, const Matrix& extra, const std::vector<std::string>& names) {
  if (extra.rows() != d.n() || static_cast<Eigen::Index>(names.size()) != extra.cols()) {
    throw DomainError("appended covariates do not match the dataset shape");
  }
  Dataset out = d;
  out.x.conservativeResize(Eigen::NoChange, d.p() + extra.cols());
  out.x.rightCols(extra.cols()) = extra;
  out.column_names.insert(out.column_names.end(), names.begin(), names.end());
  return out;
}

namespace detail {

inline std::array<std::size_t, 4> kang_schafer_source_columns(const Dataset& d) {
  if (d.p() < 4) throw DomainError("Kang-Schafer transform needs at least 4 covariates");
  std::array<std::size_t, 4> idx{0, 1, 2, 3};
  const std::array<std::string, 4> names{"X1", "X2", "X3", "X4"};
  bool named = true;
  for (std::size_t k = 0; k < 4; ++k) {
    auto it = std::find(d.column_names.begin(), d.column_names.end(), names[k]);
    if (it == d.column_names.end()) {
      named = false;
      break;
    }
    idx[k] = static_cast<std::size_t>(it - d.column_names.begin());
  }
  if (!named) idx = {0, 1, 2, 3};
  return idx;
}

}  // namespace detail

/// The four Kang-Schafer covariates before standardization, one row per unit.
inline Matrix kang_schafer_raw(const Dataset& d) {
  const auto idx = detail::kang_schafer_source_columns(d);
  Matrix z(d.n(), 4);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double x1 = d.x(i, static_cast<Eigen::Index>(idx[0]));
    const double x2 = d.x(i, static_cast<Eigen::Index>(idx[1]));
    const double x3 = d.x(i, static_cast<Eigen::Index>(idx[2]));
    const double x4 = d.x(i, static_cast<Eigen::Index>(idx[3]));
    z(i, 0) = std::exp(x1 / 2.0);
    z(i, 1) = 10.0 + x2 / (1.0 + std::exp(x1));
    z(i, 2) = std::pow(0.6 + x1 * x3 / 25.0, 3);
    z(i, 3) = std::pow(20.0 + x1 + x4, 2);
  }
  return z;
}

/// Dataset whose covariates are the four transformed columns, standardized
/// over the full sample. y, a and truth are carried over unchanged.
inline Dataset kang_schafer_transform(const Dataset& d) {
  Dataset out;
  out.y = d.y;
  out.a = d.a;
  out.truth = d.truth;
  out.x = kang_schafer_raw(d);
  out.column_names = {"ks_1", "ks_2", "ks_3", "ks_4"};
  return standardize_covariates(out);
}

}  // namespace drbayes
