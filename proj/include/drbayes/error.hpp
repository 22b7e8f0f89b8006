#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace drbayes {

/// Category used by the CLI to pick an exit code.
enum class ErrorCategory { config, data, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string kind, const std::string& message)
      : std::runtime_error(message), category_(category), kind_(std::move(kind)) {}

  ErrorCategory category() const noexcept { return category_; }
  /// Short machine-readable tag, e.g. "schema", "infeasible_constraint".
  const std::string& kind() const noexcept { return kind_; }

 private:
  ErrorCategory category_;
  std::string kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message)
      : Error(ErrorCategory::config, "config", message) {}
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& message)
      : Error(ErrorCategory::data, "schema", message) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t row, std::string column)
      : Error(ErrorCategory::data, "parse", message), row_(row), column_(std::move(column)) {}
  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

/// Argument or data outside the admissible domain of an operation.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& message)
      : Error(ErrorCategory::data, "domain", message) {}
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& message)
      : Error(ErrorCategory::data, "precondition", message) {}
};

class LinearAlgebraError : public Error {
 public:
  explicit LinearAlgebraError(const std::string& message)
      : Error(ErrorCategory::numerical, "linear_algebra", message) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& message)
      : Error(ErrorCategory::numerical, "numerical", message) {}
};

/// No tilting parameter can zero the weighted mean moment.
class InfeasibleConstraintError : public Error {
 public:
  explicit InfeasibleConstraintError(const std::string& message)
      : Error(ErrorCategory::numerical, "infeasible_constraint", message) {}
};

/// One step of a tilting solve, kept for convergence diagnostics.
struct TiltRecord {
  std::size_t t = 0;
  double lambda = 0.0;
  double mean_moment = 0.0;
  double ess = 0.0;
  std::string event;  // "", "prune", "final", ...
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& message, double last_lambda, double residual,
                      std::vector<TiltRecord> history = {})
      : Error(ErrorCategory::numerical, "non_convergence", message),
        last_lambda_(last_lambda),
        residual_(residual),
        history_(std::move(history)) {}
  double last_lambda() const noexcept { return last_lambda_; }
  double residual() const noexcept { return residual_; }
  const std::vector<TiltRecord>& history() const noexcept { return history_; }

 private:
  double last_lambda_;
  double residual_;
  std::vector<TiltRecord> history_;
};

class RefusalError : public Error {
 public:
  explicit RefusalError(const std::string& message)
      : Error(ErrorCategory::numerical, "refusal", message) {}
};

class StratumDegeneracyError : public Error {
 public:
  StratumDegeneracyError(const std::string& message, std::size_t stratum)
      : Error(ErrorCategory::numerical, "stratum_degeneracy", message), stratum_(stratum) {}
  std::size_t stratum() const noexcept { return stratum_; }

 private:
  std::size_t stratum_;
};

class SelectionEmptyError : public Error {
 public:
  explicit SelectionEmptyError(const std::string& message)
      : Error(ErrorCategory::numerical, "selection_empty", message) {}
};

class DegenerateReweightError : public Error {
 public:
  explicit DegenerateReweightError(const std::string& message)
      : Error(ErrorCategory::numerical, "degenerate_reweight", message) {}
};

}  // namespace drbayes
