#pragma once

#include <stdexcept>
#include <string>

namespace transweight {

/// Broad failure class; the CLI maps each one to an exit code.
enum class ErrorCategory { Config, Data, Model, Estimation };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string module, const std::string& what)
      : std::runtime_error(what), category_(category), module_(std::move(module)) {}

  ErrorCategory category() const noexcept { return category_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorCategory category_;
  std::string module_;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string module, const std::string& what)
      : Error(ErrorCategory::Config, std::move(module), what) {}
};

/// Schema, row-level and empty-dataset problems.
class DataError : public Error {
 public:
  enum class Kind { Schema, Row, Empty, Invariant };

  DataError(Kind kind, const std::string& what)
      : Error(ErrorCategory::Data, "dataset", what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Failures of the membership model fit.
class ModelError : public Error {
 public:
  enum class Kind { NonConvergence, Separation, Collinearity, WeightOverflow, Input };

  ModelError(Kind kind, const std::string& what)
      : Error(ErrorCategory::Model, "membership_model", what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class EstimationError : public Error {
 public:
  enum class Kind { DegenerateCohort, UndefinedTail, UnstableBootstrap, UnstableMonteCarlo, Input };

  EstimationError(Kind kind, std::string module, const std::string& what)
      : Error(ErrorCategory::Estimation, std::move(module), what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

const char* to_string(ModelError::Kind kind) noexcept;
const char* to_string(EstimationError::Kind kind) noexcept;

}  // namespace transweight
