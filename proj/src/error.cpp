#include "transweight/error.hpp"

namespace transweight {

const char* to_string(ModelError::Kind kind) noexcept {
  switch (kind) {
    case ModelError::Kind::NonConvergence: return "non-convergence";
    case ModelError::Kind::Separation: return "separation";
    case ModelError::Kind::Collinearity: return "collinearity";
    case ModelError::Kind::WeightOverflow: return "weight-overflow";
    case ModelError::Kind::Input: return "invalid-input";
  }
  return "unknown";
}

const char* to_string(EstimationError::Kind kind) noexcept {
  switch (kind) {
    case EstimationError::Kind::DegenerateCohort: return "degenerate-cohort";
    case EstimationError::Kind::UndefinedTail: return "undefined-tail";
    case EstimationError::Kind::UnstableBootstrap: return "unstable-bootstrap";
    case EstimationError::Kind::UnstableMonteCarlo: return "unstable-monte-carlo";
    case EstimationError::Kind::Input: return "invalid-input";
  }
  return "unknown";
}

}  // namespace transweight
