#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "transweight/dataset.hpp"
#include "transweight/membership_model.hpp"

namespace transweight {

/// Weighted product-limit curve. `survival[k]` holds just after `times[k]`.
struct SurvivalCurve {
  std::vector<double> times;
  std::vector<double> survival;
  std::vector<double> weighted_at_risk;
  std::vector<double> weighted_events;
  /// Largest follow-up time among positively weighted subjects.
  double max_followup = 0.0;

  /// Right-continuous step function; 1 before the first event time.
  double value_at(double t) const;
  double final_survival() const { return survival.empty() ? 1.0 : survival.back(); }
};

struct PfsDifference {
  double horizon = 0.0;
  double s1 = 1.0;
  double s0 = 1.0;
  /// s1 - s0; positive favours the intervention arm.
  double difference = 0.0;
};

/// Subjects sorted once by follow-up (events before censorings at equal
/// times) so the product-limit estimate can be re-evaluated cheaply under
/// many weight vectors. Weight vectors are indexed by original position.
class SortedFollowup {
 public:
  SortedFollowup() = default;
  SortedFollowup(std::span<const double> times, std::span<const int> events,
                 std::span<const std::size_t> subset);

  SurvivalCurve curve(std::span<const double> weights) const;
  /// Throws EstimationError for zero total weight or an undefined tail.
  double survival_at(std::span<const double> weights, double horizon) const;
  std::size_t size() const noexcept { return index_.size(); }

 private:
  template <typename Visit>
  double walk(std::span<const double> weights, Visit&& visit) const;

  std::vector<std::size_t> index_;
  std::vector<double> time_;
  std::vector<int> event_;
  /// Start offset of each distinct-time group, plus a terminal sentinel.
  std::vector<std::size_t> group_start_;
};

/// Per-arm sorted follow-up for a two-arm dataset.
class FollowupIndex {
 public:
  FollowupIndex(std::span<const double> times, std::span<const int> events,
                std::span<const int> arms);
  explicit FollowupIndex(const TrialDataset& ds);

  const SortedFollowup& arm(int a) const { return arms_.at(static_cast<std::size_t>(a)); }
  PfsDifference difference_at(std::span<const double> weights, double horizon) const;

 private:
  std::array<SortedFollowup, 2> arms_;
};

SurvivalCurve weighted_km(std::span<const SubjectRecord> records, std::span<const double> weights);

/// Survival at `horizon` read off a curve; throws for an undefined tail.
double survival_at(const SurvivalCurve& curve, double horizon);

PfsDifference pfs_difference_at(const WeightedCohort& cohort, double horizon);

/// Columns: time, survival, weighted_at_risk, weighted_events.
void write_curve_csv(std::ostream& out, const SurvivalCurve& curve);

}  // namespace transweight
