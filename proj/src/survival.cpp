#include "transweight/survival.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include "transweight/error.hpp"
#include "transweight/text_format.hpp"

namespace transweight {

namespace {

EstimationError degenerate(const std::string& what) {
  return EstimationError(EstimationError::Kind::DegenerateCohort, "survival", what);
}

EstimationError undefined_tail(double horizon, double max_followup) {
  return EstimationError(EstimationError::Kind::UndefinedTail, "survival",
                         "horizon " + format_number(horizon) + " exceeds the largest follow-up " +
                             format_number(max_followup) +
                             " while survival is still positive; the curve is undefined there");
}

}  // namespace

double SurvivalCurve::value_at(double t) const {
  auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

SortedFollowup::SortedFollowup(std::span<const double> times, std::span<const int> events,
                               std::span<const std::size_t> subset)
    : index_(subset.begin(), subset.end()) {
  std::stable_sort(index_.begin(), index_.end(), [&](std::size_t a, std::size_t b) {
    if (times[a] != times[b]) return times[a] < times[b];
    return events[a] > events[b];
  });
  time_.reserve(index_.size());
  event_.reserve(index_.size());
  for (std::size_t i : index_) {
    time_.push_back(times[i]);
    event_.push_back(events[i] != 0 ? 1 : 0);
  }
  for (std::size_t k = 0; k < time_.size(); ++k) {
    if (k == 0 || time_[k] != time_[k - 1]) group_start_.push_back(k);
  }
  group_start_.push_back(time_.size());
}

// Calls visit(time, at_risk, events, survival_after) for every distinct time
// carrying positive weight and returns the total weight. At-risk weights are
// suffix sums, so the last group's at-risk weight equals its own weight.
template <typename Visit>
double SortedFollowup::walk(std::span<const double> weights, Visit&& visit) const {
  const std::size_t groups = group_start_.empty() ? 0 : group_start_.size() - 1;
  std::vector<double> group_weight(groups, 0.0);
  std::vector<double> group_events(groups, 0.0);
  for (std::size_t g = 0; g < groups; ++g) {
    double w = 0.0;
    double d = 0.0;
    for (std::size_t k = group_start_[g]; k < group_start_[g + 1]; ++k) {
      const double wk = weights[index_[k]];
      if (wk < 0.0) throw degenerate("negative weight");
      w += wk;
      if (event_[k]) d += wk;
    }
    group_weight[g] = w;
    group_events[g] = d;
  }
  std::vector<double> at_risk(groups, 0.0);
  double suffix = 0.0;
  for (std::size_t g = groups; g-- > 0;) {
    suffix += group_weight[g];
    at_risk[g] = suffix;
  }
  if (!(suffix > 0.0)) throw degenerate("all weights are zero");

  double s = 1.0;
  for (std::size_t g = 0; g < groups; ++g) {
    if (group_weight[g] <= 0.0) continue;
    if (group_events[g] > 0.0) s *= 1.0 - group_events[g] / at_risk[g];
    visit(time_[group_start_[g]], at_risk[g], group_events[g], s);
  }
  return suffix;
}

SurvivalCurve SortedFollowup::curve(std::span<const double> weights) const {
  SurvivalCurve c;
  walk(weights, [&](double t, double n, double d, double s) {
    c.max_followup = t;
    if (d > 0.0) {
      c.times.push_back(t);
      c.survival.push_back(s);
      c.weighted_at_risk.push_back(n);
      c.weighted_events.push_back(d);
    }
  });
  return c;
}

double SortedFollowup::survival_at(std::span<const double> weights, double horizon) const {
  double at_horizon = 1.0;
  double last = 1.0;
  double max_followup = 0.0;
  walk(weights, [&](double t, double, double, double s) {
    if (t <= horizon) at_horizon = s;
    last = s;
    max_followup = t;
  });
  if (horizon > max_followup && last > 0.0) throw undefined_tail(horizon, max_followup);
  return at_horizon;
}

FollowupIndex::FollowupIndex(std::span<const double> times, std::span<const int> events,
                             std::span<const int> arms) {
  std::array<std::vector<std::size_t>, 2> members;
  for (std::size_t i = 0; i < arms.size(); ++i) members.at(arms[i] != 0 ? 1 : 0).push_back(i);
  for (int a = 0; a < 2; ++a) arms_[a] = SortedFollowup(times, events, members[a]);
}

namespace {

struct Columns {
  std::vector<double> time;
  std::vector<int> event;
  std::vector<int> arm;
};

Columns columns_of(std::span<const SubjectRecord> records) {
  Columns c;
  for (const auto& r : records) {
    c.time.push_back(r.time);
    c.event.push_back(r.event);
    c.arm.push_back(r.arm);
  }
  return c;
}

}  // namespace

FollowupIndex::FollowupIndex(const TrialDataset& ds) {
  const Columns c = columns_of(ds.records);
  *this = FollowupIndex(c.time, c.event, c.arm);
}

PfsDifference FollowupIndex::difference_at(std::span<const double> weights, double horizon) const {
  PfsDifference out;
  out.horizon = horizon;
  for (int a = 0; a < 2; ++a) {
    if (arms_[a].size() == 0) throw degenerate("arm " + std::to_string(a) + " is empty");
  }
  auto arm_survival = [&](int a) {
    try {
      return arms_[a].survival_at(weights, horizon);
    } catch (const EstimationError& e) {
      throw EstimationError(e.kind(), e.module(), "arm " + std::to_string(a) + ": " + e.what());
    }
  };
  out.s1 = arm_survival(1);
  out.s0 = arm_survival(0);
  out.difference = out.s1 - out.s0;
  return out;
}

SurvivalCurve weighted_km(std::span<const SubjectRecord> records, std::span<const double> weights) {
  if (records.empty()) throw degenerate("no subjects");
  if (weights.size() != records.size()) throw degenerate("weights do not align with subjects");
  const Columns c = columns_of(records);
  std::vector<std::size_t> all(records.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return SortedFollowup(c.time, c.event, all).curve(weights);
}

double survival_at(const SurvivalCurve& curve, double horizon) {
  if (horizon > curve.max_followup && curve.final_survival() > 0.0)
    throw undefined_tail(horizon, curve.max_followup);
  return curve.value_at(horizon);
}

PfsDifference pfs_difference_at(const WeightedCohort& cohort, double horizon) {
  return FollowupIndex(cohort.dataset()).difference_at(cohort.weights(), horizon);
}

void write_curve_csv(std::ostream& out, const SurvivalCurve& curve) {
  out << "time,survival,weighted_at_risk,weighted_events\n";
  for (std::size_t k = 0; k < curve.times.size(); ++k) {
    out << format_number(curve.times[k]) << ',' << format_number(curve.survival[k]) << ','
        << format_number(curve.weighted_at_risk[k]) << ',' << format_number(curve.weighted_events[k])
        << '\n';
  }
}

}  // namespace transweight
