#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace transweight {

enum class CovariateKind { Binary, Categorical, Continuous };

const char* to_string(CovariateKind kind) noexcept;

struct CovariateEntry {
  std::string name;
  CovariateKind kind = CovariateKind::Binary;
  /// Categorical levels; the first one is the reference cell.
  std::vector<std::string> levels;
  /// Physical CSV column; empty means the same as `name`.
  std::string column;

  const std::string& physical_column() const { return column.empty() ? name : column; }
  /// Number of design-matrix columns this covariate expands to.
  std::size_t design_width() const;
};

/// Ordered covariate declarations. Covariate values in a SubjectRecord are
/// aligned with `entries`; categorical values are stored as the level index.
class CovariateSpec {
 public:
  CovariateSpec() = default;
  explicit CovariateSpec(std::vector<CovariateEntry> entries);

  const std::vector<CovariateEntry>& entries() const noexcept { return entries_; }
  std::size_t arity() const noexcept { return entries_.size(); }
  std::optional<std::size_t> index_of(const std::string& name) const;
  const CovariateEntry& at(std::size_t i) const { return entries_.at(i); }

  static CovariateSpec from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

 private:
  std::vector<CovariateEntry> entries_;
};

struct SubjectRecord {
  std::string id;
  int arm = 0;
  /// Follow-up in days.
  double time = 0.0;
  int event = 0;
  int member = 0;
  std::vector<double> covariates;

  bool operator==(const SubjectRecord&) const = default;
};

/// Logical-to-physical column names. When `member_level` is set the member
/// column is compared against it as a string instead of parsed as a boolean.
struct ColumnMap {
  std::string id = "id";
  std::string arm = "arm";
  std::string time = "time";
  std::string event = "event";
  std::string member = "member";
  std::optional<std::string> member_level;

  static ColumnMap from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

struct TrialDataset {
  CovariateSpec spec;
  std::vector<SubjectRecord> records;
  std::size_t dropped_incomplete = 0;

  std::size_t size() const noexcept { return records.size(); }
  std::size_t member_count() const;
  std::size_t nonmember_count() const { return size() - member_count(); }

  /// Throws DataError when a record is malformed or a class/arm is absent.
  void validate() const;
};

/// Covariate spec plus column mapping and the covariates entering the
/// membership model, as read from a JSON schema file.
struct InputSchema {
  CovariateSpec spec;
  ColumnMap columns;
  /// Empty means every covariate whose column is not the member column.
  std::vector<std::string> model_covariates;

  static InputSchema from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

InputSchema load_input_schema(const std::filesystem::path& path);

TrialDataset load_dataset(const std::filesystem::path& path, const CovariateSpec& spec,
                          const ColumnMap& columns);

/// Parses CSV from a stream; `source` only labels error messages.
TrialDataset read_dataset(std::istream& in, const CovariateSpec& spec, const ColumnMap& columns,
                          const std::string& source = "<stream>");

/// Writes using logical column names (id, arm, time, event, member, then
/// covariate names); categorical cells are written as their level strings.
void write_dataset(std::ostream& out, const TrialDataset& ds);

struct DesignMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> labels;
};

/// Intercept column, then per covariate in spec order: reference-cell dummies
/// for categoricals, the raw value otherwise. Columns always follow spec
/// order; a non-empty `covariates` list selects which covariates appear.
DesignMatrix encode_design_matrix(const TrialDataset& ds,
                                  std::span<const std::string> covariates = {});

/// Parses {0,1,true,false} case-insensitively.
std::optional<int> parse_bool(std::string_view cell);

}  // namespace transweight
