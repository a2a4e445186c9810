#include "transweight/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "transweight/error.hpp"

namespace transweight {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool is_missing(std::string_view cell) { return cell.empty() || cell == "NA"; }

// Splits one CSV line; double quotes group fields and "" escapes a quote.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.emplace_back(trim(cur));
  return cells;
}

std::optional<double> parse_double(std::string_view cell) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && cell.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) return std::nullopt;
  return value;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

CovariateKind kind_from_string(const std::string& s) {
  if (s == "binary") return CovariateKind::Binary;
  if (s == "categorical") return CovariateKind::Categorical;
  if (s == "continuous") return CovariateKind::Continuous;
  throw DataError(DataError::Kind::Schema, "unknown covariate kind '" + s + "'");
}

}  // namespace

const char* to_string(CovariateKind kind) noexcept {
  switch (kind) {
    case CovariateKind::Binary: return "binary";
    case CovariateKind::Categorical: return "categorical";
    case CovariateKind::Continuous: return "continuous";
  }
  return "unknown";
}

std::optional<int> parse_bool(std::string_view cell) {
  cell = trim(cell);
  if (cell == "0") return 0;
  if (cell == "1") return 1;
  std::string lower(cell);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "true") return 1;
  if (lower == "false") return 0;
  return std::nullopt;
}

std::size_t CovariateEntry::design_width() const {
  return kind == CovariateKind::Categorical ? levels.size() - 1 : 1;
}

CovariateSpec::CovariateSpec(std::vector<CovariateEntry> entries) : entries_(std::move(entries)) {
  std::set<std::string> names;
  for (const auto& e : entries_) {
    if (e.name.empty()) throw DataError(DataError::Kind::Schema, "covariate with empty name");
    if (!names.insert(e.name).second)
      throw DataError(DataError::Kind::Schema, "duplicate covariate name '" + e.name + "'");
    if (e.kind == CovariateKind::Categorical) {
      if (e.levels.empty())
        throw DataError(DataError::Kind::Schema,
                        "categorical covariate '" + e.name + "' declares no levels");
      std::set<std::string> levels(e.levels.begin(), e.levels.end());
      if (levels.size() != e.levels.size())
        throw DataError(DataError::Kind::Schema,
                        "categorical covariate '" + e.name + "' has duplicate levels");
    }
  }
}

std::optional<std::size_t> CovariateSpec::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

CovariateSpec CovariateSpec::from_json(const json& doc) {
  if (!doc.is_array()) throw DataError(DataError::Kind::Schema, "'covariates' must be an array");
  std::vector<CovariateEntry> entries;
  for (const auto& item : doc) {
    CovariateEntry e;
    try {
      e.name = item.at("name").get<std::string>();
      e.kind = kind_from_string(item.value("kind", std::string("binary")));
      if (item.contains("levels")) {
        for (const auto& level : item.at("levels")) {
          e.levels.push_back(level.is_string() ? level.get<std::string>() : level.dump());
        }
      }
      e.column = item.value("column", std::string());
    } catch (const json::exception& ex) {
      throw DataError(DataError::Kind::Schema, std::string("bad covariate entry: ") + ex.what());
    }
    entries.push_back(std::move(e));
  }
  return CovariateSpec(std::move(entries));
}

json CovariateSpec::to_json() const {
  json out = json::array();
  for (const auto& e : entries_) {
    json item = {{"name", e.name}, {"kind", to_string(e.kind)}};
    if (e.kind == CovariateKind::Categorical) item["levels"] = e.levels;
    if (!e.column.empty()) item["column"] = e.column;
    out.push_back(std::move(item));
  }
  return out;
}

ColumnMap ColumnMap::from_json(const json& doc) {
  ColumnMap map;
  map.id = doc.value("id", map.id);
  map.arm = doc.value("arm", map.arm);
  map.time = doc.value("time", map.time);
  map.event = doc.value("event", map.event);
  map.member = doc.value("member", map.member);
  if (doc.contains("member_level")) map.member_level = doc.at("member_level").get<std::string>();
  return map;
}

json ColumnMap::to_json() const {
  json out = {{"id", id}, {"arm", arm}, {"time", time}, {"event", event}, {"member", member}};
  if (member_level) out["member_level"] = *member_level;
  return out;
}

InputSchema InputSchema::from_json(const json& doc) {
  InputSchema schema;
  if (!doc.contains("covariates"))
    throw DataError(DataError::Kind::Schema, "schema lacks a 'covariates' array");
  schema.spec = CovariateSpec::from_json(doc.at("covariates"));
  if (doc.contains("columns")) schema.columns = ColumnMap::from_json(doc.at("columns"));
  if (doc.contains("model_covariates")) {
    schema.model_covariates = doc.at("model_covariates").get<std::vector<std::string>>();
    for (const auto& name : schema.model_covariates) {
      if (!schema.spec.index_of(name))
        throw DataError(DataError::Kind::Schema,
                        "model covariate '" + name + "' is not declared in 'covariates'");
    }
  }
  return schema;
}

json InputSchema::to_json() const {
  json out = {{"covariates", spec.to_json()}, {"columns", columns.to_json()}};
  if (!model_covariates.empty()) out["model_covariates"] = model_covariates;
  return out;
}

InputSchema load_input_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::Schema, "cannot open schema file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& ex) {
    throw DataError(DataError::Kind::Schema,
                    "schema file " + path.string() + " is not valid JSON: " + ex.what());
  }
  return InputSchema::from_json(doc);
}

std::size_t TrialDataset::member_count() const {
  return static_cast<std::size_t>(std::count_if(
      records.begin(), records.end(), [](const SubjectRecord& r) { return r.member == 1; }));
}

void TrialDataset::validate() const {
  if (records.empty()) throw DataError(DataError::Kind::Empty, "dataset has no usable rows");
  std::size_t members = 0;
  std::size_t arm1 = 0;
  for (const auto& r : records) {
    if (!(r.time >= 0.0) || (r.event != 0 && r.event != 1) || (r.arm != 0 && r.arm != 1) ||
        (r.member != 0 && r.member != 1))
      throw DataError(DataError::Kind::Invariant, "record '" + r.id + "' has out-of-range fields");
    if (r.covariates.size() != spec.arity())
      throw DataError(DataError::Kind::Invariant,
                      "record '" + r.id + "' covariate count does not match the covariate spec");
    members += static_cast<std::size_t>(r.member);
    arm1 += static_cast<std::size_t>(r.arm);
  }
  if (members == 0) throw DataError(DataError::Kind::Invariant, "no members present");
  if (members == records.size()) throw DataError(DataError::Kind::Invariant, "no non-members present");
  if (arm1 == 0) throw DataError(DataError::Kind::Invariant, "no records in arm 1");
  if (arm1 == records.size()) throw DataError(DataError::Kind::Invariant, "no records in arm 0");
}

TrialDataset read_dataset(std::istream& in, const CovariateSpec& spec, const ColumnMap& columns,
                          const std::string& source) {
  std::string line;
  if (!std::getline(in, line))
    throw DataError(DataError::Kind::Schema, source + ": missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);

  auto column_index = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw DataError(DataError::Kind::Schema, source + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = column_index(columns.id);
  const std::size_t arm_col = column_index(columns.arm);
  const std::size_t time_col = column_index(columns.time);
  const std::size_t event_col = column_index(columns.event);
  const std::size_t member_col = column_index(columns.member);
  std::vector<std::size_t> cov_cols;
  for (const auto& e : spec.entries()) cov_cols.push_back(column_index(e.physical_column()));

  TrialDataset ds;
  ds.spec = spec;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError(DataError::Kind::Row, source + ":" + std::to_string(line_no) + ": expected " +
                                                std::to_string(header.size()) + " cells, found " +
                                                std::to_string(cells.size()));
    }
    auto row_error = [&](const std::string& what) {
      return DataError(DataError::Kind::Row, source + ":" + std::to_string(line_no) + ": " + what);
    };

    bool incomplete = is_missing(cells[id_col]) || is_missing(cells[arm_col]) ||
                      is_missing(cells[time_col]) || is_missing(cells[event_col]) ||
                      is_missing(cells[member_col]);
    for (std::size_t c : cov_cols) incomplete = incomplete || is_missing(cells[c]);
    if (incomplete) {
      ++ds.dropped_incomplete;
      continue;
    }

    SubjectRecord r;
    r.id = cells[id_col];
    auto boolean = [&](std::size_t col, const std::string& what) {
      auto v = parse_bool(cells[col]);
      if (!v) throw row_error(what + " value '" + cells[col] + "' is not a boolean");
      return *v;
    };
    r.arm = boolean(arm_col, "arm");
    r.event = boolean(event_col, "event");
    if (columns.member_level) {
      r.member = cells[member_col] == *columns.member_level ? 1 : 0;
    } else {
      r.member = boolean(member_col, "member");
    }
    auto t = parse_double(cells[time_col]);
    if (!t) throw row_error("time value '" + cells[time_col] + "' is not numeric");
    if (!(*t >= 0.0)) throw row_error("time value '" + cells[time_col] + "' is negative");
    r.time = *t;

    r.covariates.reserve(spec.arity());
    for (std::size_t k = 0; k < spec.arity(); ++k) {
      const auto& entry = spec.at(k);
      const std::string& cell = cells[cov_cols[k]];
      switch (entry.kind) {
        case CovariateKind::Binary:
          r.covariates.push_back(boolean(cov_cols[k], entry.name));
          break;
        case CovariateKind::Categorical: {
          auto it = std::find(entry.levels.begin(), entry.levels.end(), cell);
          if (it == entry.levels.end())
            throw row_error("unknown level '" + cell + "' for categorical covariate '" +
                            entry.name + "'");
          r.covariates.push_back(static_cast<double>(it - entry.levels.begin()));
          break;
        }
        case CovariateKind::Continuous: {
          auto v = parse_double(cell);
          if (!v) throw row_error(entry.name + " value '" + cell + "' is not numeric");
          r.covariates.push_back(*v);
          break;
        }
      }
    }
    ds.records.push_back(std::move(r));
  }
  if (ds.records.empty())
    throw DataError(DataError::Kind::Empty, source + ": no usable rows after complete-case filtering");
  ds.validate();
  return ds;
}

TrialDataset load_dataset(const std::filesystem::path& path, const CovariateSpec& spec,
                          const ColumnMap& columns) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::Schema, "cannot open input file " + path.string());
  return read_dataset(in, spec, columns, path.string());
}

void write_dataset(std::ostream& out, const TrialDataset& ds) {
  out << "id,arm,time,event,member";
  for (const auto& e : ds.spec.entries()) out << ',' << quote_if_needed(e.name);
  out << '\n';
  for (const auto& r : ds.records) {
    out << quote_if_needed(r.id) << ',' << r.arm << ',' << format_double(r.time) << ',' << r.event
        << ',' << r.member;
    for (std::size_t k = 0; k < ds.spec.arity(); ++k) {
      const auto& entry = ds.spec.at(k);
      out << ',';
      if (entry.kind == CovariateKind::Categorical) {
        out << quote_if_needed(entry.levels.at(static_cast<std::size_t>(r.covariates[k])));
      } else if (entry.kind == CovariateKind::Binary) {
        out << static_cast<int>(r.covariates[k]);
      } else {
        out << format_double(r.covariates[k]);
      }
    }
    out << '\n';
  }
}

DesignMatrix encode_design_matrix(const TrialDataset& ds, std::span<const std::string> covariates) {
  std::vector<std::size_t> used;
  for (std::size_t k = 0; k < ds.spec.arity(); ++k) {
    const auto& name = ds.spec.at(k).name;
    if (covariates.empty() ||
        std::find(covariates.begin(), covariates.end(), name) != covariates.end())
      used.push_back(k);
  }
  for (const auto& name : covariates) {
    if (!ds.spec.index_of(name))
      throw DataError(DataError::Kind::Schema, "unknown covariate '" + name + "'");
  }

  DesignMatrix dm;
  dm.labels.push_back("(intercept)");
  for (std::size_t k : used) {
    const auto& e = ds.spec.at(k);
    if (e.kind == CovariateKind::Categorical) {
      for (std::size_t l = 1; l < e.levels.size(); ++l) dm.labels.push_back(e.name + "=" + e.levels[l]);
    } else {
      dm.labels.push_back(e.name);
    }
  }

  const auto n = static_cast<Eigen::Index>(ds.size());
  dm.values = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(dm.labels.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = ds.records[static_cast<std::size_t>(i)];
    Eigen::Index col = 0;
    dm.values(i, col++) = 1.0;
    for (std::size_t k : used) {
      const auto& e = ds.spec.at(k);
      if (e.kind == CovariateKind::Categorical) {
        const auto level = static_cast<Eigen::Index>(r.covariates[k]);
        if (level > 0) dm.values(i, col + level - 1) = 1.0;
        col += static_cast<Eigen::Index>(e.levels.size()) - 1;
      } else {
        dm.values(i, col++) = r.covariates[k];
      }
    }
  }
  return dm;
}

}  // namespace transweight
