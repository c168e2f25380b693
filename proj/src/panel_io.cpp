#include "wagemix/panel_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>

#include "json.hpp"

#include "wagemix/error.hpp"
#include "wagemix/table.hpp"

namespace wagemix::panel {

namespace {

const std::vector<std::string> kFields = {
    "worker_id", "firm_id", "year",   "log_wage", "hours",          "gender",        "age",
    "education", "occupation", "sector", "tenure", "contract_span", "private_sector"};

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == delim) {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(cell);
  return cells;
}

template <class T>
T parse_cell(const std::string& text, const std::string& field, std::size_t line) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw DataError("line " + std::to_string(line) + ": cannot parse " + field + " value '" +
                    text + "'");
  }
  return value;
}

// from_chars rejects "nan"/"inf" spellings on some inputs; handle them so
// such rows reach the cleaning report instead of aborting the read.
double parse_real(const std::string& text, const std::string& field, std::size_t line) {
  if (text == "nan" || text == "NaN" || text == "NA" || text.empty()) return std::nan("");
  if (text == "inf" || text == "Inf") return HUGE_VAL;
  if (text == "-inf" || text == "-Inf") return -HUGE_VAL;
  return parse_cell<double>(text, field, line);
}

Gender parse_gender(const std::string& s, std::size_t line) {
  if (s == "F" || s == "f" || s == "0") return Gender::F;
  if (s == "M" || s == "m" || s == "1") return Gender::M;
  throw DataError("line " + std::to_string(line) + ": unknown gender '" + s + "'");
}

Education parse_education(const std::string& s, std::size_t line) {
  for (int i = 0; i < kEducationLevels; ++i) {
    const auto e = static_cast<Education>(i);
    if (s == to_string(e) || s == std::to_string(i)) return e;
  }
  throw DataError("line " + std::to_string(line) + ": unknown education '" + s + "'");
}

Sector parse_sector(const std::string& s, std::size_t line) {
  for (int i = 0; i < kSectors; ++i) {
    const auto e = static_cast<Sector>(i);
    if (s == to_string(e) || s == std::to_string(i)) return e;
  }
  throw DataError("line " + std::to_string(line) + ": unknown sector '" + s + "'");
}

bool parse_bool(const std::string& s, std::size_t line) {
  if (s == "1" || s == "true" || s == "TRUE") return true;
  if (s == "0" || s == "false" || s == "FALSE") return false;
  throw DataError("line " + std::to_string(line) + ": cannot parse flag '" + s + "'");
}

}  // namespace

ColumnMap ColumnMap::defaults() {
  ColumnMap map;
  for (const auto& f : kFields) map.header_for[f] = f;
  map.header_for["wage"] = "wage";
  return map;
}

ColumnMap ColumnMap::from_config(const KeyValueConfig& cfg) {
  ColumnMap map = defaults();
  for (const auto& [key, value] : cfg.entries()) {
    if (key.rfind("column.", 0) != 0) continue;
    const std::string field = key.substr(7);
    if (!map.header_for.count(field)) throw ConfigError("unknown column mapping '" + key + "'");
    map.header_for[field] = value;
  }
  return map;
}

ReadResult read_contracts(std::istream& in, const ColumnMap& columns) {
  std::string header;
  if (!std::getline(in, header)) throw DataError("input has no header row");
  const char delim = header.find('\t') != std::string::npos ? '\t' : ',';
  const auto names = split_line(header, delim);

  std::map<std::string, std::size_t> pos;
  for (const auto& [field, name] : columns.header_for) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) pos[field] = i;
    }
  }
  for (const char* required : {"worker_id", "firm_id", "year", "gender"}) {
    if (!pos.count(required)) {
      throw DataError(std::string("input is missing required column '") +
                      columns.header_for.at(required) + "'");
    }
  }
  const bool level_wage = !pos.count("log_wage");
  if (level_wage && !pos.count("wage")) throw DataError("input has neither log_wage nor wage column");

  ReadResult result;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_line(line, delim);
    if (cells.size() != names.size()) {
      throw DataError("line " + std::to_string(lineno) + ": expected " +
                      std::to_string(names.size()) + " fields, got " +
                      std::to_string(cells.size()));
    }
    auto cell = [&](const char* field) -> std::optional<std::string> {
      auto it = pos.find(field);
      if (it == pos.end()) return std::nullopt;
      return cells[it->second];
    };

    Observation o;
    o.worker_id = WorkerId(*cell("worker_id"));
    o.firm_id = FirmId(*cell("firm_id"));
    o.year = parse_cell<int>(*cell("year"), "year", lineno);
    o.gender = parse_gender(*cell("gender"), lineno);
    if (level_wage) {
      const double w = parse_real(*cell("wage"), "wage", lineno);
      if (std::isfinite(w) && w <= 0.0) {
        ++result.rejected_nonpositive_wage;
        continue;
      }
      o.log_wage = std::log(w);
    } else {
      o.log_wage = parse_real(*cell("log_wage"), "log_wage", lineno);
    }
    if (auto v = cell("hours")) o.hours = parse_real(*v, "hours", lineno);
    if (auto v = cell("age")) o.age = parse_cell<int>(*v, "age", lineno);
    if (auto v = cell("education")) o.education = parse_education(*v, lineno);
    if (auto v = cell("occupation")) o.occupation = parse_cell<int>(*v, "occupation", lineno);
    if (auto v = cell("sector")) o.sector = parse_sector(*v, lineno);
    if (auto v = cell("tenure")) o.tenure = parse_real(*v, "tenure", lineno);
    if (auto v = cell("contract_span")) {
      o.contract_span = parse_cell<int>(*v, "contract_span", lineno);
    }
    if (auto v = cell("private_sector")) o.private_sector = parse_bool(*v, lineno);
    result.rows.push_back(std::move(o));
  }
  return result;
}

ReadResult read_contracts_file(const std::string& path, const ColumnMap& columns) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input '" + path + "'");
  return read_contracts(in, columns);
}

void write_observations(std::ostream& out, const std::vector<Observation>& rows) {
  for (std::size_t i = 0; i < kFields.size(); ++i) out << (i ? "," : "") << kFields[i];
  out << '\n';
  for (const auto& o : rows) {
    out << o.worker_id.value << ',' << o.firm_id.value << ',' << o.year << ','
        << format_number(o.log_wage) << ',' << format_number(o.hours) << ','
        << to_string(o.gender) << ',' << o.age << ',' << to_string(o.education) << ','
        << o.occupation << ',' << to_string(o.sector) << ',' << format_number(o.tenure) << ','
        << o.contract_span << ',' << (o.private_sector ? 1 : 0) << '\n';
  }
}

std::string report_json(const IngestionReport& r) {
  nlohmann::json j;
  j["rows_read"] = r.rows_read;
  j["rows_kept"] = r.rows_kept;
  j["rejected_nonfinite_wage"] = r.rejected_nonfinite_wage;
  j["rejected_nonpositive_wage"] = r.rejected_nonpositive_wage;
  j["rejected_invalid_age"] = r.rejected_invalid_age;
  j["rejected_nonpositive_hours"] = r.rejected_nonpositive_hours;
  j["dropped_secondary_contracts"] = r.dropped_secondary_contracts;
  j["dropped_short_hours"] = r.dropped_short_hours;
  j["dropped_non_private"] = r.dropped_non_private;
  return j.dump(2);
}

}  // namespace wagemix::panel
