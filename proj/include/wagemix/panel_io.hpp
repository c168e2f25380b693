#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "wagemix/config.hpp"
#include "wagemix/panel.hpp"

namespace wagemix::panel {

/// Maps Observation fields to input header names. Defaults to the field
/// names themselves; override with `column.<field> = <header>` config keys.
/// If the log_wage header is absent but a `wage` (level) column exists, the
/// log is taken and non-positive levels are rejected.
struct ColumnMap {
  std::map<std::string, std::string> header_for;

  static ColumnMap defaults();
  static ColumnMap from_config(const KeyValueConfig& cfg);
};

struct ReadResult {
  std::vector<Observation> rows;
  std::size_t rejected_nonpositive_wage = 0;
};

/// Reads delimited text with a header row. The delimiter is tab if the header
/// line contains one, else comma. Required columns: worker_id, firm_id, year,
/// gender and a wage column; the rest fall back to Observation defaults.
ReadResult read_contracts(std::istream& in, const ColumnMap& columns = ColumnMap::defaults());
ReadResult read_contracts_file(const std::string& path,
                               const ColumnMap& columns = ColumnMap::defaults());

/// Writes rows in the default column layout (comma-delimited).
void write_observations(std::ostream& out, const std::vector<Observation>& rows);

/// Ingestion report as a JSON object text, keys sorted.
std::string report_json(const IngestionReport& report);

}  // namespace wagemix::panel
