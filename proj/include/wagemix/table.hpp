#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace wagemix {

/// Delimited output table with a versioned schema line:
///   #schema=<name> version=<n>
///   col1<TAB>col2...
/// Cells are stored as text so re-reading and re-emitting is byte-identical.
struct Table {
  std::string schema;
  int version = 1;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> cells);
};

// Shortest decimal text that parses back to the same double.
std::string format_number(double x);
std::string format_number(long long x);

void write_table(std::ostream& out, const Table& table, char delimiter = '\t');
Table read_table(std::istream& in, char delimiter = '\t');

}  // namespace wagemix
