#pragma once

#include <string>
#include <vector>

#include "stagdid/common.hpp"

namespace stagdid {

// Minimal CSV support: header row, comma separator, double quotes around
// fields containing commas/quotes/newlines. Enough for the panel files this
// project reads and writes; not a general-purpose parser.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column, or -1.
  int column(const std::string& name) const;
  // Same but throws SchemaError naming the column.
  int require_column(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);
CsvTable parse_csv(const std::string& text);

std::string csv_escape(const std::string& field);

}  // namespace stagdid
