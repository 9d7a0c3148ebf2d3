#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace hypdiag {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Index of a named column, −1 if absent.
  int column(const std::string& name) const;
};

/// Comma-separated numeric table with one header row; '#' lines are skipped.
CsvTable read_csv(const std::string& path);

/// Shortest round-trip representation, so rewritten files are byte-stable.
std::string format_double(double v);

/// Writes `manifest` as pretty JSON.
void write_json(const std::string& path, const nlohmann::ordered_json& manifest);

}  // namespace hypdiag
