#include "hypdiag/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "hypdiag/errors.hpp"

namespace hypdiag {

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<std::string> cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw InputError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                       " columns, found " + std::to_string(cells.size()));
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::string& c = cells[i];
      const auto res = std::from_chars(c.data(), c.data() + c.size(), row[i]);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size())
        throw InputError(path + ":" + std::to_string(lineno) + ": not a number: '" + c + "'");
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw InputError(path + ": empty table");
  return t;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_json(const std::string& path, const nlohmann::ordered_json& manifest) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << manifest.dump(2) << "\n";
}

}  // namespace hypdiag
