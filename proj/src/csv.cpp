#include "rse/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace rse::csv {

std::string format(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::size_t Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw std::runtime_error("CSV column '" + name + "' not found");
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Table read(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  Table t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      t.header = split(line);
      first = false;
    } else {
      t.rows.push_back(split(line));
      if (t.rows.back().size() != t.header.size())
        throw std::runtime_error(path.string() + ": row " + std::to_string(t.rows.size()) +
                                 " has " + std::to_string(t.rows.back().size()) +
                                 " fields, header has " + std::to_string(t.header.size()));
    }
  }
  return t;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

double to_double(const std::string& field) {
  std::size_t used = 0;
  const double v = std::stod(field, &used);
  if (used != field.size()) throw std::runtime_error("not a number: '" + field + "'");
  return v;
}

long long to_int(const std::string& field) {
  std::size_t used = 0;
  const long long v = std::stoll(field, &used);
  if (used != field.size()) throw std::runtime_error("not an integer: '" + field + "'");
  return v;
}

}  // namespace rse::csv
