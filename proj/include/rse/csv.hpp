#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace rse::csv {

/// Shortest text that survives a round trip (%.17g).
std::string format(double value);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws if absent.
  std::size_t column(const std::string& name) const;
};

/// Plain comma-separated values: no quoting, since every field is a number
/// or a bare identifier.
Table read(const std::filesystem::path& path);

/// Writes atomically through a temporary file. Errors name the path.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

double to_double(const std::string& field);
long long to_int(const std::string& field);

}  // namespace rse::csv
