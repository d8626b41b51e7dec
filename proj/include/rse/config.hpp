#pragma once

#include "json.hpp"
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "rse/harness.hpp"

namespace rse {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// Malformed or inconsistent configuration. `field` is a dotted path, `line`
/// the 1-based source line when it could be located.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message, std::optional<int> line = {});
  const std::string& field() const { return field_; }
  std::optional<int> line() const { return line_; }

 private:
  std::string field_;
  std::optional<int> line_;
};

Json to_json(const EnvConfig& cfg);
Json to_json(const PpoConfig& cfg);
Json to_json(const CmaesConfig& cfg);
Json to_json(const RunConfig& cfg);
Json to_json(const GridConfig& cfg);

/// Decoders start from the defaults, accept partial documents, and reject
/// keys they do not know.
RunConfig run_config_from_json(const Json& doc);
GridConfig grid_config_from_json(const Json& doc);

/// Parses JSON text; syntax errors become ConfigError with the line number.
Json parse_json_text(std::string_view text);
Json load_json_file(const std::string& path);

/// Applies `dotted.key=value`. The value is read as JSON when it parses,
/// otherwise as a string. Intermediate objects are created as needed.
void apply_override(Json& doc, std::string_view assignment);

/// Re-runs a decoder failure against the source text to attach a line number
/// to the offending key.
ConfigError locate(const ConfigError& err, std::string_view source);

}  // namespace rse
