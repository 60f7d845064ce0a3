#pragma once

#include <initializer_list>
#include <map>
#include <optional>
#include <string>

#include "frdesign/designer.hpp"
#include "frdesign/errors.hpp"
#include "json.hpp"

namespace frdesign {

using Json = nlohmann::json;

/// A parsed configuration file. YAML is accepted (JSON being a subset of it); `lines` maps the
/// JSON pointer of every node to its 1-based source line so that errors can name the line.
struct ConfigDocument {
  Json value;
  std::string source;
  std::map<std::string, int> lines;

  /// Line of the deepest node on `pointer`'s path, or 0 when unknown.
  int line_of(const std::string& pointer) const;
  /// "source:line: message" for a validation error raised while reading this document.
  std::string describe(const ValidationError& e) const;
};

/// Throws ValidationError (with the line in its message) on YAML syntax errors.
ConfigDocument parse_config(const std::string& text, const std::string& source = "<config>");
ConfigDocument load_config_file(const std::string& path);

// Field readers. Each throws ValidationError carrying the JSON pointer of the bad value.
void require_object(const Json& j, const std::string& path);
void check_keys(const Json& j, const std::string& path, std::initializer_list<const char*> allowed);
double read_number(const Json& j, const std::string& key, const std::string& path, double fallback);
int read_int(const Json& j, const std::string& key, const std::string& path, int fallback);
std::uint64_t read_seed(const Json& j, const std::string& key, const std::string& path, std::uint64_t fallback);
std::string read_string(const Json& j, const std::string& key, const std::string& path, const std::string& fallback);
bool read_bool(const Json& j, const std::string& key, const std::string& path, bool fallback);
std::optional<double> read_optional_number(const Json& j, const std::string& key, const std::string& path);

/// Design grid as a list of integers or a {min, max, step} range.
std::vector<int> read_design_grid(const Json& j, const std::string& path);
/// Models as a list of ids (equal prior probabilities) or of {id, prior_prob, prior} objects.
std::vector<ModelSpec> read_models(const Json& j, const std::string& path);

/// A hidden truth {model, a, th, lambda}; natural-scale values.
struct Truth {
  ModelSpec model;
  Params params;
};
Truth read_truth(const Json& j, const std::string& path);
Json truth_to_json(const Truth& t);

/// Session settings; keys not listed in `extra_keys` or known to the session are rejected.
SessionConfig session_config_from_json(const Json& j, const std::string& path = "",
                                       std::initializer_list<const char*> extra_keys = {});
Json session_config_to_json(const SessionConfig& cfg);

UtilityKind read_utility_kind(const std::string& s, const std::string& path);

/// JSON cannot carry inf/nan; these encode them as strings.
Json number_to_json(double x);
double number_from_json(const Json& j);

}  // namespace frdesign
