#include "frdesign/config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "frdesign/errors.hpp"

namespace frdesign {

namespace {

std::string escape_pointer_token(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~')
      out += "~0";
    else if (c == '/')
      out += "~1";
    else
      out += c;
  }
  return out;
}

Json scalar_to_json(const YAML::Node& node) {
  const std::string& s = node.Scalar();
  if (node.Tag() == "!") return s;  // quoted: always a string
  if (s.empty() || s == "~" || s == "null" || s == "Null" || s == "NULL") return nullptr;
  if (s == "true" || s == "True" || s == "TRUE") return true;
  if (s == "false" || s == "False" || s == "FALSE") return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (s.front() != '-') {
    std::uint64_t u = 0;
    auto [p, ec] = std::from_chars(first, last, u);
    if (ec == std::errc() && p == last) return u;
  } else {
    std::int64_t i = 0;
    auto [p, ec] = std::from_chars(first, last, i);
    if (ec == std::errc() && p == last) return i;
  }
  double d = 0.0;
  auto [p, ec] = std::from_chars(first, last, d);
  if (ec == std::errc() && p == last) return d;
  return s;
}

Json yaml_to_json(const YAML::Node& node, const std::string& pointer, int parent_line,
                  std::map<std::string, int>& lines) {
  const int line = node.Mark().line >= 0 ? node.Mark().line + 1 : parent_line;
  lines[pointer] = line;
  switch (node.Type()) {
    case YAML::NodeType::Scalar: return scalar_to_json(node);
    case YAML::NodeType::Sequence: {
      Json arr = Json::array();
      for (std::size_t i = 0; i < node.size(); ++i)
        arr.push_back(yaml_to_json(node[i], pointer + "/" + std::to_string(i), line, lines));
      return arr;
    }
    case YAML::NodeType::Map: {
      Json obj = Json::object();
      for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        const int key_line = kv.first.Mark().line >= 0 ? kv.first.Mark().line + 1 : line;
        obj[key] = yaml_to_json(kv.second, pointer + "/" + escape_pointer_token(key), key_line, lines);
      }
      return obj;
    }
    default: return nullptr;
  }
}

std::string join(const std::string& path, const std::string& key) { return path + "/" + escape_pointer_token(key); }

const Json* find(const Json& j, const std::string& key) {
  if (!j.is_object()) return nullptr;
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return nullptr;
  return &*it;
}

NormalPrior read_normal(const Json& j, const std::string& path, NormalPrior fallback) {
  require_object(j, path);
  check_keys(j, path, {"mean", "sd"});
  NormalPrior p;
  p.mean = read_number(j, "mean", path, fallback.mean);
  p.sd = read_number(j, "sd", path, fallback.sd);
  if (!(p.sd > 0.0)) throw ValidationError("prior sd must be positive", join(path, "sd"));
  return p;
}

PriorSpec read_prior(const Json& j, const std::string& path) {
  require_object(j, path);
  check_keys(j, path, {"log_a", "log_th", "log_lambda"});
  PriorSpec prior;
  if (auto* v = find(j, "log_a")) prior.log_a = read_normal(*v, join(path, "log_a"), prior.log_a);
  if (auto* v = find(j, "log_th")) prior.log_th = read_normal(*v, join(path, "log_th"), prior.log_th);
  if (auto* v = find(j, "log_lambda")) prior.log_lambda = read_normal(*v, join(path, "log_lambda"), prior.log_lambda);
  return prior;
}

Json normal_to_json(const NormalPrior& p) { return {{"mean", p.mean}, {"sd", p.sd}}; }

}  // namespace

int ConfigDocument::line_of(const std::string& pointer) const {
  std::string p = pointer;
  while (true) {
    auto it = lines.find(p);
    if (it != lines.end()) return it->second;
    if (p.empty()) return 0;
    p = p.substr(0, p.rfind('/'));
  }
}

std::string ConfigDocument::describe(const ValidationError& e) const {
  std::ostringstream out;
  out << source;
  if (const int line = line_of(e.path()); line > 0) out << ":" << line;
  out << ": " << e.what();
  if (!e.path().empty()) out << " (at " << e.path() << ")";
  return out.str();
}

ConfigDocument parse_config(const std::string& text, const std::string& source) {
  ConfigDocument doc;
  doc.source = source;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ValidationError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  doc.value = yaml_to_json(root, "", 1, doc.lines);
  if (doc.value.is_null()) doc.value = Json::object();
  return doc;
}

ConfigDocument load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

void require_object(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ValidationError("expected a mapping", path);
}

void check_keys(const Json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* a : allowed) known = known || it.key() == a;
    if (!known) throw ValidationError("unknown key '" + it.key() + "'", join(path, it.key()));
  }
}

double read_number(const Json& j, const std::string& key, const std::string& path, double fallback) {
  const Json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_number()) throw ValidationError("'" + key + "' must be a number", join(path, key));
  const double x = v->get<double>();
  if (!std::isfinite(x)) throw ValidationError("'" + key + "' must be finite", join(path, key));
  return x;
}

std::optional<double> read_optional_number(const Json& j, const std::string& key, const std::string& path) {
  if (!find(j, key)) return std::nullopt;
  return read_number(j, key, path, 0.0);
}

int read_int(const Json& j, const std::string& key, const std::string& path, int fallback) {
  const Json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_number_integer()) throw ValidationError("'" + key + "' must be an integer", join(path, key));
  const auto x = v->get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
    throw ValidationError("'" + key + "' is out of range", join(path, key));
  return static_cast<int>(x);
}

std::uint64_t read_seed(const Json& j, const std::string& key, const std::string& path, std::uint64_t fallback) {
  const Json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_number_unsigned()) throw ValidationError("'" + key + "' must be a non-negative integer", join(path, key));
  return v->get<std::uint64_t>();
}

std::string read_string(const Json& j, const std::string& key, const std::string& path, const std::string& fallback) {
  const Json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_string()) throw ValidationError("'" + key + "' must be a string", join(path, key));
  return v->get<std::string>();
}

bool read_bool(const Json& j, const std::string& key, const std::string& path, bool fallback) {
  const Json* v = find(j, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ValidationError("'" + key + "' must be true or false", join(path, key));
  return v->get<bool>();
}

UtilityKind read_utility_kind(const std::string& s, const std::string& path) {
  try {
    return utility_kind_from_string(s);
  } catch (const ValidationError& e) {
    throw ValidationError(e.what(), path);
  }
}

std::vector<int> read_design_grid(const Json& j, const std::string& path) {
  std::vector<int> grid;
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      const auto p = path + "/" + std::to_string(i);
      if (!j[i].is_number_integer()) throw ValidationError("design points must be integers", p);
      const auto d = j[i].get<std::int64_t>();
      if (d < 1 || d > 100000) throw ValidationError("design points must lie in [1, 100000]", p);
      grid.push_back(static_cast<int>(d));
    }
  } else if (j.is_object()) {
    check_keys(j, path, {"min", "max", "step"});
    const int lo = read_int(j, "min", path, 1);
    const int hi = read_int(j, "max", path, 300);
    const int step = read_int(j, "step", path, 1);
    if (lo < 1) throw ValidationError("'min' must be at least 1", join(path, "min"));
    if (hi < lo || hi > 100000) throw ValidationError("'max' must lie in [min, 100000]", join(path, "max"));
    if (step < 1) throw ValidationError("'step' must be at least 1", join(path, "step"));
    for (int d = lo; d <= hi; d += step) grid.push_back(d);
  } else {
    throw ValidationError("design_grid must be a list or a {min, max, step} mapping", path);
  }
  if (grid.empty()) throw ValidationError("design grid must not be empty", path);
  return grid;
}

std::vector<ModelSpec> read_models(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ValidationError("models must be a non-empty list", path);
  std::vector<ModelSpec> models;
  int with_prob = 0;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto p = path + "/" + std::to_string(i);
    const Json& m = j[i];
    int id = 0;
    PriorSpec prior;
    double prob = 0.0;
    if (m.is_number_integer()) {
      id = m.get<int>();
    } else if (m.is_object()) {
      check_keys(m, p, {"id", "prior_prob", "prior"});
      id = read_int(m, "id", p, 0);
      if (auto* v = find(m, "prior")) prior = read_prior(*v, join(p, "prior"));
      if (find(m, "prior_prob")) {
        prob = read_number(m, "prior_prob", p, 0.0);
        ++with_prob;
      }
    } else {
      throw ValidationError("a model is an id or a mapping with an 'id'", p);
    }
    if (id < 1 || id > 4) throw ValidationError("model id must be 1, 2, 3 or 4", m.is_object() ? join(p, "id") : p);
    models.push_back(make_model(id, prior, prob > 0.0 ? prob : 1.0));
  }
  if (with_prob != 0 && with_prob != static_cast<int>(models.size()))
    throw ValidationError("give prior_prob for every model or for none", path);
  if (with_prob == 0)
    for (auto& m : models) m.prior_model_prob = 1.0 / models.size();
  try {
    validate_models(models);
  } catch (const InvalidParameter& e) {
    throw ValidationError(e.what(), path);
  }
  return models;
}

Truth read_truth(const Json& j, const std::string& path) {
  require_object(j, path);
  check_keys(j, path, {"model", "a", "th", "lambda"});
  const int id = read_int(j, "model", path, 0);
  if (id < 1 || id > 4) throw ValidationError("truth model must be 1, 2, 3 or 4", join(path, "model"));
  Truth t{make_model(id), {}};
  const double a = read_number(j, "a", path, 0.5);
  const double th = read_number(j, "th", path, 0.7);
  if (!(a > 0.0)) throw ValidationError("'a' must be positive", join(path, "a"));
  if (!(th > 0.0)) throw ValidationError("'th' must be positive", join(path, "th"));
  std::optional<double> lambda;
  if (t.model.obs == ObservationFamily::BetaBinomial) {
    lambda = read_number(j, "lambda", path, 0.5);
    if (!(*lambda > 0.0)) throw ValidationError("'lambda' must be positive", join(path, "lambda"));
  } else if (find(j, "lambda")) {
    throw ValidationError("binomial models take no 'lambda'", join(path, "lambda"));
  }
  t.params = Params::from_natural(a, th, lambda);
  return t;
}

Json truth_to_json(const Truth& t) {
  Json j{{"model", t.model.id}, {"a", t.params.a()}, {"th", t.params.th()}};
  if (t.params.log_lambda) j["lambda"] = t.params.lambda();
  return j;
}

SessionConfig session_config_from_json(const Json& j, const std::string& path,
                                       std::initializer_list<const char*> extra_keys) {
  require_object(j, path);
  static const char* const known[] = {"seed",  "particles", "experiments", "tau",     "utility",   "selection",
                                      "move",  "surface",   "early_stop",  "models",  "design_grid"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    for (const char* k : extra_keys) ok = ok || it.key() == k;
    if (!ok) throw ValidationError("unknown key '" + it.key() + "'", join(path, it.key()));
  }
  SessionConfig cfg;
  cfg.seed = read_seed(j, "seed", path, cfg.seed);
  cfg.particles = read_int(j, "particles", path, cfg.particles);
  cfg.experiments = read_int(j, "experiments", path, cfg.experiments);
  cfg.tau = read_number(j, "tau", path, cfg.tau);
  if (find(j, "utility"))
    cfg.utility = read_utility_kind(read_string(j, "utility", path, ""), join(path, "utility"));
  if (find(j, "selection")) {
    try {
      cfg.selection = selection_mode_from_string(read_string(j, "selection", path, ""));
    } catch (const ValidationError& e) {
      throw ValidationError(e.what(), join(path, "selection"));
    }
  }
  if (auto* v = find(j, "move")) {
    const auto p = join(path, "move");
    require_object(*v, p);
    check_keys(*v, p, {"c", "ess_threshold_frac", "proposal_scale", "max_repeats"});
    cfg.move.c = read_number(*v, "c", p, cfg.move.c);
    cfg.move.ess_threshold_frac = read_number(*v, "ess_threshold_frac", p, cfg.move.ess_threshold_frac);
    cfg.move.proposal_scale = read_number(*v, "proposal_scale", p, cfg.move.proposal_scale);
    cfg.move.max_repeats = read_int(*v, "max_repeats", p, cfg.move.max_repeats);
  }
  if (auto* v = find(j, "surface")) {
    const auto p = join(path, "surface");
    require_object(*v, p);
    check_keys(*v, p, {"stride", "refine_window"});
    cfg.surface.stride = read_int(*v, "stride", p, cfg.surface.stride);
    cfg.surface.refine_window = read_int(*v, "refine_window", p, cfg.surface.refine_window);
  }
  if (auto* v = find(j, "early_stop")) {
    const auto p = join(path, "early_stop");
    require_object(*v, p);
    check_keys(*v, p, {"max_model_prob", "min_precision_gain"});
    cfg.early_stop.max_model_prob = read_optional_number(*v, "max_model_prob", p);
    cfg.early_stop.min_precision_gain = read_optional_number(*v, "min_precision_gain", p);
  }
  if (auto* v = find(j, "models")) cfg.models = read_models(*v, join(path, "models"));
  if (auto* v = find(j, "design_grid")) cfg.design_grid = read_design_grid(*v, join(path, "design_grid"));
  try {
    validate_session_config(cfg);
  } catch (const ValidationError& e) {
    throw ValidationError(e.what(), path + e.path());
  }
  return cfg;
}

Json session_config_to_json(const SessionConfig& cfg) {
  Json models = Json::array();
  for (const auto& m : cfg.models) {
    Json prior{{"log_a", normal_to_json(m.prior.log_a)}, {"log_th", normal_to_json(m.prior.log_th)}};
    if (m.obs == ObservationFamily::BetaBinomial) prior["log_lambda"] = normal_to_json(m.prior.log_lambda);
    models.push_back({{"id", m.id}, {"prior_prob", m.prior_model_prob}, {"prior", prior}});
  }
  Json early = Json::object();
  if (cfg.early_stop.max_model_prob) early["max_model_prob"] = *cfg.early_stop.max_model_prob;
  if (cfg.early_stop.min_precision_gain) early["min_precision_gain"] = *cfg.early_stop.min_precision_gain;
  return {{"seed", cfg.seed},
          {"particles", cfg.particles},
          {"experiments", cfg.experiments},
          {"tau", cfg.tau},
          {"utility", to_string(cfg.utility)},
          {"selection", to_string(cfg.selection)},
          {"move",
           {{"c", cfg.move.c},
            {"ess_threshold_frac", cfg.move.ess_threshold_frac},
            {"proposal_scale", cfg.move.proposal_scale},
            {"max_repeats", cfg.move.max_repeats}}},
          {"surface", {{"stride", cfg.surface.stride}, {"refine_window", cfg.surface.refine_window}}},
          {"early_stop", early},
          {"models", models},
          {"design_grid", cfg.design_grid}};
}

Json number_to_json(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

double number_from_json(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw ValidationError("expected a number");
}

}  // namespace frdesign
