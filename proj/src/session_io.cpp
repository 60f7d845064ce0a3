#include "frdesign/session_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "frdesign/errors.hpp"

namespace frdesign {

namespace {

Json numbers(std::span<const double> xs) {
  Json arr = Json::array();
  for (double x : xs) arr.push_back(number_to_json(x));
  return arr;
}

std::vector<double> numbers_from(const Json& j) {
  std::vector<double> out;
  for (const auto& x : j) out.push_back(number_from_json(x));
  return out;
}

Json vector_json(const Eigen::VectorXd& v) { return numbers(std::span<const double>(v.data(), v.size())); }

Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Eigen::VectorXd r = m.row(i);
    rows.push_back(vector_json(r));
  }
  return rows;
}

Eigen::VectorXd vector_from(const Json& j) {
  const auto xs = numbers_from(j);
  return Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

Eigen::MatrixXd matrix_from(const Json& j) {
  Eigen::MatrixXd m(j.size(), j.empty() ? 0 : j[0].size());
  for (std::size_t i = 0; i < j.size(); ++i)
    for (std::size_t k = 0; k < j[i].size(); ++k) m(i, k) = number_from_json(j[i][k]);
  return m;
}

}  // namespace

Json surface_to_json(const UtilitySurface& s) {
  return {{"kind", to_string(s.kind)},
          {"designs", s.designs},
          {"values", numbers(s.values)},
          {"best_design", s.best_design},
          {"best_value", number_to_json(s.best_value)}};
}

UtilitySurface surface_from_json(const Json& j) {
  UtilitySurface s;
  s.kind = utility_kind_from_string(j.at("kind").get<std::string>());
  s.designs = j.at("designs").get<std::vector<int>>();
  s.values = numbers_from(j.at("values"));
  s.best_design = j.at("best_design").get<int>();
  s.best_value = number_from_json(j.at("best_value"));
  return s;
}

Json model_summary_to_json(const ModelSummary& s) {
  Json marginals = Json::array();
  for (const auto& m : s.marginals)
    marginals.push_back({{"name", m.name},
                         {"mean", number_to_json(m.mean)},
                         {"sd", number_to_json(m.sd)},
                         {"lower", m.lower},
                         {"upper", m.upper},
                         {"density", numbers(m.density)}});
  return {{"model_id", s.model_id},
          {"log_evidence", number_to_json(s.log_evidence)},
          {"probability", number_to_json(s.probability)},
          {"ess", number_to_json(s.ess)},
          {"log_precision", number_to_json(s.precision.log_precision)},
          {"precision_degenerate", s.precision.degenerate},
          {"resampled", s.resampled},
          {"move",
           {{"probe_acceptance", number_to_json(s.move.probe_acceptance)},
            {"repeats", s.move.repeats},
            {"overall_acceptance", number_to_json(s.move.overall_acceptance)}}},
          {"degenerate", s.degenerate},
          {"mean", vector_json(s.mean)},
          {"cov", matrix_json(s.cov)},
          {"marginals", marginals}};
}

namespace {

ModelSummary model_summary_from_json(const Json& j) {
  ModelSummary s;
  s.model_id = j.at("model_id").get<int>();
  s.log_evidence = number_from_json(j.at("log_evidence"));
  s.probability = number_from_json(j.at("probability"));
  s.ess = number_from_json(j.at("ess"));
  s.precision.log_precision = number_from_json(j.at("log_precision"));
  s.precision.degenerate = j.at("precision_degenerate").get<bool>();
  s.resampled = j.at("resampled").get<bool>();
  s.move.probe_acceptance = number_from_json(j.at("move").at("probe_acceptance"));
  s.move.repeats = j.at("move").at("repeats").get<int>();
  s.move.overall_acceptance = number_from_json(j.at("move").at("overall_acceptance"));
  s.degenerate = j.at("degenerate").get<bool>();
  s.mean = vector_from(j.at("mean"));
  s.cov = matrix_from(j.at("cov"));
  for (const auto& m : j.at("marginals")) {
    Marginal mg;
    mg.name = m.at("name").get<std::string>();
    mg.mean = number_from_json(m.at("mean"));
    mg.sd = number_from_json(m.at("sd"));
    mg.lower = m.at("lower").get<double>();
    mg.upper = m.at("upper").get<double>();
    mg.density = numbers_from(m.at("density"));
    s.marginals.push_back(std::move(mg));
  }
  return s;
}

}  // namespace

Json record_to_json(const ExperimentRecord& r) {
  Json models = Json::array();
  for (const auto& m : r.models) models.push_back(model_summary_to_json(m));
  Json j{{"index", r.index},
         {"d", r.d},
         {"n", r.n},
         {"model_probs", numbers(r.model_probs)},
         {"models", models},
         {"warnings", r.warnings}};
  if (r.surface) j["surface"] = surface_to_json(*r.surface);
  return j;
}

ExperimentRecord record_from_json(const Json& j) {
  ExperimentRecord r;
  r.index = j.at("index").get<int>();
  r.d = j.at("d").get<int>();
  r.n = j.at("n").get<int>();
  r.model_probs = numbers_from(j.at("model_probs"));
  for (const auto& m : j.at("models")) r.models.push_back(model_summary_from_json(m));
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  if (j.contains("surface")) r.surface = surface_from_json(j.at("surface"));
  return r;
}

Json session_to_json(const Session& s, bool include_particles) {
  Json obs = Json::array();
  for (const auto& o : s.observations()) obs.push_back({{"d", o.n0}, {"n", o.n}});
  Json records = Json::array();
  for (const auto& r : s.history()) records.push_back(record_to_json(r));
  Json j{{"schema_version", kSessionSchemaVersion},
         {"config", session_config_to_json(s.config())},
         {"status", to_string(s.status())},
         {"observations", obs},
         {"records", records},
         {"model_probs", numbers(s.model_probs())}};
  if (s.stop_reason()) j["stop_reason"] = *s.stop_reason();
  if (const auto& p = s.pending()) {
    Json pending{{"d", p->d}};
    if (p->surface) pending["surface"] = surface_to_json(*p->surface);
    j["pending"] = pending;
  }
  if (include_particles) {
    Json sets = Json::array();
    for (const auto& ps : s.particle_sets()) {
      Json particles = Json::array();
      for (const auto& p : ps.particles) particles.push_back(numbers(params_to_vector(p)));
      sets.push_back({{"model_id", ps.model.id},
                      {"log_evidence", number_to_json(ps.log_evidence)},
                      {"weights", numbers(ps.weights)},
                      {"particles", particles}});
    }
    j["particles"] = sets;
  }
  return j;
}

Session session_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("schema_version"))
    throw ValidationError("session document has no schema_version", "/schema_version");
  if (j.at("schema_version") != kSessionSchemaVersion)
    throw ValidationError("unsupported session schema_version " + j.at("schema_version").dump(), "/schema_version");
  const auto cfg = session_config_from_json(j.at("config"), "/config");
  std::vector<Observation> obs;
  for (const auto& o : j.at("observations")) obs.push_back({o.at("d").get<int>(), o.at("n").get<int>(), cfg.tau});
  Session s = replay_session(cfg, obs);
  const auto& stored = j.at("records");
  if (stored.size() != s.history().size()) throw ValidationError("record count does not match observations", "/records");
  for (std::size_t i = 0; i < stored.size(); ++i)
    if (numbers_from(stored[i].at("model_probs")) != s.history()[i].model_probs)
      throw ValidationError("replayed model probabilities differ from the stored session",
                            "/records/" + std::to_string(i) + "/model_probs");
  if (j.contains("pending") && s.status() != SessionStatus::Complete) {
    const auto& p = j.at("pending");
    if (cfg.selection == SelectionMode::Random) {
      if (s.propose_next_design().d != p.at("d").get<int>())
        throw ValidationError("replayed random proposal differs from the stored one", "/pending/d");
    } else {
      Proposal prop;
      prop.d = p.at("d").get<int>();
      if (p.contains("surface")) prop.surface = surface_from_json(p.at("surface"));
      s.restore_pending(std::move(prop));
    }
  }
  return s;
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const auto tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp + "'");
    out << text;
    if (!out) throw Error("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, target);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace frdesign
