#include "frdesign/study.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "frdesign/csv.hpp"
#include "frdesign/errors.hpp"
#include "frdesign/session_io.hpp"

namespace frdesign {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::RG: return "RG";
    case Strategy::PE: return "PE";
    case Strategy::MD: return "MD";
    case Strategy::TE: return "TE";
    case Strategy::StaticPE: return "STATIC-PE";
    case Strategy::StaticMD: return "STATIC-MD";
    default: return "STATIC-TE";
  }
}

Strategy strategy_from_string(const std::string& s) {
  for (auto k : {Strategy::RG, Strategy::PE, Strategy::MD, Strategy::TE, Strategy::StaticPE, Strategy::StaticMD,
                 Strategy::StaticTE})
    if (to_string(k) == s) return k;
  throw ValidationError("unknown strategy '" + s + "' (expected RG, PE, MD, TE, STATIC-PE, STATIC-MD or STATIC-TE)");
}

bool is_static(Strategy s) {
  return s == Strategy::StaticPE || s == Strategy::StaticMD || s == Strategy::StaticTE;
}

namespace {

UtilityKind kind_of(Strategy s) {
  switch (s) {
    case Strategy::PE:
    case Strategy::StaticPE: return UtilityKind::ParameterEstimation;
    case Strategy::MD:
    case Strategy::StaticMD: return UtilityKind::ModelDiscrimination;
    default: return UtilityKind::TotalEntropy;
  }
}

int model_index(std::span<const ModelSpec> models, int id) {
  for (std::size_t m = 0; m < models.size(); ++m)
    if (models[m].id == id) return static_cast<int>(m);
  return -1;
}

struct Cell {
  int truth_index;
  Strategy strategy;
  int replication;
};

std::string cell_key(int truth_index, Strategy s, int replication) {
  return "t" + std::to_string(truth_index) + "/" + to_string(s) + "/r" + std::to_string(replication);
}

std::vector<Cell> study_cells(const StudyManifest& m) {
  std::vector<Cell> cells;
  for (int t = 0; t < static_cast<int>(m.truths.size()); ++t)
    for (auto s : m.strategies)
      for (int r = 0; r < m.replications; ++r) cells.push_back({t, s, r});
  return cells;
}

SessionConfig session_for(const StudyManifest& m, Strategy s, std::uint64_t seed) {
  SessionConfig cfg;
  cfg.models = m.models;
  cfg.particles = m.particles;
  cfg.move = m.move;
  cfg.design_grid = m.design_grid;
  cfg.tau = m.tau;
  cfg.experiments = m.experiments;
  cfg.utility = kind_of(s);
  cfg.selection = s == Strategy::RG ? SelectionMode::Random : SelectionMode::Optimal;
  cfg.surface = m.surface;
  cfg.seed = seed;
  return cfg;
}

StaticDesign optimise_static(const StudyManifest& m, Strategy s, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, m.design_grid.size() - 1);
  std::vector<int> start;
  for (int i = 0; i < m.experiments; ++i) start.push_back(m.design_grid[pick(rng)]);
  return coordinate_exchange(m.models, start, m.design_grid, m.tau, kind_of(s), m.static_design.B,
                             m.static_design.exchange, rng);
}

std::uint64_t static_seed(const StudyManifest& m, int truth_index, Strategy s) {
  return derive_seed(m.seed, hash_string("t" + std::to_string(truth_index) + "/" + to_string(s) + "/static"));
}

StudyRecord run_cell(const StudyManifest& m, const Cell& cell, const std::map<std::string, StaticDesign>& shared) {
  const auto start = std::chrono::steady_clock::now();
  StudyRecord rec;
  rec.truth_index = cell.truth_index;
  rec.truth = m.truths[cell.truth_index];
  rec.true_model_index = model_index(m.models, rec.truth.model.id);
  rec.strategy = cell.strategy;
  rec.replication = cell.replication;
  rec.seed = derive_seed(m.seed, hash_string(rec.key()));
  try {
    const auto cfg = session_for(m, cell.strategy, rec.seed);
    std::vector<ExperimentRecord> trace;
    if (!is_static(cell.strategy)) {
      trace = run_simulation(cfg, rec.truth.model, rec.truth.params);
    } else {
      const auto key = "t" + std::to_string(cell.truth_index) + "/" + to_string(cell.strategy);
      auto it = shared.find(key);
      rec.static_design = it != shared.end() ? it->second : optimise_static(m, cell.strategy, derive_seed(rec.seed, 1));
      Session s(cfg);
      for (int d : rec.static_design->points) {
        const auto obs = sample_observation(rec.truth.model, rec.truth.params, d, m.tau, s.streams().observation);
        s.record_observation(d, obs.n);
      }
      trace.assign(s.history().begin(), s.history().end());
    }
    for (const auto& r : trace)
      rec.iterations.push_back(
          {r.index, r.d, r.n, r.models[rec.true_model_index].precision.log_precision, r.model_probs});
  } catch (const Error& e) {
    rec.error = e.what();
    rec.iterations.clear();
  }
  rec.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

}  // namespace

Json static_design_to_json(const StaticDesign& d) {
  return {{"points", d.points},         {"estimate", number_to_json(d.estimate)}, {"se", number_to_json(d.se)},
          {"B", d.B},                   {"failures", d.failures},                 {"passes", d.passes},
          {"initial_estimate", number_to_json(d.initial.estimate)}};
}

StaticDesign static_design_from_json(const Json& j) {
  StaticDesign d;
  d.points = j.at("points").get<std::vector<int>>();
  d.estimate = number_from_json(j.at("estimate"));
  d.se = number_from_json(j.at("se"));
  d.B = j.at("B").get<int>();
  d.failures = j.at("failures").get<int>();
  d.passes = j.at("passes").get<int>();
  d.initial.estimate = number_from_json(j.at("initial_estimate"));
  return d;
}

std::vector<Truth> default_truths(std::span<const ModelSpec> models, int per_model, bool include_illustration,
                                  std::uint64_t seed) {
  std::vector<Truth> truths;
  if (include_illustration) truths.push_back({make_model(1), Params::from_natural(0.5, 0.7, 0.5)});
  Rng rng = make_stream(seed, "truths");
  for (const auto& m : models)
    for (int k = 0; k < per_model; ++k) truths.push_back({m, prior_sample(m, rng)});
  return truths;
}

void validate_manifest(const StudyManifest& m) {
  if (m.truths.empty()) throw ValidationError("the study needs at least one truth", "/truths");
  if (m.strategies.empty()) throw ValidationError("strategies must not be empty", "/strategies");
  if (m.replications < 1) throw ValidationError("replications must be at least 1", "/replications");
  if (m.experiments < 1) throw ValidationError("experiments must be at least 1", "/experiments");
  if (m.workers < 1) throw ValidationError("workers must be at least 1", "/workers");
  if (m.static_design.B < 1) throw ValidationError("static B must be at least 1", "/static/B");
  if (m.static_design.exchange.passes < 0) throw ValidationError("static passes must be non-negative", "/static/passes");
  if (m.static_design.exchange.candidates < 1)
    throw ValidationError("static candidates must be at least 1", "/static/candidates");
  for (std::size_t t = 0; t < m.truths.size(); ++t) {
    if (model_index(m.models, m.truths[t].model.id) < 0)
      throw ValidationError("truth model " + std::to_string(m.truths[t].model.id) + " is not among the models",
                            "/truths/" + std::to_string(t) + "/model");
    try {
      validate_params(m.truths[t].model, m.truths[t].params);
    } catch (const InvalidParameter& e) {
      throw ValidationError(e.what(), "/truths/" + std::to_string(t));
    }
  }
  validate_session_config(session_for(m, Strategy::RG, m.seed));
}

StudyManifest manifest_from_json(const Json& j) {
  require_object(j, "");
  check_keys(j, "", {"seed", "replications", "experiments", "particles", "tau", "design_grid", "strategies", "truths",
                     "default_truths", "models", "move", "surface", "static", "workers"});
  Json session = Json::object();
  for (const char* k : {"seed", "particles", "tau", "design_grid", "models", "move", "surface"})
    if (j.contains(k)) session[k] = j[k];
  const auto cfg = session_config_from_json(session);

  StudyManifest m;
  m.seed = cfg.seed;
  m.particles = cfg.particles;
  m.tau = cfg.tau;
  m.design_grid = cfg.design_grid;
  m.models = cfg.models;
  m.move = cfg.move;
  m.surface = cfg.surface;
  m.replications = read_int(j, "replications", "", m.replications);
  m.experiments = read_int(j, "experiments", "", m.experiments);
  m.workers = read_int(j, "workers", "", m.workers);

  if (!j.contains("strategies") || !j["strategies"].is_array())
    throw ValidationError("strategies must be a list", "/strategies");
  for (std::size_t i = 0; i < j["strategies"].size(); ++i) {
    const auto path = "/strategies/" + std::to_string(i);
    if (!j["strategies"][i].is_string()) throw ValidationError("a strategy is a name", path);
    try {
      m.strategies.push_back(strategy_from_string(j["strategies"][i].get<std::string>()));
    } catch (const ValidationError& e) {
      throw ValidationError(e.what(), path);
    }
  }

  if (j.contains("truths") && !j["truths"].is_null()) {
    if (!j["truths"].is_array()) throw ValidationError("truths must be a list", "/truths");
    for (std::size_t i = 0; i < j["truths"].size(); ++i)
      m.truths.push_back(read_truth(j["truths"][i], "/truths/" + std::to_string(i)));
  }
  if (j.contains("default_truths") || m.truths.empty()) {
    const Json d = j.contains("default_truths") ? j["default_truths"] : Json::object();
    require_object(d, "/default_truths");
    check_keys(d, "/default_truths", {"include_illustration", "prior_draws_per_model"});
    const bool illustration = read_bool(d, "include_illustration", "/default_truths", true);
    const int per_model = read_int(d, "prior_draws_per_model", "/default_truths", 1);
    if (per_model < 0)
      throw ValidationError("prior_draws_per_model must be non-negative", "/default_truths/prior_draws_per_model");
    const auto extra = default_truths(m.models, per_model, illustration, m.seed);
    m.truths.insert(m.truths.end(), extra.begin(), extra.end());
  }

  if (j.contains("static")) {
    const auto& s = j["static"];
    require_object(s, "/static");
    check_keys(s, "/static", {"B", "passes", "candidates", "reuse_across_replications"});
    m.static_design.B = read_int(s, "B", "/static", m.static_design.B);
    m.static_design.exchange.passes = read_int(s, "passes", "/static", m.static_design.exchange.passes);
    m.static_design.exchange.candidates = read_int(s, "candidates", "/static", m.static_design.exchange.candidates);
    m.static_design.reuse_across_replications =
        read_bool(s, "reuse_across_replications", "/static", m.static_design.reuse_across_replications);
  }
  validate_manifest(m);
  return m;
}

std::string StudyRecord::key() const { return cell_key(truth_index, strategy, replication); }

double StudyRecord::true_model_prob(const StudyIteration& it) const { return it.model_probs[true_model_index]; }

Json study_record_to_json(const StudyRecord& r) {
  Json its = Json::array();
  for (const auto& it : r.iterations) {
    Json probs = Json::array();
    for (double p : it.model_probs) probs.push_back(number_to_json(p));
    its.push_back(
        {{"i", it.i}, {"d", it.d}, {"n", it.n}, {"log_precision", number_to_json(it.log_precision)}, {"model_probs", probs}});
  }
  Json j{{"key", r.key()},
         {"truth_index", r.truth_index},
         {"truth", truth_to_json(r.truth)},
         {"true_model_index", r.true_model_index},
         {"strategy", to_string(r.strategy)},
         {"replication", r.replication},
         {"seed", r.seed},
         {"iterations", its}};
  if (r.static_design) j["static_design"] = static_design_to_json(*r.static_design);
  if (r.error) j["error"] = *r.error;
  return j;
}

StudyRecord study_record_from_json(const Json& j) {
  StudyRecord r;
  r.truth_index = j.at("truth_index").get<int>();
  r.truth = read_truth(j.at("truth"), "/truth");
  r.true_model_index = j.at("true_model_index").get<int>();
  r.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  r.replication = j.at("replication").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& it : j.at("iterations")) {
    StudyIteration s;
    s.i = it.at("i").get<int>();
    s.d = it.at("d").get<int>();
    s.n = it.at("n").get<int>();
    s.log_precision = number_from_json(it.at("log_precision"));
    for (const auto& p : it.at("model_probs")) s.model_probs.push_back(number_from_json(p));
    r.iterations.push_back(std::move(s));
  }
  if (j.contains("static_design")) r.static_design = static_design_from_json(j.at("static_design"));
  if (j.contains("error")) r.error = j.at("error").get<std::string>();
  return r;
}

std::vector<StudyRecord> records_from_jsonl(const std::string& text) {
  std::vector<StudyRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error&) {
      continue;  // a line cut short by an interrupted run
    }
    out.push_back(study_record_from_json(j));
  }
  return out;
}

std::string records_to_jsonl(std::span<const StudyRecord> records) {
  std::string out;
  for (const auto& r : records) out += study_record_to_json(r).dump() + "\n";
  return out;
}

std::vector<StudyRecord> run_study(const StudyManifest& manifest, const StudyOptions& options) {
  validate_manifest(manifest);
  const auto cells = study_cells(manifest);

  std::map<std::string, StudyRecord> done;
  if (!options.checkpoint.empty() && std::filesystem::exists(options.checkpoint)) {
    for (auto& r : records_from_jsonl(read_text_file(options.checkpoint))) {
      if (r.truth_index >= static_cast<int>(manifest.truths.size()) ||
          r.seed != derive_seed(manifest.seed, hash_string(r.key())))
        throw ValidationError("checkpoint '" + options.checkpoint + "' belongs to a different manifest");
      done.emplace(r.key(), std::move(r));
    }
  }

  std::map<std::string, StaticDesign> shared;
  if (manifest.static_design.reuse_across_replications)
    for (int t = 0; t < static_cast<int>(manifest.truths.size()); ++t)
      for (auto s : manifest.strategies)
        if (is_static(s))
          shared["t" + std::to_string(t) + "/" + to_string(s)] = optimise_static(manifest, s, static_seed(manifest, t, s));

  std::vector<const Cell*> todo;
  for (const auto& c : cells)
    if (!done.count(cell_key(c.truth_index, c.strategy, c.replication))) todo.push_back(&c);

  std::ofstream checkpoint;
  if (!options.checkpoint.empty()) {
    const std::filesystem::path p(options.checkpoint);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    checkpoint.open(options.checkpoint, std::ios::app);
    if (!checkpoint) throw Error("cannot open checkpoint '" + options.checkpoint + "'");
  }

  std::mutex writer;
  std::atomic<std::size_t> next{0};
  std::atomic<int> finished{0};
  std::exception_ptr failure;
  auto worker = [&](int threads) {
#ifdef _OPENMP
    omp_set_num_threads(threads);
#else
    (void)threads;
#endif
    while (true) {
      if (options.stop_after >= 0 && finished.load() >= options.stop_after) return;
      const std::size_t k = next.fetch_add(1);
      if (k >= todo.size()) return;
      try {
        auto rec = run_cell(manifest, *todo[k], shared);
        std::lock_guard lock(writer);
        if (options.stop_after >= 0 && finished.load() >= options.stop_after) return;
        if (checkpoint.is_open()) checkpoint << study_record_to_json(rec).dump() << "\n" << std::flush;
        if (options.on_record) options.on_record(rec);
        done.emplace(rec.key(), std::move(rec));
        ++finished;
      } catch (...) {
        std::lock_guard lock(writer);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const int workers = std::max(1, std::min<int>(manifest.workers, static_cast<int>(todo.size())));
#ifdef _OPENMP
  const int per_worker = std::max(1, omp_get_max_threads() / workers);
#else
  const int per_worker = 1;
#endif
  if (workers == 1) {
    worker(per_worker);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker, per_worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  checkpoint.close();

  std::vector<StudyRecord> out;
  for (const auto& c : cells) {
    auto it = done.find(cell_key(c.truth_index, c.strategy, c.replication));
    if (it != done.end()) out.push_back(it->second);
  }
  // Rewrite the checkpoint in cell order once the study is complete, so that it is canonical.
  if (!options.checkpoint.empty() && out.size() == cells.size()) write_text_file(options.checkpoint, records_to_jsonl(out));
  return out;
}

const QuantileRow* StudySummary::find(int truth_index, Strategy s, const std::string& metric) const {
  for (const auto& q : quantiles)
    if (q.truth_index == truth_index && q.strategy == s && q.metric == metric) return &q;
  return nullptr;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidParameter("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * (values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - lo) * (values[hi] - values[lo]);
}

StudySummary summarize(std::span<const StudyRecord> records) {
  std::map<std::pair<int, Strategy>, std::vector<const StudyRecord*>> groups;
  for (const auto& r : records)
    if (!r.error && !r.iterations.empty()) groups[{r.truth_index, r.strategy}].push_back(&r);
  if (groups.empty()) throw InvalidParameter("no completed study records to summarize");

  static constexpr std::array<double, 7> levels{0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0};
  StudySummary out;
  for (const auto& [key, rs] : groups) {
    const int true_model = rs.front()->truth.model.id;
    std::vector<double> precision, prob;
    for (const auto* r : rs) {
      precision.push_back(r->iterations.back().log_precision);
      prob.push_back(r->true_model_prob(r->iterations.back()));
    }
    for (const auto& [metric, values] : {std::pair{"final_log_precision", &precision}, std::pair{"final_true_model_prob", &prob}}) {
      QuantileRow row{key.first, true_model, key.second, metric, {}, static_cast<int>(values->size())};
      for (std::size_t k = 0; k < levels.size(); ++k) row.q[k] = quantile(*values, levels[k]);
      out.quantiles.push_back(row);
    }
    std::size_t longest = 0;
    for (const auto* r : rs) longest = std::max(longest, r->iterations.size());
    for (std::size_t i = 0; i < longest; ++i) {
      std::vector<double> p, m;
      for (const auto* r : rs)
        if (i < r->iterations.size()) {
          p.push_back(r->iterations[i].log_precision);
          m.push_back(r->true_model_prob(r->iterations[i]));
        }
      out.medians.push_back({key.first, key.second, static_cast<int>(i) + 1, quantile(p, 0.5), quantile(m, 0.5)});
    }
    DesignHistogram h{key.first, true_model, key.second, {}, 0};
    for (const auto* r : rs)
      for (const auto& it : r->iterations) {
        ++h.counts[it.d];
        ++h.total;
      }
    out.histograms.push_back(std::move(h));
  }
  return out;
}

std::string iterations_csv(std::span<const StudyRecord> records) {
  std::ostringstream out;
  out << "truth,true_model,strategy,replication,i,d,n,log_precision_true,prob_true";
  std::size_t k = 0;
  for (const auto& r : records)
    if (!r.iterations.empty()) k = std::max(k, r.iterations.front().model_probs.size());
  for (std::size_t m = 0; m < k; ++m) out << ",prob_" << m + 1;
  out << "\n";
  for (const auto& r : records)
    for (const auto& it : r.iterations) {
      out << r.truth_index << "," << r.truth.model.id << "," << to_string(r.strategy) << "," << r.replication << ","
          << it.i << "," << it.d << "," << it.n << "," << format_number(it.log_precision) << ","
          << format_number(r.true_model_prob(it));
      for (double p : it.model_probs) out << "," << format_number(p);
      out << "\n";
    }
  return out.str();
}

std::string summary_csv(const StudySummary& summary) {
  std::ostringstream out;
  out << "truth,true_model,strategy,metric,count,q0,q10,q25,q50,q75,q90,q100\n";
  for (const auto& q : summary.quantiles) {
    out << q.truth_index << "," << q.true_model << "," << to_string(q.strategy) << "," << q.metric << "," << q.count;
    for (double v : q.q) out << "," << format_number(v);
    out << "\n";
  }
  return out.str();
}

void write_study_outputs(const std::string& dir, std::span<const StudyRecord> records) {
  std::filesystem::create_directories(dir);
  const auto path = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
  write_text_file(path("records.jsonl"), records_to_jsonl(records));
  write_text_file(path("iterations.csv"), iterations_csv(records));
  const auto summary = summarize(records);
  write_text_file(path("summary.csv"), summary_csv(summary));

  std::ostringstream medians;
  medians << "truth,strategy,i,median_log_precision_true,median_prob_true\n";
  for (const auto& m : summary.medians)
    medians << m.truth_index << "," << to_string(m.strategy) << "," << m.i << "," << format_number(m.log_precision)
            << "," << format_number(m.true_model_prob) << "\n";
  write_text_file(path("iteration_medians.csv"), medians.str());

  std::ostringstream precision, probs;
  precision << "truth,true_model,strategy,replication,log_precision\n";
  probs << "truth,true_model,strategy,replication,model,probability\n";
  for (const auto& r : records) {
    if (r.iterations.empty()) continue;
    const auto& last = r.iterations.back();
    precision << r.truth_index << "," << r.truth.model.id << "," << to_string(r.strategy) << "," << r.replication << ","
              << format_number(last.log_precision) << "\n";
    for (std::size_t m = 0; m < last.model_probs.size(); ++m)
      probs << r.truth_index << "," << r.truth.model.id << "," << to_string(r.strategy) << "," << r.replication << ","
            << m + 1 << "," << format_number(last.model_probs[m]) << "\n";
  }
  write_text_file(path("final_log_precision.csv"), precision.str());
  write_text_file(path("final_model_probs.csv"), probs.str());

  std::ostringstream designs;
  designs << "truth,true_model,strategy,d,count,relative_frequency\n";
  for (const auto& h : summary.histograms)
    for (const auto& [d, c] : h.counts)
      designs << h.truth_index << "," << h.true_model << "," << to_string(h.strategy) << "," << d << "," << c << ","
              << format_number(static_cast<double>(c) / h.total) << "\n";
  write_text_file(path("design_points.csv"), designs.str());
}

}  // namespace frdesign
