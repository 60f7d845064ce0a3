#include "frdesign/designer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "frdesign/csv.hpp"
#include "frdesign/errors.hpp"

namespace frdesign {

std::string to_string(SelectionMode mode) { return mode == SelectionMode::Optimal ? "optimal" : "random"; }

SelectionMode selection_mode_from_string(const std::string& s) {
  if (s == "optimal") return SelectionMode::Optimal;
  if (s == "random") return SelectionMode::Random;
  throw ValidationError("unknown selection mode '" + s + "' (expected optimal or random)");
}

std::string to_string(SessionStatus status) {
  switch (status) {
    case SessionStatus::AwaitingDesign: return "awaiting-design";
    case SessionStatus::AwaitingObservation: return "awaiting-observation";
    default: return "complete";
  }
}

std::vector<int> SessionConfig::default_design_grid() {
  std::vector<int> grid(300);
  std::iota(grid.begin(), grid.end(), 1);
  return grid;
}

void validate_session_config(const SessionConfig& cfg) {
  try {
    validate_models(cfg.models);
  } catch (const InvalidParameter& e) {
    throw ValidationError(e.what(), "/models");
  }
  if (cfg.particles < 1) throw ValidationError("particles must be at least 1", "/particles");
  try {
    validate_move_config(cfg.move);
  } catch (const InvalidParameter& e) {
    throw ValidationError(e.what(), "/move");
  }
  if (cfg.design_grid.empty()) throw ValidationError("design grid must not be empty", "/design_grid");
  for (std::size_t i = 0; i < cfg.design_grid.size(); ++i)
    if (cfg.design_grid[i] < 1)
      throw ValidationError("design points must be positive integers", "/design_grid/" + std::to_string(i));
  if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau)) throw ValidationError("tau must be positive and finite", "/tau");
  if (cfg.experiments < 0) throw ValidationError("experiments must be non-negative", "/experiments");
  if (cfg.surface.stride < 1) throw ValidationError("surface stride must be at least 1", "/surface/stride");
  if (cfg.surface.refine_window < 0)
    throw ValidationError("surface refine window must be non-negative", "/surface/refine_window");
  if (cfg.early_stop.max_model_prob && !(*cfg.early_stop.max_model_prob > 0.0 && *cfg.early_stop.max_model_prob <= 1.0))
    throw ValidationError("max_model_prob must lie in (0, 1]", "/early_stop/max_model_prob");
  if (cfg.early_stop.min_precision_gain && !std::isfinite(*cfg.early_stop.min_precision_gain))
    throw ValidationError("min_precision_gain must be finite", "/early_stop/min_precision_gain");
}

std::vector<Marginal> posterior_marginals(const ParticleSet& ps, int bins) {
  static const char* names[] = {"log_a", "log_th", "log_lambda"};
  const auto means = prior_means(ps.model);
  const auto sds = prior_sds(ps.model);
  const auto mu = weighted_mean(ps);
  const auto cov = weighted_covariance(ps);
  std::vector<Marginal> out;
  for (int k = 0; k < ps.model.dim(); ++k) {
    Marginal m;
    m.name = names[k];
    m.mean = mu[k];
    m.sd = std::sqrt(std::max(cov(k, k), 0.0));
    m.lower = means[k] - 4.0 * sds[k];
    m.upper = means[k] + 4.0 * sds[k];
    m.density.assign(bins, 0.0);
    const double width = (m.upper - m.lower) / bins;
    for (int j = 0; j < ps.size(); ++j) {
      const double x = ps.particles[j][k];
      if (x < m.lower || x >= m.upper) continue;
      const int b = std::min(bins - 1, static_cast<int>((x - m.lower) / width));
      m.density[b] += ps.weights[j] / width;
    }
    out.push_back(std::move(m));
  }
  return out;
}

ModelSummary summarize_particles(const ParticleSet& ps, double probability) {
  ModelSummary s;
  s.model_id = ps.model.id;
  s.log_evidence = ps.log_evidence;
  s.probability = probability;
  s.ess = ps.ess;
  s.precision = d_posterior_precision(ps);
  s.mean = weighted_mean(ps);
  s.cov = weighted_covariance(ps);
  s.marginals = posterior_marginals(ps);
  return s;
}

Session::Session(SessionConfig cfg) : cfg_(std::move(cfg)), streams_(cfg_.seed) {
  validate_session_config(cfg_);
  for (const auto& m : cfg_.models) sets_.push_back(init_particle_set(m, cfg_.particles, streams_.prior));
  check_stopping();
}

std::vector<double> Session::model_probs() const { return posterior_model_probs(sets_); }

SessionStatus Session::status() const {
  if (stop_reason_) return SessionStatus::Complete;
  return pending_ ? SessionStatus::AwaitingObservation : SessionStatus::AwaitingDesign;
}

const Proposal& Session::propose_next_design() {
  if (stop_reason_) throw ConflictError("session is complete: " + *stop_reason_);
  if (pending_) return *pending_;
  Proposal p;
  if (cfg_.selection == SelectionMode::Random) {
    std::uniform_int_distribution<std::size_t> pick(0, cfg_.design_grid.size() - 1);
    p.d = cfg_.design_grid[pick(streams_.design)];
  } else {
    p.surface = utility_surface(sets_, cfg_.design_grid, cfg_.tau, cfg_.utility, cfg_.surface);
    p.d = p.surface->best_design;
  }
  pending_ = std::move(p);
  return *pending_;
}

void Session::restore_pending(Proposal p) {
  if (stop_reason_) throw ConflictError("session is complete: " + *stop_reason_);
  pending_ = std::move(p);
}

const ExperimentRecord& Session::record_observation(int d, int n) {
  if (stop_reason_) throw ConflictError("session is complete: " + *stop_reason_);
  if (std::find(cfg_.design_grid.begin(), cfg_.design_grid.end(), d) == cfg_.design_grid.end())
    throw ValidationError("design " + std::to_string(d) + " is not in the design grid", "/d");
  if (n < 0 || n > d)
    throw ValidationError("observed count " + std::to_string(n) + " must lie in [0, " + std::to_string(d) + "]",
                          "/n");

  // Work on copies so that a failure part-way leaves the session untouched.
  const Observation obs{d, n, cfg_.tau};
  auto history = observations_;
  history.push_back(obs);
  auto sets = sets_;
  auto streams = streams_;
  ExperimentRecord rec;
  rec.index = static_cast<int>(records_.size()) + 1;
  rec.d = d;
  rec.n = n;
  std::vector<RejuvenationReport> reports(sets.size());
  std::vector<bool> degenerate(sets.size(), false);
  for (std::size_t m = 0; m < sets.size(); ++m) {
    try {
      auto r = reweight(sets[m], obs);
      sets[m] = std::move(r.set);
      if (r.degenerate_warning) {
        degenerate[m] = true;
        rec.warnings.push_back("model " + std::to_string(sets[m].model.id) + ": effective sample size collapsed");
      }
    } catch (const DegenerateUpdate& e) {
      // The model cannot explain the observation: it keeps its particles but loses all probability.
      degenerate[m] = true;
      sets[m].log_evidence = -std::numeric_limits<double>::infinity();
      sets[m].count += 1;
      rec.warnings.push_back("model " + std::to_string(sets[m].model.id) + ": " + e.what());
      continue;
    }
    reports[m] = rejuvenate_if_needed(sets[m], history, cfg_.move, streams.resample, streams.mcmc);
  }

  rec.model_probs = posterior_model_probs(sets);
  for (std::size_t m = 0; m < sets.size(); ++m) {
    auto s = summarize_particles(sets[m], rec.model_probs[m]);
    s.resampled = reports[m].resampled;
    s.move = reports[m].stats;
    s.degenerate = degenerate[m];
    rec.models.push_back(std::move(s));
  }
  if (pending_ && pending_->d == d) rec.surface = pending_->surface;

  sets_ = std::move(sets);
  streams_ = streams;
  observations_ = std::move(history);
  records_.push_back(std::move(rec));
  pending_.reset();
  check_stopping();
  return records_.back();
}

void Session::check_stopping() {
  if (static_cast<int>(records_.size()) >= cfg_.experiments) {
    stop_reason_ = "all " + std::to_string(cfg_.experiments) + " experiments recorded";
    return;
  }
  if (records_.empty()) return;
  const auto& last = records_.back();
  const auto lead = static_cast<std::size_t>(
      std::max_element(last.model_probs.begin(), last.model_probs.end()) - last.model_probs.begin());
  if (cfg_.early_stop.max_model_prob && last.model_probs[lead] >= *cfg_.early_stop.max_model_prob) {
    stop_reason_ = "model " + std::to_string(cfg_.models[lead].id) + " reached probability threshold";
    return;
  }
  if (cfg_.early_stop.min_precision_gain && records_.size() >= 2) {
    const double gain = last.models[lead].precision.log_precision -
                        records_[records_.size() - 2].models[lead].precision.log_precision;
    if (gain < *cfg_.early_stop.min_precision_gain) stop_reason_ = "log precision gain fell below threshold";
  }
}

Session replay_session(const SessionConfig& cfg, std::span<const Observation> observations) {
  Session s(cfg);
  for (const auto& obs : observations) {
    if (cfg.selection == SelectionMode::Random) s.propose_next_design();
    s.record_observation(obs.n0, obs.n);
  }
  return s;
}

std::vector<ExperimentRecord> run_simulation(const SessionConfig& cfg, const ModelSpec& truth_model,
                                             const Params& truth) {
  if (std::none_of(cfg.models.begin(), cfg.models.end(), [&](const ModelSpec& m) { return m.id == truth_model.id; }))
    throw InvalidParameter("truth model " + std::to_string(truth_model.id) + " is not among the session models");
  validate_params(truth_model, truth);
  Session s(cfg);
  while (s.status() != SessionStatus::Complete) {
    const int d = s.propose_next_design().d;
    const auto obs = sample_observation(truth_model, truth, d, cfg.tau, s.streams().observation);
    s.record_observation(d, obs.n);
  }
  const auto h = s.history();
  return {h.begin(), h.end()};
}

std::string trace_to_csv(std::span<const ExperimentRecord> records) {
  std::ostringstream out;
  out << "i,d,n";
  if (!records.empty()) {
    for (const auto& m : records.front().models) out << ",prob_model" << m.model_id;
    for (const auto& m : records.front().models) out << ",log_precision_model" << m.model_id;
  }
  out << "\n";
  for (const auto& r : records) {
    out << r.index << "," << r.d << "," << r.n;
    for (double p : r.model_probs) out << "," << format_number(p);
    for (const auto& m : r.models) out << "," << format_number(m.precision.log_precision);
    out << "\n";
  }
  return out.str();
}

}  // namespace frdesign
