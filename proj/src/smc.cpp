#include "frdesign/smc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "frdesign/errors.hpp"
#include "frdesign/parallel.hpp"

namespace frdesign {

namespace {

constexpr double kDegenerateEss = 1.5;
constexpr double kVarianceFloor = 1e-8;

double log_target(const ModelSpec& model, const Params& params, std::span<const Observation> history) {
  try {
    const double v = log_likelihood(model, params, history) + prior_log_density(model, params);
    return std::isnan(v) ? -INFINITY : v;
  } catch (const NumericalError&) {
    return -INFINITY;
  }
}

}  // namespace

void validate_move_config(const MoveConfig& cfg) {
  if (!(cfg.c > 0.0 && cfg.c < 1.0)) throw InvalidParameter("move tolerance c must lie in (0, 1)");
  if (!(cfg.ess_threshold_frac > 0.0 && cfg.ess_threshold_frac <= 1.0))
    throw InvalidParameter("ESS threshold fraction must lie in (0, 1]");
  if (!(cfg.proposal_scale > 0.0) || !std::isfinite(cfg.proposal_scale))
    throw InvalidParameter("proposal scale must be positive");
  if (cfg.max_repeats < 1) throw InvalidParameter("max_repeats must be at least 1");
}

double log_sum_exp(std::span<const double> values) {
  double m = -INFINITY;
  for (double v : values) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

ParticleSet init_particle_set(const ModelSpec& model, int particles, Rng& rng) {
  if (particles < 1) throw InvalidParameter("particle count must be at least 1");
  ParticleSet ps;
  ps.model = model;
  ps.particles.reserve(particles);
  for (int j = 0; j < particles; ++j) ps.particles.push_back(prior_sample(model, rng));
  ps.weights.assign(particles, 1.0 / particles);
  ps.ess = particles;
  return ps;
}

double effective_sample_size(std::span<const double> weights) {
  double s = 0.0;
  for (double w : weights) s += w * w;
  return 1.0 / s;
}

ReweightResult reweight(const ParticleSet& ps, const Observation& obs) {
  validate_observation(obs);
  const int J = ps.size();
  std::vector<double> log_w(J);
  parallel_for(J, [&](long j) {
    log_w[j] = std::log(ps.weights[j]) + log_likelihood(ps.model, ps.particles[j], obs);
  });

  const double shift = *std::max_element(log_w.begin(), log_w.end());
  if (!std::isfinite(shift)) {
    throw DegenerateUpdate("all particle weights vanished for model " + std::to_string(ps.model.id) +
                               " at n0=" + std::to_string(obs.n0) + ", n=" + std::to_string(obs.n),
                           shift, J);
  }
  double total = 0.0;
  for (double lw : log_w) total += std::exp(lw - shift);

  ReweightResult out;
  out.set = ps;
  out.log_increment = shift + std::log(total);
  for (int j = 0; j < J; ++j) out.set.weights[j] = std::exp(log_w[j] - shift) / total;
  out.set.log_evidence += out.log_increment;
  out.set.ess = effective_sample_size(out.set.weights);
  out.set.count += 1;
  out.degenerate_warning = J > 1 && out.set.ess < kDegenerateEss;
  return out;
}

std::vector<int> systematic_counts(std::span<const double> weights, double offset) {
  const int J = static_cast<int>(weights.size());
  std::vector<int> counts(J, 0);
  double total = 0.0;
  for (double w : weights) total += w;
  double cumulative = 0.0;
  int k = 0;
  for (int j = 0; j < J; ++j) {
    cumulative = (j == J - 1) ? J : cumulative + J * weights[j] / total;
    while (k < J && k + offset < cumulative) {
      ++counts[j];
      ++k;
    }
  }
  return counts;
}

ParticleSet systematic_resample(const ParticleSet& ps, Rng& rng) {
  const int J = ps.size();
  const auto counts = systematic_counts(ps.weights, uniform01(rng));
  ParticleSet out = ps;
  out.particles.clear();
  for (int j = 0; j < J; ++j)
    for (int c = 0; c < counts[j]; ++c) out.particles.push_back(ps.particles[j]);
  out.weights.assign(J, 1.0 / J);
  out.ess = J;
  return out;
}

Eigen::VectorXd weighted_mean(const ParticleSet& ps) {
  const int p = ps.model.dim();
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(p);
  for (int j = 0; j < ps.size(); ++j)
    for (int k = 0; k < p; ++k) mu[k] += ps.weights[j] * ps.particles[j][k];
  return mu;
}

Eigen::MatrixXd weighted_covariance(const ParticleSet& ps) {
  const int p = ps.model.dim();
  const Eigen::VectorXd mu = weighted_mean(ps);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd x(p);
  for (int j = 0; j < ps.size(); ++j) {
    for (int k = 0; k < p; ++k) x[k] = ps.particles[j][k] - mu[k];
    cov.noalias() += ps.weights[j] * x * x.transpose();
  }
  return cov;
}

Eigen::MatrixXd proposal_covariance(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  bool ok = llt.info() == Eigen::Success && cov.allFinite();
  if (ok) {
    const Eigen::MatrixXd L = llt.matrixL();
    for (int k = 0; k < L.rows(); ++k) ok = ok && L(k, k) > 1e-12;
  }
  if (ok) return cov;
  Eigen::MatrixXd diag = Eigen::MatrixXd::Zero(cov.rows(), cov.cols());
  for (int k = 0; k < cov.rows(); ++k) {
    const double v = cov(k, k);
    diag(k, k) = std::isfinite(v) ? std::max(v, kVarianceFloor) : kVarianceFloor;
  }
  return diag;
}

int required_move_count(double c, double acceptance, int particles, int max_repeats) {
  const double p = std::max(acceptance, 1.0 / std::max(particles, 1));
  if (p >= 1.0) return 1;
  // Small slack so exact integers such as log(0.01)/log(0.1) = 2 are not rounded up.
  const double r = std::ceil(std::log(c) / std::log1p(-p) - 1e-9);
  return std::clamp(static_cast<int>(r), 1, max_repeats);
}

MoveResult move_step(const ParticleSet& ps, std::span<const Observation> history, const MoveConfig& cfg,
                     const Eigen::MatrixXd& proposal_cov, Rng& rng, std::vector<MoveDecision>* decisions) {
  validate_move_config(cfg);
  const int J = ps.size();
  const int p = ps.model.dim();
  Eigen::LLT<Eigen::MatrixXd> llt(cfg.proposal_scale * proposal_covariance(proposal_cov));
  const Eigen::MatrixXd L = llt.matrixL();

  MoveResult out;
  out.set = ps;
  auto& particles = out.set.particles;
  std::vector<double> current(J);
  parallel_for(J, [&](long j) { current[j] = log_target(ps.model, particles[j], history); });

  std::vector<MoveDecision> sweep_log(J);
  long total_accepted = 0;
  auto sweep = [&]() {
    const std::uint64_t base = rng();
    parallel_for(J, [&](long j) {
      Rng local(derive_seed(base, static_cast<std::uint64_t>(j)));
      std::normal_distribution<double> normal(0.0, 1.0);
      Eigen::VectorXd z(p);
      for (int k = 0; k < p; ++k) z[k] = normal(local);
      const Eigen::VectorXd step = L * z;
      Params proposal = particles[j];
      for (int k = 0; k < p; ++k) proposal[k] += step[k];
      const double proposed = log_target(ps.model, proposal, history);
      const double log_u = std::log(uniform01(local));
      const double log_ratio = proposed - current[j];
      // Symmetric proposal: accept with probability min(1, exp(log_ratio)).
      const bool accept = log_u < log_ratio;
      if (accept) {
        particles[j] = proposal;
        current[j] = proposed;
      }
      sweep_log[j] = MoveDecision{static_cast<int>(j), log_ratio, log_u, accept};
    });
    int accepted = 0;
    for (const auto& dec : sweep_log) accepted += dec.accepted ? 1 : 0;
    if (decisions) decisions->insert(decisions->end(), sweep_log.begin(), sweep_log.end());
    total_accepted += accepted;
    return static_cast<double>(accepted) / J;
  };

  out.stats.probe_acceptance = sweep();
  out.stats.repeats = required_move_count(cfg.c, out.stats.probe_acceptance, J, cfg.max_repeats);
  for (int r = 1; r < out.stats.repeats; ++r) sweep();
  out.stats.overall_acceptance = static_cast<double>(total_accepted) / (static_cast<double>(J) * out.stats.repeats);
  return out;
}

RejuvenationReport rejuvenate_if_needed(ParticleSet& ps, std::span<const Observation> history,
                                        const MoveConfig& cfg, Rng& resample_rng, Rng& mcmc_rng) {
  RejuvenationReport report;
  if (!(ps.ess < cfg.ess_threshold_frac * ps.size())) return report;
  const Eigen::MatrixXd cov = weighted_covariance(ps);
  ParticleSet resampled = systematic_resample(ps, resample_rng);
  auto moved = move_step(resampled, history, cfg, cov, mcmc_rng);
  ps = std::move(moved.set);
  report.resampled = true;
  report.stats = moved.stats;
  return report;
}

std::vector<double> posterior_model_probs(std::span<const double> log_evidences,
                                          std::span<const double> prior_probs) {
  const std::size_t K = log_evidences.size();
  std::vector<double> logits(K);
  for (std::size_t m = 0; m < K; ++m) logits[m] = log_evidences[m] + std::log(prior_probs[m]);
  const double norm = log_sum_exp(logits);
  std::vector<double> probs(K);
  for (std::size_t m = 0; m < K; ++m) probs[m] = std::exp(logits[m] - norm);
  return probs;
}

std::vector<double> posterior_model_probs(std::span<const ParticleSet> sets) {
  std::vector<double> log_z, prior;
  for (const auto& s : sets) {
    log_z.push_back(s.log_evidence);
    prior.push_back(s.model.prior_model_prob);
  }
  return posterior_model_probs(log_z, prior);
}

double Precision::precision() const { return std::exp(log_precision); }

Precision d_posterior_precision(const Eigen::MatrixXd& cov) {
  Precision out;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success || !cov.allFinite()) {
    out.degenerate = true;
    out.log_precision = INFINITY;
    return out;
  }
  const Eigen::MatrixXd L = llt.matrixL();
  double log_det = 0.0;
  for (int k = 0; k < L.rows(); ++k) {
    if (!(L(k, k) > 0.0)) {
      out.degenerate = true;
      out.log_precision = INFINITY;
      return out;
    }
    log_det += 2.0 * std::log(L(k, k));
  }
  out.log_precision = -log_det;
  return out;
}

Precision d_posterior_precision(const ParticleSet& ps) { return d_posterior_precision(weighted_covariance(ps)); }

}  // namespace frdesign
