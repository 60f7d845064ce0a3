#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "frdesign/models.hpp"
#include "frdesign/random.hpp"

namespace frdesign {

/// J weighted parameter particles approximating one model's posterior.
struct ParticleSet {
  ModelSpec model;
  std::vector<Params> particles;
  std::vector<double> weights;  // normalized
  double log_evidence = 0.0;
  double ess = 0.0;
  int count = 0;  // observations absorbed

  int size() const { return static_cast<int>(particles.size()); }
};

struct MoveConfig {
  double c = 0.01;                  // a particle stays put with probability at most c
  double ess_threshold_frac = 0.5;  // resample when ESS < frac * J
  double proposal_scale = 1.0;      // multiplier on the weighted particle covariance
  int max_repeats = 100;
};

void validate_move_config(const MoveConfig& cfg);

/// J prior draws with uniform weights.
ParticleSet init_particle_set(const ModelSpec& model, int particles, Rng& rng);

double effective_sample_size(std::span<const double> weights);

struct ReweightResult {
  ParticleSet set;
  double log_increment = 0.0;      // log sum_j W_j f(y | theta_j, d)
  bool degenerate_warning = false;  // ESS collapsed to roughly one particle
};

/// Importance reweighting on one new observation, in log space.
/// Throws DegenerateUpdate when no particle retains positive weight.
ReweightResult reweight(const ParticleSet& ps, const Observation& obs);

/// Systematic resampling; replication counts stay within one of J * W_j.
ParticleSet systematic_resample(const ParticleSet& ps, Rng& rng);

/// Replication counts of systematic resampling for a given uniform offset in [0, 1).
std::vector<int> systematic_counts(std::span<const double> weights, double offset);

Eigen::VectorXd weighted_mean(const ParticleSet& ps);
/// Weighted covariance sum_j W_j (x_j - mu)(x_j - mu)^T of the log-scale particles.
Eigen::MatrixXd weighted_covariance(const ParticleSet& ps);

/// Covariance usable as a random-walk proposal: the input if positive definite,
/// otherwise its diagonal with variances floored at 1e-8.
Eigen::MatrixXd proposal_covariance(const Eigen::MatrixXd& cov);

/// Number of MCMC repeats R with (1 - p)^R <= c; p floored at 1/J, R capped at max_repeats.
int required_move_count(double c, double acceptance, int particles, int max_repeats = 100);

struct MoveDecision {
  int particle = 0;
  double log_ratio = 0.0;  // proposed minus current log target
  double log_u = 0.0;
  bool accepted = false;
};

struct MoveStats {
  double probe_acceptance = 0.0;
  int repeats = 0;  // total MCMC iterations including the probe
  double overall_acceptance = 0.0;
};

struct MoveResult {
  ParticleSet set;
  MoveStats stats;
};

/// Random-walk Metropolis-Hastings rejuvenation targeting the posterior given `history`.
/// One probing sweep estimates the acceptance rate, then R - 1 further sweeps run.
/// When `decisions` is non-null every accept/reject decision is appended to it.
MoveResult move_step(const ParticleSet& ps, std::span<const Observation> history, const MoveConfig& cfg,
                     const Eigen::MatrixXd& proposal_cov, Rng& rng,
                     std::vector<MoveDecision>* decisions = nullptr);

struct RejuvenationReport {
  bool resampled = false;
  MoveStats stats;
};

/// Resample + move when ESS has fallen below the threshold. The proposal covariance
/// is taken from the weighted particles before resampling.
RejuvenationReport rejuvenate_if_needed(ParticleSet& ps, std::span<const Observation> history,
                                        const MoveConfig& cfg, Rng& resample_rng, Rng& mcmc_rng);

/// Softmax of log evidence plus log prior model probability.
std::vector<double> posterior_model_probs(std::span<const ParticleSet> sets);
std::vector<double> posterior_model_probs(std::span<const double> log_evidences,
                                          std::span<const double> prior_probs);

struct Precision {
  double log_precision = 0.0;  // -log det(weighted covariance); +inf when degenerate
  bool degenerate = false;

  double precision() const;
};

/// Bayesian D-posterior precision 1 / det(weighted covariance) of the log-scale particles.
Precision d_posterior_precision(const ParticleSet& ps);
Precision d_posterior_precision(const Eigen::MatrixXd& cov);

double log_sum_exp(std::span<const double> values);

}  // namespace frdesign
