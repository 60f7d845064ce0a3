#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frdesign/smc.hpp"
#include "frdesign/utility.hpp"

namespace frdesign {

enum class SelectionMode { Optimal, Random };

std::string to_string(SelectionMode mode);
SelectionMode selection_mode_from_string(const std::string& s);

/// Optional stopping rules; both off by default.
struct EarlyStop {
  std::optional<double> max_model_prob;      // stop once some model reaches this probability
  std::optional<double> min_precision_gain;  // stop once the leading model's log precision gains less than this
};

struct SessionConfig {
  std::vector<ModelSpec> models = default_models();
  int particles = 1000;
  MoveConfig move;
  std::vector<int> design_grid = default_design_grid();
  double tau = 24.0;
  int experiments = 25;
  UtilityKind utility = UtilityKind::TotalEntropy;
  SelectionMode selection = SelectionMode::Optimal;
  std::uint64_t seed = 0;
  SurfaceOptions surface;
  EarlyStop early_stop;

  static std::vector<int> default_design_grid();
};

/// Throws ValidationError naming the offending field.
void validate_session_config(const SessionConfig& cfg);

/// Weighted histogram of one log-scale coordinate over +-4 prior sds.
struct Marginal {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::vector<double> density;  // per bin, integrates to the in-range mass
};

struct ModelSummary {
  int model_id = 0;
  double log_evidence = 0.0;
  double probability = 0.0;
  double ess = 0.0;
  Precision precision;
  bool resampled = false;
  MoveStats move;
  bool degenerate = false;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::vector<Marginal> marginals;
};

std::vector<Marginal> posterior_marginals(const ParticleSet& ps, int bins = 40);
ModelSummary summarize_particles(const ParticleSet& ps, double probability);

struct ExperimentRecord {
  int index = 0;  // 1-based
  int d = 0;
  int n = 0;
  std::vector<double> model_probs;
  std::vector<ModelSummary> models;
  std::optional<UtilitySurface> surface;
  std::vector<std::string> warnings;
};

enum class SessionStatus { AwaitingDesign, AwaitingObservation, Complete };

std::string to_string(SessionStatus status);

struct Proposal {
  int d = 0;
  std::optional<UtilitySurface> surface;  // absent in random mode
};

/// The design/observe/update loop shared by simulated and assisted sessions.
/// Observations enter only through record_observation.
class Session {
 public:
  explicit Session(SessionConfig cfg);

  const SessionConfig& config() const { return cfg_; }
  std::span<const ParticleSet> particle_sets() const { return sets_; }
  std::span<const ExperimentRecord> history() const { return records_; }
  std::vector<Observation> observations() const { return observations_; }
  std::vector<double> model_probs() const;
  SessionStatus status() const;
  const std::optional<std::string>& stop_reason() const { return stop_reason_; }
  const std::optional<Proposal>& pending() const { return pending_; }

  /// Next design; cached until the next observation arrives. Throws ConflictError when complete.
  const Proposal& propose_next_design();

  /// Validates (d, n) before touching any state, then updates every model.
  /// Throws ValidationError on out-of-range input and ConflictError when complete.
  const ExperimentRecord& record_observation(int d, int n);

  /// Reinstates a proposal read back from storage without recomputing it.
  void restore_pending(Proposal p);

  SessionStreams& streams() { return streams_; }

 private:
  void check_stopping();

  SessionConfig cfg_;
  SessionStreams streams_;
  std::vector<ParticleSet> sets_;
  std::vector<Observation> observations_;
  std::vector<ExperimentRecord> records_;
  std::optional<Proposal> pending_;
  std::optional<std::string> stop_reason_;
};

/// Rebuilds a session from its config and recorded (d, n) pairs. Random-mode proposals are
/// redrawn so the design stream ends in the same position.
Session replay_session(const SessionConfig& cfg, std::span<const Observation> observations);

/// Runs I iterations against a hidden truth, drawing observations from the session's observation stream.
std::vector<ExperimentRecord> run_simulation(const SessionConfig& cfg, const ModelSpec& truth_model,
                                             const Params& truth);

/// Per-iteration trace as CSV: i, d, n, model probabilities, log precisions.
std::string trace_to_csv(std::span<const ExperimentRecord> records);

}  // namespace frdesign
