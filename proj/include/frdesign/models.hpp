#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frdesign/random.hpp"

namespace frdesign {

enum class MechanisticType { TypeII, TypeIII };
enum class ObservationFamily { Binomial, BetaBinomial };

std::string to_string(MechanisticType mech);
std::string to_string(ObservationFamily family);

struct NormalPrior {
  double mean = -1.4;
  double sd = 1.35;
};

/// Independent normal priors on the log scale.
struct PriorSpec {
  NormalPrior log_a;
  NormalPrior log_th;
  NormalPrior log_lambda;
};

struct ModelSpec {
  int id = 1;
  MechanisticType mech = MechanisticType::TypeII;
  ObservationFamily obs = ObservationFamily::BetaBinomial;
  PriorSpec prior;
  double prior_model_prob = 0.25;

  /// Number of free parameters: 2 for binomial, 3 for beta-binomial.
  int dim() const { return obs == ObservationFamily::BetaBinomial ? 3 : 2; }
  std::string name() const;
};

/// Table numbering: 1 = beta-binomial II, 2 = beta-binomial III, 3 = binomial II, 4 = binomial III.
ModelSpec make_model(int id, PriorSpec prior = {}, double prior_model_prob = 0.25);

/// The four candidate models with equal prior model probabilities.
std::vector<ModelSpec> default_models();

/// Throws InvalidParameter unless ids/mech/obs agree with the table and
/// prior model probabilities form a simplex.
void validate_models(std::span<const ModelSpec> models);

/// Log attack rate, log handling time and (beta-binomial only) log over-dispersion.
struct Params {
  double log_a = 0.0;
  double log_th = 0.0;
  std::optional<double> log_lambda;

  double a() const;
  double th() const;
  double lambda() const;

  int dim() const { return log_lambda ? 3 : 2; }
  double operator[](int k) const;
  double& operator[](int k);

  static Params from_natural(double a, double th, std::optional<double> lambda = std::nullopt);

  bool operator==(const Params&) const = default;
};

void validate_params(const ModelSpec& model, const Params& params);

struct Observation {
  int n0 = 1;       // initial prey density, the design
  int n = 0;        // prey consumed
  double tau = 24;  // exposure time in hours
};

void validate_observation(const Observation& obs);

/// Prey left after `tau` hours of Holling type II/III depletion starting from `n0`.
/// Solves the separated implicit equation by safeguarded Newton iteration on log N.
double solve_prey_remaining(MechanisticType mech, double a, double th, double n0, double tau);

/// Same root, returned as log N. Keeps relative precision when N is tiny.
double solve_log_prey_remaining(MechanisticType mech, double a, double th, double n0, double tau,
                                std::optional<double> log_guess = std::nullopt);

inline constexpr double kProportionFloor = 1e-12;

/// Probability a single prey has been eaten by `tau`, clamped to [1e-12, 1 - 1e-12].
double expected_proportion(MechanisticType mech, const Params& params, int n0, double tau);

double log_choose(int n, int k);
double log_gamma(double x);
double log_beta(double x, double y);
/// log Gamma(x + n) - log Gamma(x); summed directly for large x, where the lgamma difference cancels.
double log_rising(double x, int n);

double log_binomial_pmf(int n0, int n, double p);
double log_beta_binomial_pmf(int n0, int n, double p, double lambda);

double log_likelihood(const ModelSpec& model, const Params& params, const Observation& obs);
double log_likelihood(const ModelSpec& model, const Params& params, std::span<const Observation> history);

Observation sample_observation(const ModelSpec& model, const Params& params, int n0, double tau, Rng& rng);

Params prior_sample(const ModelSpec& model, Rng& rng);
double prior_log_density(const ModelSpec& model, const Params& params);

/// Prior means/sds as vectors in parameter order (log_a, log_th[, log_lambda]).
std::vector<double> prior_means(const ModelSpec& model);
std::vector<double> prior_sds(const ModelSpec& model);

Params params_from_vector(const ModelSpec& model, std::span<const double> values);
std::vector<double> params_to_vector(const Params& params);

}  // namespace frdesign
