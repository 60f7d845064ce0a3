#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "frdesign/models.hpp"
#include "frdesign/utility.hpp"

namespace frdesign {

/// Normal approximation at the posterior mode.
struct LaplaceFit {
  Eigen::VectorXd mode;
  Eigen::MatrixXd cov;
  double log_joint = 0.0;     // log likelihood + log prior at the mode
  double log_marginal = 0.0;  // (p/2) log 2 pi + (1/2) log det cov + log_joint
  bool repaired = false;      // Hessian was not negative definite and got its eigenvalues floored

  int dim() const { return static_cast<int>(mode.size()); }
};

using LogDensity = std::function<double(const Eigen::VectorXd&)>;

/// Laplace fit of an arbitrary log density from the given starting points; the best converged start wins.
/// Throws FitFailure when no start converges.
LaplaceFit laplace_fit(const LogDensity& log_joint, std::span<const Eigen::VectorXd> starts);

/// Laplace fit of one model's posterior. Starts at the prior mean and four prior draws.
LaplaceFit laplace_fit(const ModelSpec& model, std::span<const Observation> data, Rng& rng);

/// KL(N(mean0, cov0) || N(mean1, cov1)). Throws InvalidParameter unless both covariances are SPD.
double kld_mvn(const Eigen::VectorXd& mean0, const Eigen::MatrixXd& cov0, const Eigen::VectorXd& mean1,
               const Eigen::MatrixXd& cov1);

/// Normal prior of a model on the log scale, as (mean, covariance).
std::pair<Eigen::VectorXd, Eigen::MatrixXd> prior_normal(const ModelSpec& model);

/// Approximate log posterior model probabilities from Laplace log marginals.
std::vector<double> laplace_log_model_probs(std::span<const ModelSpec> models, std::span<const LaplaceFit> fits);

/// Utility of one simulated data set when `truth` (an index into models) generated it.
/// MD and TE need one fit per model; PE also accepts a single fit, taken to be the truth's.
double static_utility(UtilityKind kind, std::span<const ModelSpec> models, std::size_t truth,
                      std::span<const LaplaceFit> fits);

struct StaticEstimate {
  double estimate = 0.0;
  double se = 0.0;
  int draws = 0;
  int failures = 0;
};

/// Monte Carlo expected utility of a whole design over B joint (model, theta, y) prior draws.
/// Draw b uses its own stream derived from `seed`, so the estimate is reproducible and
/// independent of scheduling. Throws UnreliableEstimate when more than 20% of draws fail to fit.
StaticEstimate expected_static_utility(std::span<const ModelSpec> models, std::span<const int> design, double tau,
                                       UtilityKind kind, int B, std::uint64_t seed);

struct StaticDesign {
  std::vector<int> points;
  double estimate = 0.0;
  double se = 0.0;
  int B = 0;
  int failures = 0;
  int passes = 0;  // full cycles completed
  StaticEstimate initial;
};

/// Objective seam: estimate for a design under common random numbers `seed`.
using DesignObjective = std::function<StaticEstimate(std::span<const int> design, std::uint64_t seed)>;

struct ExchangeOptions {
  int passes = 3;
  int candidates = 20;  // evenly spaced grid points per sweep, plus the current value
};

/// Cyclic coordinate exchange. Each sweep evaluates the candidates under one common seed and moves
/// a coordinate only when the best candidate beats the current design by more than its standard error.
StaticDesign coordinate_exchange(std::vector<int> d_init, std::span<const int> grid, const DesignObjective& objective,
                                 const ExchangeOptions& options, Rng& rng);

StaticDesign coordinate_exchange(std::span<const ModelSpec> models, std::vector<int> d_init, std::span<const int> grid,
                                 double tau, UtilityKind kind, int B, const ExchangeOptions& options, Rng& rng);

}  // namespace frdesign
