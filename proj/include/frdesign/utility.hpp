#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frdesign/smc.hpp"

namespace frdesign {

enum class UtilityKind { ParameterEstimation, ModelDiscrimination, TotalEntropy };

std::string to_string(UtilityKind kind);
UtilityKind utility_kind_from_string(const std::string& s);

/// Outcomes whose predictive mass falls below this contribute nothing.
inline constexpr double kMassFloor = 1e-300;

/// Posterior predictive summary of one model at one design d, over outcomes z = 0..d.
///   mass[z]         = sum_j W_j f(z | theta_j, d)
///   weighted_log[z] = sum_j W_j f(z | theta_j, d) log f(z | theta_j, d)
/// Together with `proportions` (p_tau per particle) this factorizes the updated weights
/// W_j(d, z) proportional to W_j f(z | theta_j, d).
struct PredictiveRow {
  int model_id = 0;
  int d = 0;
  std::vector<double> mass;
  std::vector<double> weighted_log;
  std::vector<double> proportions;
};

/// p_tau for every particle at every design (row-major, particle-major).
struct ProportionTable {
  std::vector<int> designs;
  int particles = 0;
  std::vector<double> values;

  double at(int particle, std::size_t design_index) const {
    return values[static_cast<std::size_t>(particle) * designs.size() + design_index];
  }
};

ProportionTable proportion_table(const ParticleSet& ps, std::span<const int> designs, double tau);

PredictiveRow predictive_row(const ParticleSet& ps, int d, double tau);

/// Row built from precomputed proportions (one per particle).
PredictiveRow predictive_row_from_proportions(const ParticleSet& ps, int d, std::span<const double> proportions,
                                              bool with_log_terms = true);

/// Normalized updated weights W_j(d, z).
std::vector<double> updated_weights(const ParticleSet& ps, const PredictiveRow& row, int z);

/// Parameter-estimation utility for one (model, d, z): KLD from current to updated posterior.
double pe_utility(const PredictiveRow& row, int z);

/// Updated log model probabilities log pi(m | y, z, d) for each model.
std::vector<double> md_utility(std::span<const double> model_probs, std::span<const PredictiveRow> rows, int z);

/// Expected utility of design d over models and outcomes, given the particle sets.
double expected_utility(std::span<const ParticleSet> sets, int d, double tau, UtilityKind kind);

/// Same expectation evaluated from predictive rows (one per model) and model probabilities.
double expected_utility(std::span<const double> model_probs, std::span<const PredictiveRow> rows, UtilityKind kind);

struct UtilitySurface {
  UtilityKind kind = UtilityKind::TotalEntropy;
  std::vector<int> designs;
  std::vector<double> values;
  int best_design = 0;
  double best_value = 0.0;
};

struct SurfaceOptions {
  /// Evaluate every `stride`-th design, then refine on the full grid within `refine_window`.
  int stride = 1;
  int refine_window = 5;
};

/// Evaluates the expected utility on every design in `grid`; ties go to the smallest design.
UtilitySurface utility_surface(std::span<const ParticleSet> sets, std::span<const int> grid, double tau,
                               UtilityKind kind, const SurfaceOptions& options = {});

/// Two-column CSV "d,value".
std::string surface_to_csv(const UtilitySurface& surface);

}  // namespace frdesign
