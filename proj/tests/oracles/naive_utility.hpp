#pragma once

// Test-only oracle: expected utilities by direct quadruple loops over models, outcomes
// and particles, evaluating every pmf with log-gamma and recomputing p_tau per call.

#include <cmath>
#include <span>
#include <vector>

#include "frdesign/smc.hpp"
#include "frdesign/utility.hpp"

namespace oracle {

inline double naive_pmf(const frdesign::ModelSpec& model, const frdesign::Params& theta, int d, int z, double tau) {
  const double p = frdesign::expected_proportion(model.mech, theta, d, tau);
  const double lc = std::lgamma(d + 1.0) - std::lgamma(z + 1.0) - std::lgamma(d - z + 1.0);
  if (model.obs == frdesign::ObservationFamily::Binomial)
    return std::exp(lc + z * std::log(p) + (d - z) * std::log(1.0 - p));
  const double lambda = std::exp(*theta.log_lambda);
  const double al = p / lambda, be = (1.0 - p) / lambda;
  auto lbeta = [](double x, double y) { return std::lgamma(x) + std::lgamma(y) - std::lgamma(x + y); };
  return std::exp(lc + lbeta(z + al, d - z + be) - lbeta(al, be));
}

inline std::vector<double> naive_model_probs(std::span<const frdesign::ParticleSet> sets) {
  std::vector<double> out;
  double total = 0.0;
  for (const auto& s : sets) {
    out.push_back(std::exp(s.log_evidence) * s.model.prior_model_prob);
    total += out.back();
  }
  for (auto& v : out) v /= total;
  return out;
}

/// Parameter-estimation utility of one (model, d, z): sum_j W_j(d,z) log f_j - log fhat.
inline double naive_pe(const frdesign::ParticleSet& s, int d, int z, double tau) {
  double fhat = 0.0;
  std::vector<double> f(s.size());
  for (int j = 0; j < s.size(); ++j) {
    f[j] = naive_pmf(s.model, s.particles[j], d, z, tau);
    fhat += s.weights[j] * f[j];
  }
  double inner = 0.0;
  for (int j = 0; j < s.size(); ++j) {
    const double wz = s.weights[j] * f[j] / fhat;
    if (wz > 0.0) inner += wz * std::log(f[j]);
  }
  return inner - std::log(fhat);
}

inline double naive_expected_utility(std::span<const frdesign::ParticleSet> sets, int d, double tau,
                                     frdesign::UtilityKind kind) {
  const auto probs = naive_model_probs(sets);
  const std::size_t K = sets.size();
  // fhat[m][z]
  std::vector<std::vector<double>> fhat(K, std::vector<double>(d + 1, 0.0));
  for (std::size_t m = 0; m < K; ++m)
    for (int z = 0; z <= d; ++z)
      for (int j = 0; j < sets[m].size(); ++j)
        fhat[m][z] += sets[m].weights[j] * naive_pmf(sets[m].model, sets[m].particles[j], d, z, tau);
  double total = 0.0;
  for (std::size_t m = 0; m < K; ++m) {
    for (int z = 0; z <= d; ++z) {
      double u = 0.0;
      const bool pe = kind != frdesign::UtilityKind::ModelDiscrimination;
      const bool md = kind != frdesign::UtilityKind::ParameterEstimation;
      if (pe) u += naive_pe(sets[m], d, z, tau);
      if (md) {
        double denom = 0.0;
        for (std::size_t k = 0; k < K; ++k) denom += probs[k] * fhat[k][z];
        u += std::log(probs[m] * fhat[m][z] / denom);
      }
      total += probs[m] * fhat[m][z] * u;
    }
  }
  return total;
}

}  // namespace oracle
