#pragma once

// Test-only oracle: tensor-grid quadrature of a two-parameter (binomial) model posterior.

#include <cmath>
#include <span>
#include <vector>

#include "frdesign/models.hpp"

namespace oracle {

struct GridPosterior {
  double log_evidence = 0.0;
  double mean[2] = {0.0, 0.0};
  double sd[2] = {0.0, 0.0};
};

/// Trapezoidal quadrature over +-`span_sds` prior sds with `points` nodes per axis.
inline GridPosterior grid_posterior(const frdesign::ModelSpec& model, std::span<const frdesign::Observation> data,
                                    int points = 400, double span_sds = 5.0) {
  const auto means = frdesign::prior_means(model);
  const auto sds = frdesign::prior_sds(model);
  std::vector<double> x0(points), x1(points);
  double h[2];
  for (int k = 0; k < 2; ++k) {
    const double lo = means[k] - span_sds * sds[k];
    const double hi = means[k] + span_sds * sds[k];
    h[k] = (hi - lo) / (points - 1);
    auto& axis = k == 0 ? x0 : x1;
    for (int i = 0; i < points; ++i) axis[i] = lo + i * h[k];
  }
  std::vector<double> logpost(static_cast<std::size_t>(points) * points);
  double peak = -INFINITY;
  for (int i = 0; i < points; ++i)
    for (int j = 0; j < points; ++j) {
      frdesign::Params p;
      p.log_a = x0[i];
      p.log_th = x1[j];
      double lp = frdesign::prior_log_density(model, p);
      for (const auto& obs : data) {
        const double prop = frdesign::expected_proportion(model.mech, p, obs.n0, obs.tau);
        lp += frdesign::log_binomial_pmf(obs.n0, obs.n, prop);
      }
      logpost[static_cast<std::size_t>(i) * points + j] = lp;
      peak = std::max(peak, lp);
    }
  double z = 0.0, s0 = 0.0, s1 = 0.0, q0 = 0.0, q1 = 0.0;
  for (int i = 0; i < points; ++i)
    for (int j = 0; j < points; ++j) {
      const double wi = (i == 0 || i == points - 1) ? 0.5 : 1.0;
      const double wj = (j == 0 || j == points - 1) ? 0.5 : 1.0;
      const double w = wi * wj * std::exp(logpost[static_cast<std::size_t>(i) * points + j] - peak);
      z += w;
      s0 += w * x0[i];
      s1 += w * x1[j];
      q0 += w * x0[i] * x0[i];
      q1 += w * x1[j] * x1[j];
    }
  GridPosterior out;
  out.log_evidence = peak + std::log(z * h[0] * h[1]);
  out.mean[0] = s0 / z;
  out.mean[1] = s1 / z;
  out.sd[0] = std::sqrt(q0 / z - out.mean[0] * out.mean[0]);
  out.sd[1] = std::sqrt(q1 / z - out.mean[1] * out.mean[1]);
  return out;
}

}  // namespace oracle
