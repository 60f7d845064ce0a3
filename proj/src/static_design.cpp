#include "frdesign/static_design.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "frdesign/errors.hpp"
#include "frdesign/parallel.hpp"
#include "frdesign/smc.hpp"

namespace frdesign {

namespace {

constexpr double kEigenFloor = 1e-6;
constexpr int kMaxIterations = 500;

double safe_eval(const LogDensity& f, const Eigen::VectorXd& x) {
  double v;
  try {
    v = f(x);
  } catch (const Error&) {
    return -std::numeric_limits<double>::infinity();
  }
  return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
}

Eigen::VectorXd gradient(const LogDensity& f, const Eigen::VectorXd& x) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-5 * (1.0 + std::abs(x[i]));
    y[i] = x[i] + h;
    const double up = safe_eval(f, y);
    y[i] = x[i] - h;
    const double down = safe_eval(f, y);
    y[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Eigen::MatrixXd central_hessian(const LogDensity& f, const Eigen::VectorXd& x, double scale) {
  const auto n = x.size();
  Eigen::VectorXd h(n);
  for (Eigen::Index i = 0; i < n; ++i) h[i] = scale * (1.0 + std::abs(x[i]));
  const double f0 = safe_eval(f, x);
  Eigen::MatrixXd H(n, n);
  Eigen::VectorXd y = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = x[i] + h[i];
    const double up = safe_eval(f, y);
    y[i] = x[i] - h[i];
    const double down = safe_eval(f, y);
    y[i] = x[i];
    H(i, i) = (up - 2.0 * f0 + down) / (h[i] * h[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      auto at = [&](double si, double sj) {
        y[i] = x[i] + si * h[i];
        y[j] = x[j] + sj * h[j];
        const double v = safe_eval(f, y);
        y[i] = x[i];
        y[j] = x[j];
        return v;
      };
      H(i, j) = H(j, i) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h[i] * h[j]);
    }
  }
  return H;
}

// Central differences with one Richardson step: removes the O(h^2) truncation term while
// keeping the step large enough that rounding stays far below 1e-8.
Eigen::MatrixXd hessian(const LogDensity& f, const Eigen::VectorXd& x) {
  const Eigen::MatrixXd coarse = central_hessian(f, x, 1e-2);
  const Eigen::MatrixXd fine = central_hessian(f, x, 5e-3);
  return (4.0 * fine - coarse) / 3.0;
}

struct GslObjective {
  const LogDensity* f;
  Eigen::Index n;
};

Eigen::VectorXd to_eigen(const gsl_vector* v) {
  Eigen::VectorXd x(v->size);
  for (std::size_t i = 0; i < v->size; ++i) x[i] = gsl_vector_get(v, i);
  return x;
}

double neg_f(const gsl_vector* v, void* params) {
  const auto* obj = static_cast<GslObjective*>(params);
  const double value = safe_eval(*obj->f, to_eigen(v));
  return std::isfinite(value) ? -value : GSL_POSINF;
}

void neg_df(const gsl_vector* v, void* params, gsl_vector* g) {
  const auto* obj = static_cast<GslObjective*>(params);
  const auto grad = gradient(*obj->f, to_eigen(v));
  for (Eigen::Index i = 0; i < grad.size(); ++i) gsl_vector_set(g, i, std::isfinite(grad[i]) ? -grad[i] : 0.0);
}

void neg_fdf(const gsl_vector* v, void* params, double* value, gsl_vector* g) {
  *value = neg_f(v, params);
  neg_df(v, params, g);
}

struct StartResult {
  bool converged = false;
  Eigen::VectorXd x;
  double value = -std::numeric_limits<double>::infinity();
};

StartResult ascend(const LogDensity& f, const Eigen::VectorXd& start) {
  StartResult out;
  if (!std::isfinite(safe_eval(f, start))) return out;
  const auto n = start.size();
  GslObjective obj{&f, n};
  gsl_multimin_function_fdf fdf{&neg_f, &neg_df, &neg_fdf, static_cast<std::size_t>(n), &obj};
  gsl_vector* x0 = gsl_vector_alloc(n);
  for (Eigen::Index i = 0; i < n; ++i) gsl_vector_set(x0, i, start[i]);
  gsl_multimin_fdfminimizer* s = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, n);
  gsl_multimin_fdfminimizer_set(s, &fdf, x0, 0.1, 0.1);
  for (int it = 0; it < kMaxIterations; ++it) {
    if (gsl_multimin_fdfminimizer_iterate(s) != GSL_SUCCESS) break;
    if (gsl_multimin_test_gradient(s->gradient, 1e-7) == GSL_SUCCESS) break;
  }
  Eigen::VectorXd x = to_eigen(s->x);
  gsl_multimin_fdfminimizer_free(s);
  gsl_vector_free(x0);

  // Newton polish: quasi-Newton line searches stall around 1e-7 in the gradient.
  double fx = safe_eval(f, x);
  for (int it = 0; it < 20 && std::isfinite(fx); ++it) {
    const Eigen::MatrixXd H = hessian(f, x);
    Eigen::LLT<Eigen::MatrixXd> llt(-H);
    if (llt.info() != Eigen::Success) break;
    const Eigen::VectorXd step = llt.solve(gradient(f, x));
    if (!step.allFinite()) break;
    const Eigen::VectorXd next = x + step;
    const double fn = safe_eval(f, next);
    if (!(fn >= fx - 1e-12 * std::max(1.0, std::abs(fx)))) break;
    x = next;
    fx = fn;
    if (step.lpNorm<Eigen::Infinity>() < 1e-12 * (1.0 + x.lpNorm<Eigen::Infinity>())) break;
  }
  const Eigen::VectorXd g = gradient(f, x);
  out.x = x;
  out.value = fx;
  out.converged = std::isfinite(fx) && g.allFinite() && g.lpNorm<Eigen::Infinity>() < 1e-4 * std::max(1.0, std::abs(fx));
  return out;
}

}  // namespace

LaplaceFit laplace_fit(const LogDensity& log_joint, std::span<const Eigen::VectorXd> starts) {
  if (starts.empty()) throw InvalidParameter("laplace_fit needs at least one start");
  std::optional<StartResult> best;
  for (const auto& s : starts) {
    auto r = ascend(log_joint, s);
    if (r.converged && (!best || r.value > best->value)) best = std::move(r);
  }
  if (!best) throw FitFailure("mode search did not converge from any start");

  LaplaceFit fit;
  fit.mode = best->x;
  fit.log_joint = best->value;
  Eigen::MatrixXd precision = -hessian(log_joint, fit.mode);
  precision = 0.5 * (precision + precision.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(precision);
  if (eig.info() != Eigen::Success || !eig.eigenvalues().allFinite())
    throw FitFailure("Hessian at the mode is not finite");
  Eigen::VectorXd lambda = eig.eigenvalues();
  for (Eigen::Index i = 0; i < lambda.size(); ++i)
    if (lambda[i] < kEigenFloor) {
      lambda[i] = kEigenFloor;
      fit.repaired = true;
    }
  fit.cov = eig.eigenvectors() * lambda.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  const double p = static_cast<double>(fit.mode.size());
  fit.log_marginal = 0.5 * p * std::log(2.0 * std::numbers::pi) - 0.5 * lambda.array().log().sum() + fit.log_joint;
  return fit;
}

LaplaceFit laplace_fit(const ModelSpec& model, std::span<const Observation> data, Rng& rng) {
  for (const auto& obs : data) validate_observation(obs);
  const LogDensity log_joint = [&](const Eigen::VectorXd& x) {
    const auto params = params_from_vector(model, std::span<const double>(x.data(), x.size()));
    return log_likelihood(model, params, data) + prior_log_density(model, params);
  };
  const auto means = prior_means(model);
  std::vector<Eigen::VectorXd> starts;
  starts.push_back(Eigen::Map<const Eigen::VectorXd>(means.data(), means.size()));
  for (int k = 0; k < 4; ++k) {
    const auto v = params_to_vector(prior_sample(model, rng));
    starts.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()));
  }
  return laplace_fit(log_joint, starts);
}

double kld_mvn(const Eigen::VectorXd& mean0, const Eigen::MatrixXd& cov0, const Eigen::VectorXd& mean1,
               const Eigen::MatrixXd& cov1) {
  const auto p = mean0.size();
  if (mean1.size() != p || cov0.rows() != p || cov0.cols() != p || cov1.rows() != p || cov1.cols() != p)
    throw InvalidParameter("kld_mvn: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> l0(cov0), l1(cov1);
  if (l0.info() != Eigen::Success || l1.info() != Eigen::Success || !cov0.isApprox(cov0.transpose()) ||
      !cov1.isApprox(cov1.transpose()))
    throw InvalidParameter("kld_mvn: covariances must be symmetric positive definite");
  const Eigen::MatrixXd L0 = l0.matrixL();
  const Eigen::MatrixXd L1 = l1.matrixL();
  // tr(S1^-1 S0) = ||L1^-1 L0||_F^2
  const Eigen::MatrixXd A = L1.triangularView<Eigen::Lower>().solve(L0);
  const Eigen::VectorXd diff = L1.triangularView<Eigen::Lower>().solve(mean1 - mean0);
  const double logdet0 = 2.0 * L0.diagonal().array().log().sum();
  const double logdet1 = 2.0 * L1.diagonal().array().log().sum();
  return 0.5 * (A.squaredNorm() + diff.squaredNorm() - static_cast<double>(p) + logdet1 - logdet0);
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> prior_normal(const ModelSpec& model) {
  const auto means = prior_means(model);
  const auto sds = prior_sds(model);
  Eigen::VectorXd mu = Eigen::Map<const Eigen::VectorXd>(means.data(), means.size());
  Eigen::VectorXd sd = Eigen::Map<const Eigen::VectorXd>(sds.data(), sds.size());
  return {mu, sd.array().square().matrix().asDiagonal()};
}

std::vector<double> laplace_log_model_probs(std::span<const ModelSpec> models, std::span<const LaplaceFit> fits) {
  if (models.size() != fits.size()) throw InvalidParameter("one Laplace fit per model is required");
  std::vector<double> scores;
  for (std::size_t m = 0; m < models.size(); ++m)
    scores.push_back(fits[m].log_marginal + std::log(models[m].prior_model_prob));
  const double norm = log_sum_exp(scores);
  for (double& s : scores) s -= norm;
  return scores;
}

double static_utility(UtilityKind kind, std::span<const ModelSpec> models, std::size_t truth,
                      std::span<const LaplaceFit> fits) {
  if (truth >= models.size()) throw InvalidParameter("truth index out of range");
  double value = 0.0;
  if (kind != UtilityKind::ModelDiscrimination) {
    const auto& fit = fits.size() == models.size() ? fits[truth] : fits.front();
    const auto [mu, cov] = prior_normal(models[truth]);
    value += kld_mvn(fit.mode, fit.cov, mu, cov);
  }
  if (kind != UtilityKind::ParameterEstimation) value += laplace_log_model_probs(models, fits)[truth];
  return value;
}

StaticEstimate expected_static_utility(std::span<const ModelSpec> models, std::span<const int> design, double tau,
                                       UtilityKind kind, int B, std::uint64_t seed) {
  if (B < 1) throw InvalidParameter("B must be at least 1");
  if (design.empty()) throw InvalidParameter("design must contain at least one point");
  for (int d : design)
    if (d < 1) throw InvalidParameter("design points must be positive");
  validate_models(models);

  std::vector<double> values(B, 0.0);
  std::vector<char> failed(B, 0);
  parallel_for(B, [&](long b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    double u = uniform01(rng);
    std::size_t truth = 0;
    while (truth + 1 < models.size() && u >= models[truth].prior_model_prob) u -= models[truth++].prior_model_prob;
    const auto theta = prior_sample(models[truth], rng);
    std::vector<Observation> data;
    for (int d : design) data.push_back(sample_observation(models[truth], theta, d, tau, rng));
    try {
      std::vector<LaplaceFit> fits;
      if (kind == UtilityKind::ParameterEstimation) {
        fits.push_back(laplace_fit(models[truth], data, rng));
      } else {
        for (const auto& m : models) fits.push_back(laplace_fit(m, data, rng));
      }
      values[b] = static_utility(kind, models, truth, fits);
    } catch (const FitFailure&) {
      failed[b] = 1;
    }
  }, true);

  StaticEstimate est;
  double sum = 0.0, sum_sq = 0.0;
  for (int b = 0; b < B; ++b) {
    if (failed[b]) {
      ++est.failures;
      continue;
    }
    sum += values[b];
    ++est.draws;
  }
  if (est.failures > 0.2 * B)
    throw UnreliableEstimate(std::to_string(est.failures) + " of " + std::to_string(B) + " Laplace fits failed");
  est.estimate = sum / est.draws;
  for (int b = 0; b < B; ++b)
    if (!failed[b]) sum_sq += (values[b] - est.estimate) * (values[b] - est.estimate);
  est.se = est.draws > 1 ? std::sqrt(sum_sq / (est.draws - 1) / est.draws) : 0.0;
  return est;
}

StaticDesign coordinate_exchange(std::vector<int> d_init, std::span<const int> grid, const DesignObjective& objective,
                                 const ExchangeOptions& options, Rng& rng) {
  if (grid.empty()) throw InvalidParameter("design grid must not be empty");
  if (d_init.empty()) throw InvalidParameter("initial design must contain at least one point");
  for (int d : d_init)
    if (std::find(grid.begin(), grid.end(), d) == grid.end())
      throw InvalidParameter("initial design point " + std::to_string(d) + " is not in the grid");
  if (options.passes < 0 || options.candidates < 1) throw InvalidParameter("invalid exchange options");

  std::vector<int> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::set<int> subgrid;
  const int c = std::min<int>(options.candidates, static_cast<int>(sorted.size()));
  for (int i = 0; i < c; ++i) {
    const double pos = c == 1 ? 0.0 : static_cast<double>(i) * (sorted.size() - 1) / (c - 1);
    subgrid.insert(sorted[static_cast<std::size_t>(std::lround(pos))]);
  }

  const std::uint64_t crn = rng();
  StaticDesign out;
  out.points = std::move(d_init);
  auto current = objective(out.points, crn);
  out.initial = current;
  for (int pass = 0; pass < options.passes; ++pass) {
    bool changed = false;
    for (std::size_t k = 0; k < out.points.size(); ++k) {
      const int keep = out.points[k];
      int best_point = keep;
      StaticEstimate best = current;
      for (int cand : subgrid) {
        if (cand == keep) continue;
        auto trial = out.points;
        trial[k] = cand;
        const auto est = objective(trial, crn);
        if (est.estimate > best.estimate) {
          best = est;
          best_point = cand;
        }
      }
      if (best_point != keep && best.estimate > current.estimate + current.se) {
        out.points[k] = best_point;
        current = best;
        changed = true;
      }
    }
    out.passes = pass + 1;
    if (!changed) break;
  }
  out.estimate = current.estimate;
  out.se = current.se;
  out.failures = current.failures;
  out.B = current.draws + current.failures;
  return out;
}

StaticDesign coordinate_exchange(std::span<const ModelSpec> models, std::vector<int> d_init, std::span<const int> grid,
                                 double tau, UtilityKind kind, int B, const ExchangeOptions& options, Rng& rng) {
  const DesignObjective objective = [&](std::span<const int> design, std::uint64_t seed) {
    return expected_static_utility(models, design, tau, kind, B, seed);
  };
  return coordinate_exchange(std::move(d_init), grid, objective, options, rng);
}

}  // namespace frdesign
