#include "frdesign/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "frdesign/errors.hpp"

namespace frdesign {

namespace {

bool finite(double x) { return std::isfinite(x); }

constexpr int kMaxNewtonIterations = 200;

// Residual of the separated implicit equation, as a function of u = log N.
struct DepletionEquation {
  MechanisticType mech;
  double a, th, n0, tau, log_n0;

  double residual(double u) const {
    const double n = std::exp(u);
    if (mech == MechanisticType::TypeII) return (log_n0 - u) / a + th * (n0 - n) - tau;
    return (std::exp(-u) - 1.0 / n0) / a + th * (n0 - n) - tau;
  }
  double derivative(double u) const {
    const double n = std::exp(u);
    if (mech == MechanisticType::TypeII) return -1.0 / a - th * n;
    return -std::exp(-u) / a - th * n;
  }
  // Root when th = 0; handling time only slows depletion, so this bounds the root from below.
  double no_handling_root() const {
    if (mech == MechanisticType::TypeII) return log_n0 - a * tau;
    return -std::log(1.0 / n0 + a * tau);
  }
};

}  // namespace

std::string to_string(MechanisticType mech) {
  return mech == MechanisticType::TypeII ? "typeII" : "typeIII";
}

std::string to_string(ObservationFamily family) {
  return family == ObservationFamily::Binomial ? "binomial" : "beta-binomial";
}

std::string ModelSpec::name() const {
  return to_string(obs) + " " + (mech == MechanisticType::TypeII ? "type II" : "type III");
}

ModelSpec make_model(int id, PriorSpec prior, double prior_model_prob) {
  ModelSpec m;
  m.id = id;
  switch (id) {
    case 1: m.mech = MechanisticType::TypeII; m.obs = ObservationFamily::BetaBinomial; break;
    case 2: m.mech = MechanisticType::TypeIII; m.obs = ObservationFamily::BetaBinomial; break;
    case 3: m.mech = MechanisticType::TypeII; m.obs = ObservationFamily::Binomial; break;
    case 4: m.mech = MechanisticType::TypeIII; m.obs = ObservationFamily::Binomial; break;
    default: throw InvalidParameter("model id must be in 1..4, got " + std::to_string(id));
  }
  m.prior = prior;
  m.prior_model_prob = prior_model_prob;
  return m;
}

std::vector<ModelSpec> default_models() {
  std::vector<ModelSpec> models;
  for (int id = 1; id <= 4; ++id) models.push_back(make_model(id));
  return models;
}

void validate_models(std::span<const ModelSpec> models) {
  if (models.empty()) throw InvalidParameter("at least one model is required");
  double total = 0.0;
  for (const auto& m : models) {
    const ModelSpec ref = make_model(m.id);
    if (ref.mech != m.mech || ref.obs != m.obs)
      throw InvalidParameter("model " + std::to_string(m.id) + " does not match the model table");
    if (!(m.prior_model_prob > 0.0 && m.prior_model_prob <= 1.0))
      throw InvalidParameter("prior model probability must lie in (0, 1]");
    for (const NormalPrior* p : {&m.prior.log_a, &m.prior.log_th, &m.prior.log_lambda}) {
      if (!finite(p->mean) || !(p->sd > 0.0) || !finite(p->sd))
        throw InvalidParameter("prior sd must be positive and finite for model " + std::to_string(m.id));
    }
    total += m.prior_model_prob;
  }
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = i + 1; j < models.size(); ++j)
      if (models[i].id == models[j].id) throw InvalidParameter("duplicate model id");
  if (std::abs(total - 1.0) > 1e-9) throw InvalidParameter("prior model probabilities must sum to 1");
}

double Params::a() const { return std::exp(log_a); }
double Params::th() const { return std::exp(log_th); }
double Params::lambda() const {
  if (!log_lambda) throw InvalidParameter("over-dispersion requested from a binomial parameter set");
  return std::exp(*log_lambda);
}

double Params::operator[](int k) const {
  switch (k) {
    case 0: return log_a;
    case 1: return log_th;
    default: return *log_lambda;
  }
}

double& Params::operator[](int k) {
  switch (k) {
    case 0: return log_a;
    case 1: return log_th;
    default: return *log_lambda;
  }
}

Params Params::from_natural(double a, double th, std::optional<double> lambda) {
  Params p;
  p.log_a = std::log(a);
  p.log_th = std::log(th);
  if (lambda) p.log_lambda = std::log(*lambda);
  return p;
}

void validate_params(const ModelSpec& model, const Params& params) {
  const bool wants_lambda = model.obs == ObservationFamily::BetaBinomial;
  if (wants_lambda != params.log_lambda.has_value())
    throw InvalidParameter("parameters do not match the observation family of model " +
                           std::to_string(model.id));
  if (!finite(params.log_a) || !finite(params.log_th) || (params.log_lambda && !finite(*params.log_lambda)))
    throw InvalidParameter("parameters must be finite");
}

void validate_observation(const Observation& obs) {
  if (obs.n0 < 1) throw InvalidParameter("initial prey density must be at least 1");
  if (obs.n < 0 || obs.n > obs.n0)
    throw InvalidParameter("prey consumed must lie in [0, " + std::to_string(obs.n0) + "], got " +
                           std::to_string(obs.n));
  if (!(obs.tau > 0.0) || !finite(obs.tau)) throw InvalidParameter("exposure time must be positive");
}

double solve_log_prey_remaining(MechanisticType mech, double a, double th, double n0, double tau,
                                std::optional<double> log_guess) {
  if (!finite(a) || !finite(th) || !finite(n0) || !finite(tau))
    throw InvalidParameter("depletion solver arguments must be finite");
  if (!(a > 0.0)) throw InvalidParameter("attack rate must be positive");
  if (!(n0 > 0.0)) throw InvalidParameter("initial prey density must be positive");
  if (th < 0.0) throw InvalidParameter("handling time must be non-negative");
  if (tau < 0.0) throw InvalidParameter("exposure time must be non-negative");

  const DepletionEquation eq{mech, a, th, n0, tau, std::log(n0)};
  if (tau == 0.0) return eq.log_n0;

  double lo = eq.no_handling_root();
  double hi = eq.log_n0;
  if (th == 0.0) return lo;

  double u = log_guess ? std::clamp(*log_guess, lo, hi) : lo;
  for (int iter = 0; iter < kMaxNewtonIterations; ++iter) {
    const double g = eq.residual(u);
    if (g == 0.0) return u;
    if (g > 0.0) lo = u; else hi = u;
    double next = u - g / eq.derivative(u);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = std::abs(next - u);
    u = next;
    // Relative accuracy in N, which also gives |dN| < 1e-12 for N <= n0 <= ~1e3.
    if (step <= 1e-15 * std::max(1.0, std::abs(u)) || hi - lo <= 1e-15 * std::max(1.0, std::abs(u)))
      return u;
  }
  throw NumericalError("prey depletion root finder did not converge");
}

double solve_prey_remaining(MechanisticType mech, double a, double th, double n0, double tau) {
  if (tau == 0.0 && std::isfinite(a) && a > 0.0 && std::isfinite(n0) && n0 > 0.0 && th >= 0.0) return n0;
  const double u = solve_log_prey_remaining(mech, a, th, n0, tau);
  return std::min(n0, std::exp(u));
}

double expected_proportion(MechanisticType mech, const Params& params, int n0, double tau) {
  if (n0 < 1) throw InvalidParameter("initial prey density must be at least 1");
  const double n0d = static_cast<double>(n0);
  const double u = solve_log_prey_remaining(mech, params.a(), params.th(), n0d, tau);
  const double p = -std::expm1(u - std::log(n0d));
  return std::clamp(p, kProportionFloor, 1.0 - kProportionFloor);
}

double log_gamma(double x) {
  int sign = 0;
  return ::lgamma_r(x, &sign);
}

double log_beta(double x, double y) { return log_gamma(x) + log_gamma(y) - log_gamma(x + y); }

namespace {

constexpr int kChooseTableSize = 512;

struct LogFactorialTable {
  std::array<double, kChooseTableSize + 1> values{};
  LogFactorialTable() {
    for (int i = 0; i <= kChooseTableSize; ++i) values[i] = log_gamma(i + 1.0);
  }
};

const LogFactorialTable& log_factorials() {
  static const LogFactorialTable table;
  return table;
}

}  // namespace

double log_choose(int n, int k) {
  if (k < 0 || k > n) return -INFINITY;
  if (n <= kChooseTableSize) {
    const auto& f = log_factorials().values;
    return f[n] - f[k] - f[n - k];
  }
  return log_gamma(n + 1.0) - log_gamma(k + 1.0) - log_gamma(n - k + 1.0);
}

double log_binomial_pmf(int n0, int n, double p) {
  return log_choose(n0, n) + n * std::log(p) + (n0 - n) * std::log1p(-p);
}

double log_rising(double x, int n) {
  if (x < 1e3) return log_gamma(x + n) - log_gamma(x);
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += std::log(x + k);
  return s;
}

double log_beta_binomial_pmf(int n0, int n, double p, double lambda) {
  const double alpha = p / lambda;
  const double beta = (1.0 - p) / lambda;
  return log_choose(n0, n) + log_rising(alpha, n) + log_rising(beta, n0 - n) - log_rising(alpha + beta, n0);
}

double log_likelihood(const ModelSpec& model, const Params& params, const Observation& obs) {
  validate_params(model, params);
  validate_observation(obs);
  const double p = expected_proportion(model.mech, params, obs.n0, obs.tau);
  if (model.obs == ObservationFamily::Binomial) return log_binomial_pmf(obs.n0, obs.n, p);
  return log_beta_binomial_pmf(obs.n0, obs.n, p, params.lambda());
}

double log_likelihood(const ModelSpec& model, const Params& params, std::span<const Observation> history) {
  double total = 0.0;
  for (const auto& obs : history) total += log_likelihood(model, params, obs);
  return total;
}

namespace {

// log of a Gamma(shape, 1) draw; exact for small shapes where the draw itself underflows.
double log_gamma_variate(double shape, Rng& rng) {
  if (shape >= 1.0) return std::log(std::gamma_distribution<double>(shape, 1.0)(rng));
  const double boosted = std::log(std::gamma_distribution<double>(shape + 1.0, 1.0)(rng));
  double u = uniform01(rng);
  while (u == 0.0) u = uniform01(rng);
  return boosted + std::log(u) / shape;
}

}  // namespace

Observation sample_observation(const ModelSpec& model, const Params& params, int n0, double tau, Rng& rng) {
  validate_params(model, params);
  if (n0 < 1) throw InvalidParameter("initial prey density must be at least 1");
  const double p = expected_proportion(model.mech, params, n0, tau);
  double q = p;
  if (model.obs == ObservationFamily::BetaBinomial) {
    const double lambda = params.lambda();
    const double la = log_gamma_variate(p / lambda, rng);
    const double lb = log_gamma_variate((1.0 - p) / lambda, rng);
    q = 1.0 / (1.0 + std::exp(lb - la));
  }
  const int n = std::binomial_distribution<int>(n0, q)(rng);
  return Observation{n0, n, tau};
}

std::vector<double> prior_means(const ModelSpec& model) {
  std::vector<double> v{model.prior.log_a.mean, model.prior.log_th.mean};
  if (model.dim() == 3) v.push_back(model.prior.log_lambda.mean);
  return v;
}

std::vector<double> prior_sds(const ModelSpec& model) {
  std::vector<double> v{model.prior.log_a.sd, model.prior.log_th.sd};
  if (model.dim() == 3) v.push_back(model.prior.log_lambda.sd);
  return v;
}

Params prior_sample(const ModelSpec& model, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Params p;
  p.log_a = model.prior.log_a.mean + model.prior.log_a.sd * z(rng);
  p.log_th = model.prior.log_th.mean + model.prior.log_th.sd * z(rng);
  if (model.obs == ObservationFamily::BetaBinomial)
    p.log_lambda = model.prior.log_lambda.mean + model.prior.log_lambda.sd * z(rng);
  return p;
}

double prior_log_density(const ModelSpec& model, const Params& params) {
  validate_params(model, params);
  auto normal = [](const NormalPrior& prior, double x) {
    const double z = (x - prior.mean) / prior.sd;
    return -0.5 * z * z - std::log(prior.sd) - 0.5 * std::log(2.0 * std::numbers::pi);
  };
  double total = normal(model.prior.log_a, params.log_a) + normal(model.prior.log_th, params.log_th);
  if (params.log_lambda) total += normal(model.prior.log_lambda, *params.log_lambda);
  return total;
}

Params params_from_vector(const ModelSpec& model, std::span<const double> values) {
  if (static_cast<int>(values.size()) != model.dim())
    throw InvalidParameter("parameter vector has the wrong dimension for model " + std::to_string(model.id));
  Params p;
  p.log_a = values[0];
  p.log_th = values[1];
  if (model.dim() == 3) p.log_lambda = values[2];
  return p;
}

std::vector<double> params_to_vector(const Params& params) {
  std::vector<double> v{params.log_a, params.log_th};
  if (params.log_lambda) v.push_back(*params.log_lambda);
  return v;
}

}  // namespace frdesign
