#include "frdesign/utility.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <Eigen/Core>

#include "frdesign/errors.hpp"
#include "frdesign/parallel.hpp"

namespace frdesign {

namespace {

const double kLogMassFloor = std::log(kMassFloor);

// Adds one particle's pmf row, weighted by w, into mass (and weighted_log).
// The pmf is advanced by its ratio f(z+1) = f(z) r(z), which avoids an exp per outcome; deep tails fall
// back to exp of the log pmf so underflowed stretches recover exactly.
struct RowAccumulator {
  using Array = Eigen::ArrayXd;

  int d;
  Array lchoose;
  Array outcomes;     // 0..d-1
  Array choose_ratio; // (d - z) / (z + 1)
  Array lchoose_ratio;
  Array lf, f, ratio, log_ratio;
  double* mass;
  double* weighted_log;

  RowAccumulator(int d_, double* mass_, double* weighted_log_)
      : d(d_), lchoose(d_ + 1), outcomes(Array::LinSpaced(d_, 0.0, d_ - 1.0)), lf(d_ + 1), f(d_ + 1),
        mass(mass_), weighted_log(weighted_log_) {
    for (int z = 0; z <= d; ++z) lchoose[z] = log_choose(d, z);
    choose_ratio = (d - outcomes) / (outcomes + 1.0);
    lchoose_ratio = choose_ratio.log();
  }

  void accumulate(double w) {
    constexpr double kRecurrenceFloor = 1e-290;
    double prev = lf[0] < kLogMassFloor ? 0.0 : std::exp(lf[0]);
    f[0] = prev;
    for (int z = 1; z <= d; ++z) {
      double next;
      if (prev > kRecurrenceFloor)
        next = prev * ratio[z - 1];
      else
        next = lf[z] < kLogMassFloor ? 0.0 : std::exp(lf[z]);
      f[z] = next;
      prev = next;
    }
    f = (lf < kLogMassFloor || f < kMassFloor).select(0.0, f);
    Eigen::Map<Array> m(mass, d + 1);
    m += w * f;
    if (weighted_log) {
      Eigen::Map<Array> wl(weighted_log, d + 1);
      wl += w * f * lf;
    }
  }

  void add_binomial(double w, double p) {
    const double lp = std::log(p);
    const double lq = std::log1p(-p);
    lf.head(d) = lchoose.head(d) + outcomes * lp + (d - outcomes) * lq;
    lf[d] = d * lp;
    ratio = choose_ratio * (p / (1.0 - p));
    accumulate(w);
  }

  void add_beta_binomial(double w, double p, double lambda) {
    const double alpha = p / lambda;
    const double beta = (1.0 - p) / lambda;
    // f(0) = [lnG(d+b) - lnG(b)] - [lnG(d+a+b) - lnG(a+b)], f(z+1) / f(z) = (d-z)(z+a) / ((z+1)(d-z-1+b))
    ratio = (outcomes + alpha) / ((d - 1.0 - outcomes) + beta);
    log_ratio = lchoose_ratio + ratio.log();
    ratio *= choose_ratio;
    lf[0] = log_rising(beta, d) - log_rising(alpha + beta, d);
    for (int z = 0; z < d; ++z) lf[z + 1] = lf[z] + log_ratio[z];
    accumulate(w);
  }
};

void fill_row(const ParticleSet& ps, int d, std::span<const double> proportions, bool with_log_terms,
              PredictiveRow& row) {
  row.model_id = ps.model.id;
  row.d = d;
  row.mass.assign(d + 1, 0.0);
  row.weighted_log.assign(with_log_terms ? d + 1 : 0, 0.0);
  RowAccumulator acc(d, row.mass.data(), with_log_terms ? row.weighted_log.data() : nullptr);
  const bool beta_binomial = ps.model.obs == ObservationFamily::BetaBinomial;
  for (int j = 0; j < ps.size(); ++j) {
    const double w = ps.weights[j];
    if (w == 0.0) continue;
    if (beta_binomial)
      acc.add_beta_binomial(w, proportions[j], std::exp(*ps.particles[j].log_lambda));
    else
      acc.add_binomial(w, proportions[j]);
  }
}

struct Expectations {
  double pe = 0.0;
  double md = 0.0;
  double te = 0.0;
};

Expectations expectations(std::span<const double> probs, std::span<const PredictiveRow> rows, bool want_pe,
                          bool want_md, bool want_te) {
  Expectations out;
  const std::size_t K = rows.size();
  const int d = rows.front().d;
  std::vector<double> mixture;
  if (want_md || want_te) {
    mixture.assign(d + 1, 0.0);
    for (std::size_t m = 0; m < K; ++m)
      for (int z = 0; z <= d; ++z) mixture[z] += probs[m] * rows[m].mass[z];
  }
  double entropy_const = 0.0;
  for (std::size_t m = 0; m < K; ++m) {
    if (probs[m] <= 0.0) continue;
    const auto& row = rows[m];
    const double log_pi = std::log(probs[m]);
    entropy_const += probs[m] * log_pi;
    double pe = 0.0, md = 0.0, te = 0.0;
    for (int z = 0; z <= d; ++z) {
      const double a = row.mass[z];
      if (want_te) te += row.weighted_log[z];
      if (a < kMassFloor) continue;
      const double log_a = std::log(a);
      if (want_pe) pe += row.weighted_log[z] - a * log_a;
      if (want_md) md += a * (log_pi + log_a - std::log(mixture[z]));
    }
    out.pe += probs[m] * pe;
    out.md += probs[m] * md;
    out.te += probs[m] * te;
  }
  if (want_te) {
    for (int z = 0; z <= d; ++z)
      if (mixture[z] >= kMassFloor) out.te -= mixture[z] * std::log(mixture[z]);
    // The expanded total-entropy form drops sum_m pi_m log pi_m, which does not depend on d.
    // Restoring it keeps the expansion equal to the PE + MD sum.
    out.te += entropy_const;
  }
  return out;
}

double pick(const Expectations& e, UtilityKind kind) {
  switch (kind) {
    case UtilityKind::ParameterEstimation: return e.pe;
    case UtilityKind::ModelDiscrimination: return e.md;
    default: return e.te;
  }
}

double evaluate(std::span<const double> probs, std::span<const PredictiveRow> rows, UtilityKind kind) {
  return pick(expectations(probs, rows, kind == UtilityKind::ParameterEstimation,
                           kind == UtilityKind::ModelDiscrimination, kind == UtilityKind::TotalEntropy),
              kind);
}

}  // namespace

std::string to_string(UtilityKind kind) {
  switch (kind) {
    case UtilityKind::ParameterEstimation: return "PE";
    case UtilityKind::ModelDiscrimination: return "MD";
    default: return "TE";
  }
}

UtilityKind utility_kind_from_string(const std::string& s) {
  if (s == "PE" || s == "pe" || s == "parameter-estimation") return UtilityKind::ParameterEstimation;
  if (s == "MD" || s == "md" || s == "model-discrimination") return UtilityKind::ModelDiscrimination;
  if (s == "TE" || s == "te" || s == "total-entropy") return UtilityKind::TotalEntropy;
  throw ValidationError("unknown utility kind '" + s + "' (expected PE, MD or TE)");
}

ProportionTable proportion_table(const ParticleSet& ps, std::span<const int> designs, double tau) {
  ProportionTable table;
  table.designs.assign(designs.begin(), designs.end());
  table.particles = ps.size();
  const std::size_t nd = designs.size();
  table.values.resize(static_cast<std::size_t>(ps.size()) * nd);
  // Warm-start each particle's root search from its solution at the previous design.
  std::vector<std::size_t> order(nd);
  for (std::size_t i = 0; i < nd; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return designs[x] < designs[y]; });
  for (int d : designs)
    if (d < 1) throw InvalidParameter("designs must be positive integers");
  const MechanisticType mech = ps.model.mech;
  parallel_for(ps.size(), [&](long j) {
    const double a = ps.particles[j].a();
    const double th = ps.particles[j].th();
    std::optional<double> guess;
    double prev_log_n0 = 0.0;
    for (std::size_t idx : order) {
      const int d = designs[idx];
      const double log_n0 = std::log(static_cast<double>(d));
      if (guess) *guess += log_n0 - prev_log_n0;
      const double u = solve_log_prey_remaining(mech, a, th, d, tau, guess);
      guess = u;
      prev_log_n0 = log_n0;
      const double p = -std::expm1(u - log_n0);
      table.values[static_cast<std::size_t>(j) * nd + idx] = std::clamp(p, kProportionFloor, 1.0 - kProportionFloor);
    }
  });
  return table;
}

PredictiveRow predictive_row_from_proportions(const ParticleSet& ps, int d, std::span<const double> proportions,
                                              bool with_log_terms) {
  if (d < 1) throw InvalidParameter("design must be a positive integer");
  PredictiveRow row;
  row.proportions.assign(proportions.begin(), proportions.end());
  fill_row(ps, d, proportions, with_log_terms, row);
  return row;
}

PredictiveRow predictive_row(const ParticleSet& ps, int d, double tau) {
  std::vector<double> p(ps.size());
  for (int j = 0; j < ps.size(); ++j) p[j] = expected_proportion(ps.model.mech, ps.particles[j], d, tau);
  return predictive_row_from_proportions(ps, d, p, true);
}

std::vector<double> updated_weights(const ParticleSet& ps, const PredictiveRow& row, int z) {
  if (z < 0 || z > row.d) throw InvalidParameter("outcome outside 0..d");
  const int J = ps.size();
  std::vector<double> log_w(J);
  const bool bb = ps.model.obs == ObservationFamily::BetaBinomial;
  for (int j = 0; j < J; ++j) {
    const double lf = bb ? log_beta_binomial_pmf(row.d, z, row.proportions[j], ps.particles[j].lambda())
                         : log_binomial_pmf(row.d, z, row.proportions[j]);
    log_w[j] = std::log(ps.weights[j]) + lf;
  }
  const double norm = log_sum_exp(log_w);
  std::vector<double> w(J);
  for (int j = 0; j < J; ++j) w[j] = std::exp(log_w[j] - norm);
  return w;
}

double pe_utility(const PredictiveRow& row, int z) {
  if (z < 0 || z > row.d) throw InvalidParameter("outcome outside 0..d");
  if (row.weighted_log.empty()) throw InvalidParameter("predictive row was built without log terms");
  const double a = row.mass[z];
  if (a < kMassFloor) return 0.0;
  return row.weighted_log[z] / a - std::log(a);
}

std::vector<double> md_utility(std::span<const double> model_probs, std::span<const PredictiveRow> rows, int z) {
  const std::size_t K = rows.size();
  std::vector<double> logits(K);
  for (std::size_t m = 0; m < K; ++m) logits[m] = std::log(model_probs[m]) + std::log(rows[m].mass[z]);
  const double norm = log_sum_exp(logits);
  for (auto& l : logits) l -= norm;
  return logits;
}

double expected_utility(std::span<const double> model_probs, std::span<const PredictiveRow> rows, UtilityKind kind) {
  if (rows.empty()) throw InvalidParameter("at least one predictive row is required");
  return evaluate(model_probs, rows, kind);
}

double expected_utility(std::span<const ParticleSet> sets, int d, double tau, UtilityKind kind) {
  const auto probs = posterior_model_probs(sets);
  std::vector<PredictiveRow> rows;
  for (const auto& s : sets) rows.push_back(predictive_row(s, d, tau));
  return evaluate(probs, rows, kind);
}

UtilitySurface utility_surface(std::span<const ParticleSet> sets, std::span<const int> grid, double tau,
                               UtilityKind kind, const SurfaceOptions& options) {
  if (grid.empty()) throw InvalidParameter("design grid must not be empty");
  if (sets.empty()) throw InvalidParameter("at least one particle set is required");
  const auto probs = posterior_model_probs(sets);
  const bool with_log = kind != UtilityKind::ModelDiscrimination;

  auto evaluate_designs = [&](const std::vector<int>& designs) {
    std::vector<ProportionTable> tables;
    for (const auto& s : sets) tables.push_back(proportion_table(s, designs, tau));
    std::vector<double> values(designs.size());
    parallel_for(static_cast<long>(designs.size()), [&](long i) {
      std::vector<PredictiveRow> rows(sets.size());
      std::vector<double> p;
      for (std::size_t m = 0; m < sets.size(); ++m) {
        const auto& s = sets[m];
        p.resize(s.size());
        for (int j = 0; j < s.size(); ++j) p[j] = tables[m].at(j, i);
        fill_row(s, designs[i], p, with_log, rows[m]);
      }
      values[i] = evaluate(probs, rows, kind);
    }, true);
    return values;
  };

  std::map<int, double> evaluated;
  const int stride = std::max(1, options.stride);
  std::vector<int> first;
  for (std::size_t i = 0; i < grid.size(); i += stride) first.push_back(grid[i]);
  if (stride > 1 && first.back() != grid.back()) first.push_back(grid.back());
  {
    std::vector<int> unique_first;
    for (int d : first)
      if (!evaluated.count(d)) {
        unique_first.push_back(d);
        evaluated[d] = 0.0;
      }
    const auto vals = evaluate_designs(unique_first);
    for (std::size_t i = 0; i < unique_first.size(); ++i) evaluated[unique_first[i]] = vals[i];
  }
  if (stride > 1) {
    auto best = std::max_element(evaluated.begin(), evaluated.end(),
                                 [](const auto& x, const auto& y) { return x.second < y.second; });
    const int centre = best->first;
    std::vector<int> refine;
    std::set<int> seen;
    for (int d : grid)
      if (std::abs(d - centre) <= options.refine_window && !evaluated.count(d) && seen.insert(d).second)
        refine.push_back(d);
    const auto vals = evaluate_designs(refine);
    for (std::size_t i = 0; i < refine.size(); ++i) evaluated[refine[i]] = vals[i];
  }

  UtilitySurface surface;
  surface.kind = kind;
  if (stride == 1) {
    // Keep grid order and duplicates.
    for (int d : grid) {
      surface.designs.push_back(d);
      surface.values.push_back(evaluated.at(d));
    }
  } else {
    for (const auto& [d, v] : evaluated) {
      surface.designs.push_back(d);
      surface.values.push_back(v);
    }
  }
  surface.best_design = surface.designs.front();
  surface.best_value = surface.values.front();
  for (std::size_t i = 0; i < surface.designs.size(); ++i) {
    const double v = surface.values[i];
    const int d = surface.designs[i];
    if (v > surface.best_value || (v == surface.best_value && d < surface.best_design)) {
      surface.best_value = v;
      surface.best_design = d;
    }
  }
  return surface;
}

std::string surface_to_csv(const UtilitySurface& surface) {
  std::ostringstream out;
  out.precision(17);
  out << "d,value\n";
  for (std::size_t i = 0; i < surface.designs.size(); ++i) out << surface.designs[i] << ',' << surface.values[i] << '\n';
  return out.str();
}

}  // namespace frdesign
