#include <cmath>
#include <numeric>

#include "doctest.h"
#include "frdesign/utility.hpp"
#include "oracles/naive_utility.hpp"

using namespace frdesign;

namespace {

std::vector<ParticleSet> random_state(std::vector<int> model_ids, int J, std::uint64_t seed, int observations) {
  Rng rng(seed);
  std::vector<ParticleSet> sets;
  for (int id : model_ids) sets.push_back(init_particle_set(make_model(id, {}, 1.0 / model_ids.size()), J, rng));
  std::uniform_int_distribution<int> design(1, 60);
  for (int i = 0; i < observations; ++i) {
    const int d = design(rng);
    const int n = std::uniform_int_distribution<int>(0, d)(rng);
    for (auto& s : sets) s = reweight(s, Observation{d, n, 24}).set;
  }
  return sets;
}

}  // namespace

TEST_CASE("predictive row of a single particle is its pmf") {
  Rng rng(1);
  for (int id : {1, 3}) {
    const auto ps = init_particle_set(make_model(id), 1, rng);
    const int d = 17;
    const auto row = predictive_row(ps, d, 24);
    for (int z = 0; z <= d; ++z)
      CHECK(row.mass[z] == doctest::Approx(std::exp(log_likelihood(ps.model, ps.particles[0], {d, z, 24}))).epsilon(1e-11));
  }
}

TEST_CASE("predictive rows sum to one") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto sets = random_state({1, 2, 3, 4}, 100, seed, static_cast<int>(seed % 4));
    for (const auto& s : sets)
      for (int d : {1, 2, 9, 80, 300}) {
        const auto row = predictive_row(s, d, 24);
        CHECK(std::abs(std::accumulate(row.mass.begin(), row.mass.end(), 0.0) - 1.0) < 1e-8);
        const auto w = updated_weights(s, row, d / 2);
        CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) < 1e-10);
      }
  }
}

TEST_CASE("predictive row matches forward simulation from the particle cloud") {
  Rng rng(3);
  const auto model = make_model(3);
  const auto ps = init_particle_set(model, 200, rng);
  const int d = 10, draws = 1000000;
  std::vector<double> counts(d + 1, 0.0);
  std::uniform_int_distribution<int> pick(0, ps.size() - 1);
  for (int i = 0; i < draws; ++i) counts[sample_observation(model, ps.particles[pick(rng)], d, 24, rng).n] += 1.0;
  const auto row = predictive_row(ps, d, 24);
  for (int z = 0; z <= d; ++z) {
    const double freq = counts[z] / draws;
    const double se = std::sqrt(std::max(row.mass[z] * (1 - row.mass[z]), 1e-12) / draws);
    CHECK(std::abs(freq - row.mass[z]) < 3.5 * se);
  }
}

TEST_CASE("parameter-estimation utility") {
  Rng rng(4);
  SUBCASE("point-mass posterior gains nothing") {
    const auto ps = init_particle_set(make_model(1), 1, rng);
    const auto row = predictive_row(ps, 12, 24);
    for (int z = 0; z <= 12; ++z) CHECK(std::abs(pe_utility(row, z)) < 1e-12);
  }
  SUBCASE("flat likelihood gains nothing") {
    ParticleSet ps = init_particle_set(make_model(3), 30, rng);
    for (auto& p : ps.particles) p = ps.particles[0];
    const auto row = predictive_row(ps, 8, 24);
    for (int z = 0; z <= 8; ++z) CHECK(std::abs(pe_utility(row, z)) < 1e-12);
  }
  SUBCASE("matches naive sums") {
    const auto sets = random_state({3}, 200, 5, 2);
    const auto row = predictive_row(sets[0], 5, 24);
    for (int z = 0; z <= 5; ++z) CHECK(std::abs(pe_utility(row, z) - oracle::naive_pe(sets[0], 5, z, 24)) < 1e-10);
  }
}

TEST_CASE("model-discrimination utility") {
  PredictiveRow a, b;
  a.d = b.d = 1;
  a.mass = {0.2, 0.8};
  b.mass = {0.8, 0.2};
  const std::vector<PredictiveRow> rows{a, b};
  const std::vector<double> prior{0.5, 0.5};
  const auto u = md_utility(prior, rows, 1);
  // 0.5 * 0.8 / (0.5 * 0.8 + 0.5 * 0.2) = 0.8
  CHECK(u[0] == doctest::Approx(std::log(0.8)).epsilon(1e-14));
  CHECK(u[1] == doctest::Approx(std::log(0.2)).epsilon(1e-14));

  const std::vector<PredictiveRow> same{a, a};
  const std::vector<double> probs{0.3, 0.7};
  const auto unchanged = md_utility(probs, same, 0);
  CHECK(std::exp(unchanged[0]) == doctest::Approx(0.3));
  CHECK(std::exp(unchanged[1]) == doctest::Approx(0.7));

  const std::vector<PredictiveRow> single{a};
  const std::vector<double> one{1.0};
  CHECK(md_utility(one, single, 0)[0] == 0.0);
}

TEST_CASE("expected utility matches the naive quadruple loop") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const std::vector<int> ids = seed % 2 ? std::vector<int>{1, 4} : std::vector<int>{3, 2};
    const auto sets = random_state(ids, 100, seed + 40, static_cast<int>(seed % 3));
    for (int d : {1, 3, 5}) {
      for (auto kind : {UtilityKind::ParameterEstimation, UtilityKind::ModelDiscrimination, UtilityKind::TotalEntropy}) {
        const double fast = expected_utility(sets, d, 24, kind);
        const double naive = oracle::naive_expected_utility(sets, d, 24, kind);
        CHECK(std::abs(fast - naive) < 1e-10);
      }
    }
  }
}

TEST_CASE("expected utility identities and bounds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto sets = random_state({1, 2, 3, 4}, 80, seed + 100, static_cast<int>(seed % 5));
    const auto probs = posterior_model_probs(sets);
    double prior_entropy = 0.0;
    for (double p : probs)
      if (p > 0) prior_entropy += p * std::log(p);
    for (int d : {1, 10, 50, 200}) {
      const double pe = expected_utility(sets, d, 24, UtilityKind::ParameterEstimation);
      const double md = expected_utility(sets, d, 24, UtilityKind::ModelDiscrimination);
      const double te = expected_utility(sets, d, 24, UtilityKind::TotalEntropy);
      CHECK(std::abs(te - (pe + md)) < 1e-10);
      CHECK(md <= 1e-12);
      CHECK(md >= prior_entropy - 1e-12);
      CHECK(pe >= -1e-9);
    }
  }
  const auto one = random_state({3}, 50, 1, 2);
  for (int d : {1, 20, 300}) CHECK(expected_utility(one, d, 24, UtilityKind::ModelDiscrimination) == 0.0);
}

TEST_CASE("utility surface") {
  const auto sets = random_state({1, 2, 3, 4}, 100, 77, 0);
  SUBCASE("single design") {
    const std::vector<int> grid{42};
    const auto s = utility_surface(sets, grid, 24, UtilityKind::TotalEntropy);
    CHECK(s.best_design == 42);
    CHECK(s.values.size() == 1);
  }
  SUBCASE("duplicates evaluate identically") {
    const std::vector<int> grid{5, 30, 5};
    const auto s = utility_surface(sets, grid, 24, UtilityKind::ParameterEstimation);
    CHECK(s.values[0] == s.values[2]);
  }
  SUBCASE("finite over the full grid, argmax attained, deterministic") {
    std::vector<int> grid(300);
    std::iota(grid.begin(), grid.end(), 1);
    for (auto kind : {UtilityKind::ParameterEstimation, UtilityKind::ModelDiscrimination, UtilityKind::TotalEntropy}) {
      const auto s = utility_surface(sets, grid, 24, kind);
      REQUIRE(s.values.size() == 300);
      for (double v : s.values) CHECK(std::isfinite(v));
      CHECK(s.best_value == *std::max_element(s.values.begin(), s.values.end()));
      CHECK(s.values[s.best_design - 1] == s.best_value);
      const auto again = utility_surface(sets, grid, 24, kind);
      CHECK(again.values == s.values);
      CHECK(s.values[99] == doctest::Approx(expected_utility(sets, 100, 24, kind)).epsilon(1e-12));

      SurfaceOptions coarse;
      coarse.stride = 4;
      const auto c = utility_surface(sets, grid, 24, kind, coarse);
      CHECK(c.values.size() < 100);
      CHECK(c.best_value <= s.best_value + 1e-12);
    }
  }
  SUBCASE("ties go to the smallest design") {
    // A single-particle, single-model state has zero PE utility everywhere.
    const auto flat = random_state({3}, 1, 3, 0);
    const std::vector<int> grid{9, 4, 7};
    const auto s = utility_surface(flat, grid, 24, UtilityKind::ModelDiscrimination);
    CHECK(s.best_design == 4);
  }
  SUBCASE("csv export") {
    const std::vector<int> grid{1, 2};
    const auto csv = surface_to_csv(utility_surface(sets, grid, 24, UtilityKind::TotalEntropy));
    CHECK(csv.rfind("d,value\n1,", 0) == 0);
  }
}
