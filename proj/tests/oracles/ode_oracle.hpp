#pragma once

// Test-only oracle: integrates the Holling depletion ODE directly with an adaptive
// Runge-Kutta-Fehlberg 7(8) stepper, in log N so small remainders keep relative precision.

#include <array>
#include <boost/numeric/odeint.hpp>
#include <cmath>

#include "frdesign/models.hpp"

namespace oracle {

inline double integrate_prey_remaining(frdesign::MechanisticType mech, double a, double th, double n0, double tau,
                                       double tol = 1e-13) {
  using State = std::array<double, 1>;
  namespace odeint = boost::numeric::odeint;
  auto rhs = [&](const State& u, State& du, double) {
    const double n = std::exp(u[0]);
    if (mech == frdesign::MechanisticType::TypeII)
      du[0] = -a / (1.0 + a * th * n);
    else
      du[0] = -a * n / (1.0 + a * th * n * n);
  };
  State u{std::log(n0)};
  if (tau > 0.0) {
    auto stepper = odeint::make_controlled(tol, tol, odeint::runge_kutta_fehlberg78<State>());
    odeint::integrate_adaptive(stepper, rhs, u, 0.0, tau, tau * 1e-3);
  }
  return std::exp(u[0]);
}

}  // namespace oracle
