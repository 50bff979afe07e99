#pragma once

// Fixed-step integration of the density field. One solver call per frame;
// the provider is queried as F(frame, rho) and must reuse frame-t inputs
// for fractional RK4 stages (no fractional-frame observations exist).

#include <limits>
#include <string>
#include <vector>

#include "crowdflow/autodiff.hpp"

namespace crowdflow {

enum class SolverMethod { kEuler, kRk4, kDiscrete };

inline const char* solver_name(SolverMethod m) {
  switch (m) {
    case SolverMethod::kEuler: return "euler";
    case SolverMethod::kRk4: return "rk4";
    case SolverMethod::kDiscrete: return "discrete";
  }
  return "euler";
}

inline SolverMethod solver_from_name(const std::string& s) {
  if (s == "euler") return SolverMethod::kEuler;
  if (s == "rk4") return SolverMethod::kRk4;
  if (s == "discrete") return SolverMethod::kDiscrete;
  throw ConfigError("unknown solver method '" + s + "'");
}

struct SolverConfig {
  SolverMethod method = SolverMethod::kEuler;
  std::size_t horizon = 10;  // tau, frames
  std::size_t step = 1;      // frames per solver step, fixed
  // Recorded for config parity; fixed-step methods never consult them.
  double rtol = 1e-4;
  double atol = 1e-3;
};

// Floors negative cells at zero and counts how many were floored. Applied
// after each step, before any loss sees the field.
inline std::pair<ad::Tensor, std::size_t> clamp_density(const ad::Tensor& rho) {
  std::size_t events = 0;
  for (double v : rho.values())
    if (v < 0.0) ++events;
  if (events == 0) return {rho, 0};
  return {ad::clamp(rho, 0.0, std::numeric_limits<double>::infinity()),
          events};
}

struct RolloutResult {
  std::vector<ad::Tensor> densities;  // rho^{1:tau}
  std::size_t floor_events = 0;
};

// Provider: (frame, rho) -> F_G as an (N,1) tensor.
template <class Provider>
RolloutResult rollout_density(const ad::Tensor& rho0, Provider&& derivative,
                              const SolverConfig& config) {
  require(config.horizon >= 1, "rollout_density: horizon must be >= 1");
  require(config.step == 1, "rollout_density: step is fixed at one frame");
  RolloutResult result;
  result.densities.reserve(config.horizon);
  ad::Tensor rho = rho0;
  for (std::size_t t = 0; t < config.horizon; ++t) {
    ad::Tensor next;
    switch (config.method) {
      case SolverMethod::kEuler:
        next = ad::add(rho, derivative(t, rho));
        break;
      case SolverMethod::kDiscrete: {
        // Explicit residual update; same arithmetic as Euler on purpose.
        ad::Tensor residual = derivative(t, rho);
        next = ad::add(rho, residual);
        break;
      }
      case SolverMethod::kRk4: {
        ad::Tensor k1 = derivative(t, rho);
        ad::Tensor k2 = derivative(t, ad::add(rho, ad::scale(k1, 0.5)));
        ad::Tensor k3 = derivative(t, ad::add(rho, ad::scale(k2, 0.5)));
        ad::Tensor k4 = derivative(t, ad::add(rho, k3));
        ad::Tensor incr = ad::add(ad::add(k1, ad::scale(k2, 2.0)),
                                  ad::add(ad::scale(k3, 2.0), k4));
        next = ad::add(rho, ad::scale(incr, 1.0 / 6.0));
        break;
      }
    }
    if (!next.all_finite())
      throw SolverError("rollout_density: non-finite density at frame " +
                        std::to_string(t + 1));
    auto [floored, events] = clamp_density(next);
    result.floor_events += events;
    rho = floored;
    result.densities.push_back(rho);
  }
  return result;
}

}  // namespace crowdflow
