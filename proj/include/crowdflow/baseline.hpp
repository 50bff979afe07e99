#pragma once

// Social Force baseline: relaxation toward desired velocity plus isotropic
// exponential repulsion from other pedestrians and obstacles.

#include <cmath>
#include <vector>

#include "crowdflow/core.hpp"

namespace crowdflow {

struct SfmParams {
  double relaxation_time = 0.5;    // s
  double repulsion_strength = 2.1; // A, m/s^2
  double repulsion_range = 0.3;    // B, m
  double desired_speed = 1.2;      // m/s
  double obstacle_strength = 5.0;
  double obstacle_range = 0.1;
  std::uint64_t tie_seed = 0;      // direction for coincident pedestrians

  void validate() const {
    require(relaxation_time > 0.0 && repulsion_strength > 0.0 &&
                repulsion_range > 0.0 && desired_speed > 0.0 &&
                obstacle_strength > 0.0 && obstacle_range > 0.0,
            "SfmParams: all parameters must be positive");
  }
};

inline std::vector<Vec2> sfm_step(const CrowdState& state, const Scene& scene,
                                  const SfmParams& params) {
  params.validate();
  const std::size_t m = state.size();
  std::vector<Vec2> accel(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& ped = state.pedestrians[i];
    const Vec2 goal_dir = (ped.destination - ped.position).unit();
    Vec2 a = (goal_dir * params.desired_speed - ped.velocity) *
             (1.0 / params.relaxation_time);
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      const auto& other = state.pedestrians[j];
      const Vec2 away = ped.position - other.position;
      const double d = away.norm();
      if (d == 0.0) {
        // coincident pair: deterministic seeded direction, magnitude A
        const std::uint64_t key =
            splitmix64(params.tie_seed ^
                       (static_cast<std::uint64_t>(ped.id) << 32) ^
                       static_cast<std::uint64_t>(other.id));
        const double th = 2.0 * M_PI *
                          (static_cast<double>(key >> 11) /
                           static_cast<double>(1ULL << 53));
        a += Vec2{std::cos(th), std::sin(th)} * params.repulsion_strength;
        continue;
      }
      const double mag =
          params.repulsion_strength * std::exp(-d / params.repulsion_range);
      a += away * (mag / d);
    }
    for (const auto& obs : scene.obstacles) {
      const Vec2 away = ped.position - obs;
      const double d = away.norm();
      if (d == 0.0) continue;
      const double mag =
          params.obstacle_strength * std::exp(-d / params.obstacle_range);
      a += away * (mag / d);
    }
    accel[i] = a;
  }
  return accel;
}

}  // namespace crowdflow
