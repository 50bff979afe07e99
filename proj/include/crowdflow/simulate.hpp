#pragma once

// Autoregressive inference: iterate predict -> integrate until every
// pedestrian reached its destination or the horizon is exhausted. The ODE
// machinery plays no role here; only the trained step model runs.

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "crowdflow/baseline.hpp"
#include "crowdflow/core.hpp"
#include "crowdflow/metrics.hpp"
#include "crowdflow/predictor.hpp"

namespace crowdflow {

using AccelFn =
    std::function<std::vector<Vec2>(const CrowdState&, const Scene&)>;

inline AccelFn zero_accel_fn() {
  return [](const CrowdState& state, const Scene&) {
    return std::vector<Vec2>(state.size());
  };
}

inline AccelFn sfm_accel_fn(SfmParams params = {}) {
  return [params](const CrowdState& state, const Scene& scene) {
    return sfm_step(state, scene, params);
  };
}

inline AccelFn predictor_accel_fn(const ad::ParameterStore& store,
                                  PredictorModel model) {
  auto params = std::make_shared<ad::ParamMap>(ad::plain_params(store));
  return [params, model](const CrowdState& state, const Scene& scene) {
    return predict_next_vec(*params, model, state, scene);
  };
}

struct RolloutOptions {
  std::size_t horizon = 100;
  double arrival_radius = 0.5;  // m
  std::size_t history = kDefaultHistory;
};

// Emits the initial frame plus one frame per step; stops early once every
// pedestrian has arrived. Arrived pedestrians are frozen in place.
inline TrajectorySet autoregressive_rollout(const AccelFn& accel_fn,
                                            CrowdState state,
                                            const Scene& scene,
                                            const RolloutOptions& opts) {
  validate_state(state);
  TrajectorySet out;
  out.dt = state.dt;
  out.trajectories.resize(state.size());
  std::vector<bool> arrived(state.size(), false);
  auto update_arrivals = [&]() {
    bool all = true;
    for (std::size_t i = 0; i < state.size(); ++i) {
      auto& ped = state.pedestrians[i];
      if (!arrived[i] &&
          distance(ped.position, ped.destination) <= opts.arrival_radius) {
        arrived[i] = true;
        ped.velocity = {};
        ped.acceleration = {};
      }
      all = all && arrived[i];
    }
    return all;
  };
  auto record = [&]() {
    for (std::size_t i = 0; i < state.size(); ++i) {
      out.trajectories[i].id = state.pedestrians[i].id;
      out.trajectories[i].samples.push_back(
          {state.time_index, state.pedestrians[i].position});
    }
  };
  bool all_arrived = update_arrivals();
  record();
  for (std::size_t step = 0; step < opts.horizon && !all_arrived; ++step) {
    std::vector<Vec2> accel = accel_fn(state, scene);
    require(accel.size() == state.size(),
            "autoregressive_rollout: model returned wrong acceleration count");
    for (std::size_t i = 0; i < accel.size(); ++i) {
      if (arrived[i]) accel[i] = {};
      if (!std::isfinite(accel[i].x) || !std::isfinite(accel[i].y))
        throw SolverError("rollout: non-finite prediction at frame " +
                          std::to_string(state.time_index + 1));
    }
    state = integrate_step(state, accel, opts.history);
    all_arrived = update_arrivals();
    record();
  }
  return out;
}

// Builds the frame-(h-1) state of a reference trajectory set: history from
// the first h frames, destination = final observed position.
inline CrowdState initial_state_from(const TrajectorySet& traj,
                                     std::size_t h = kDefaultHistory) {
  const auto tracks = velocities_from_positions(traj);
  require(!tracks.empty(), "initial_state_from: no usable pedestrians");
  long start = 0;
  bool any = false;
  for (const auto& t : tracks) {
    start = any ? std::min(start, t.first_frame) : t.first_frame;
    any = true;
  }
  const long frame = start + static_cast<long>(h) - 1;
  CrowdState state;
  state.dt = traj.dt;
  state.time_index = frame;
  for (const auto& t : tracks) {
    const long k = frame - t.first_frame;
    if (k < 0 || k >= static_cast<long>(t.positions.size())) continue;
    PedestrianState ped;
    ped.id = t.id;
    ped.position = t.positions[k];
    ped.velocity = t.velocities[k];
    ped.acceleration = t.accelerations[k];
    ped.destination = t.positions.back();
    const long lo = std::max<long>(0, k - static_cast<long>(h) + 1);
    for (long q = lo; q <= k; ++q)
      ped.history.push_back({t.positions[q], t.velocities[q],
                             t.accelerations[q]});
    state.pedestrians.push_back(std::move(ped));
  }
  return state;
}

enum class CurveMetric { kMae, kOt };

struct ErrorCurvePoint {
  long frame = 0;
  double value = 0.0;
};

// Per-frame error series over pedestrians present in both sets at that
// frame; empty when the sets share no pedestrians.
inline std::vector<ErrorCurvePoint> accumulated_error_curve(
    const TrajectorySet& pred, const TrajectorySet& gt, CurveMetric metric) {
  std::map<long, std::vector<std::pair<Vec2, Vec2>>> per_frame;
  for (const auto& tp : pred.trajectories) {
    const Trajectory* tg = gt.find(tp.id);
    if (!tg) continue;
    std::map<long, Vec2> gmap;
    for (const auto& s : tg->samples) gmap[s.frame] = s.position;
    for (const auto& s : tp.samples) {
      auto it = gmap.find(s.frame);
      if (it != gmap.end())
        per_frame[s.frame].emplace_back(s.position, it->second);
    }
  }
  std::vector<ErrorCurvePoint> curve;
  curve.reserve(per_frame.size());
  for (const auto& [frame, pairs] : per_frame) {
    double value = 0.0;
    if (metric == CurveMetric::kMae) {
      for (const auto& [p, g] : pairs) value += distance(p, g);
      value /= static_cast<double>(pairs.size());
    } else {
      std::vector<Vec2> ps, gs;
      for (const auto& [p, g] : pairs) {
        ps.push_back(p);
        gs.push_back(g);
      }
      value = ot_sinkhorn(ps, gs);
    }
    curve.push_back({frame, value});
  }
  return curve;
}

inline void write_error_curve_csv(std::ostream& os,
                                  const std::vector<ErrorCurvePoint>& mae_curve,
                                  const std::vector<ErrorCurvePoint>& ot_curve) {
  os << "frame,mae,ot\n";
  for (std::size_t i = 0; i < mae_curve.size(); ++i) {
    os << mae_curve[i].frame << ',' << format_double(mae_curve[i].value) << ',';
    os << (i < ot_curve.size() ? format_double(ot_curve[i].value) : "");
    os << '\n';
  }
}

}  // namespace crowdflow
