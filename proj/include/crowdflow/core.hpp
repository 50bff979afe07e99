#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "crowdflow/common.hpp"

namespace crowdflow {

constexpr double kDefaultDt = 0.08;        // seconds per frame
constexpr std::size_t kDefaultHistory = 8; // frames kept per pedestrian

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {
    if (!std::isfinite(x_) || !std::isfinite(y_))
      throw ContractError("Vec2: non-finite component");
  }

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(Vec2 o) { *this = *this + o; return *this; }

  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double squared_norm() const { return x * x + y * y; }
  double norm() const { return std::sqrt(squared_norm()); }

  // Unit vector, or zero when shorter than eps.
  Vec2 unit(double eps = 1e-9) const {
    const double n = norm();
    if (n < eps) return {};
    return {x / n, y / n};
  }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

struct HistFrame {
  Vec2 position;
  Vec2 velocity;
  Vec2 acceleration;
};

// One pedestrian at one frame. The history ring keeps the most recent
// frames, current frame included, oldest first.
struct PedestrianState {
  int id = 0;
  Vec2 position;
  Vec2 velocity;
  Vec2 acceleration;
  Vec2 destination;
  std::vector<HistFrame> history;

  void push_history(std::size_t cap) {
    history.push_back({position, velocity, acceleration});
    if (history.size() > cap)
      history.erase(history.begin(), history.begin() + (history.size() - cap));
  }
};

struct Rect {
  double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;

  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
  bool contains(Vec2 p) const {
    return p.x >= min_x && p.x <= max_x && p.y >= min_y && p.y <= max_y;
  }
};

struct Scene {
  Rect bounds{0.0, 0.0, 1.0, 1.0};
  std::vector<Vec2> obstacles;

  Scene() = default;
  Scene(Rect b, std::vector<Vec2> obs) : bounds(b), obstacles(std::move(obs)) {
    require(bounds.width() > 0.0 && bounds.height() > 0.0,
            "Scene: bounds must have positive area");
    for (const auto& o : obstacles)
      require(bounds.contains(o), "Scene: obstacle outside bounds");
  }
};

struct CrowdState {
  long time_index = 0;
  double dt = kDefaultDt;
  std::vector<PedestrianState> pedestrians;

  std::size_t size() const { return pedestrians.size(); }
};

inline void validate_state(const CrowdState& state) {
  require(state.dt > 0.0, "CrowdState: dt must be positive");
  std::unordered_set<int> ids;
  for (const auto& p : state.pedestrians)
    require(ids.insert(p.id).second, "CrowdState: duplicate pedestrian id");
}

// v' = v + a*dt, then p' = p + v*dt with the pre-update velocity.
inline CrowdState integrate_step(const CrowdState& state,
                                 const std::vector<Vec2>& accel,
                                 std::size_t history_cap = kDefaultHistory) {
  require(accel.size() == state.pedestrians.size(),
          "integrate_step: acceleration count " + std::to_string(accel.size()) +
              " does not match pedestrian count " +
              std::to_string(state.pedestrians.size()));
  CrowdState next = state;
  next.time_index = state.time_index + 1;
  for (std::size_t i = 0; i < next.pedestrians.size(); ++i) {
    auto& ped = next.pedestrians[i];
    const Vec2 old_v = ped.velocity;
    ped.velocity = old_v + accel[i] * state.dt;
    ped.position = ped.position + old_v * state.dt;
    ped.acceleration = accel[i];
    ped.push_history(history_cap);
  }
  return next;
}

struct TrajectorySample {
  long frame = 0;
  Vec2 position;
};

struct Trajectory {
  int id = 0;
  std::vector<TrajectorySample> samples;  // frames strictly increasing

  long first_frame() const { return samples.front().frame; }
  long last_frame() const { return samples.back().frame; }
};

struct TrajectorySet {
  double dt = kDefaultDt;
  std::vector<Trajectory> trajectories;  // sorted by id

  const Trajectory* find(int id) const {
    for (const auto& t : trajectories)
      if (t.id == id) return &t;
    return nullptr;
  }
  long min_frame() const {
    long m = 0;
    bool any = false;
    for (const auto& t : trajectories)
      if (!t.samples.empty()) {
        m = any ? std::min(m, t.first_frame()) : t.first_frame();
        any = true;
      }
    return m;
  }
  long max_frame() const {
    long m = 0;
    bool any = false;
    for (const auto& t : trajectories)
      if (!t.samples.empty()) {
        m = any ? std::max(m, t.last_frame()) : t.last_frame();
        any = true;
      }
    return m;
  }
};

// Per-pedestrian kinematics recovered from positions by forward differences.
struct KinematicTrack {
  int id = 0;
  long first_frame = 0;
  std::vector<Vec2> positions;
  std::vector<Vec2> velocities;
  std::vector<Vec2> accelerations;
};

// v^t = (p^{t+1} - p^t)/dt, a^t = (v^{t+1} - v^t)/dt; each sequence tail is
// copied from its predecessor. Pedestrians with fewer than 3 frames are
// skipped with a warning record; frames must be contiguous.
inline std::vector<KinematicTrack> velocities_from_positions(
    const TrajectorySet& traj, std::vector<std::string>* warnings = nullptr) {
  std::vector<KinematicTrack> out;
  for (const auto& t : traj.trajectories) {
    if (t.samples.size() < 3) {
      if (warnings)
        warnings->push_back("pedestrian " + std::to_string(t.id) +
                            ": fewer than 3 frames, skipped");
      continue;
    }
    for (std::size_t k = 1; k < t.samples.size(); ++k)
      if (t.samples[k].frame != t.samples[k - 1].frame + 1)
        throw DataError("pedestrian " + std::to_string(t.id) +
                        ": frames not contiguous at frame " +
                        std::to_string(t.samples[k].frame));
    KinematicTrack track;
    track.id = t.id;
    track.first_frame = t.first_frame();
    const std::size_t n = t.samples.size();
    track.positions.reserve(n);
    for (const auto& s : t.samples) track.positions.push_back(s.position);
    track.velocities.resize(n);
    for (std::size_t k = 0; k + 1 < n; ++k)
      track.velocities[k] =
          (track.positions[k + 1] - track.positions[k]) * (1.0 / traj.dt);
    track.velocities[n - 1] = track.velocities[n - 2];
    track.accelerations.resize(n);
    for (std::size_t k = 0; k + 1 < n; ++k)
      track.accelerations[k] =
          (track.velocities[k + 1] - track.velocities[k]) * (1.0 / traj.dt);
    track.accelerations[n - 1] = track.accelerations[n - 2];
    out.push_back(std::move(track));
  }
  return out;
}

}  // namespace crowdflow
