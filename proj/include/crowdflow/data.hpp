#pragma once

// Trajectory ingestion, cubic resampling, episode windows, synthetic
// scenarios and the temporal train/test split.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "crowdflow/core.hpp"

#include "json.hpp"

namespace crowdflow {

// ---- plain-text trajectory files ------------------------------------------
// One sample per line: `frame_id ped_id x y`, whitespace separated. Lines
// starting with '#' and blank lines are ignored (artifacts carry their
// config echo in '#' headers).

inline TrajectorySet parse_trajectory_text(std::istream& is,
                                           double dt = kDefaultDt) {
  std::map<int, std::vector<TrajectorySample>> by_ped;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    long frame;
    int ped;
    double x, y;
    std::string extra;
    if (!(ls >> frame >> ped >> x >> y) || (ls >> extra))
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected `frame_id ped_id x y`, got '" + line + "'");
    if (!std::isfinite(x) || !std::isfinite(y))
      throw ParseError("line " + std::to_string(line_no) +
                       ": non-finite coordinate");
    by_ped[ped].push_back({frame, Vec2(x, y)});
  }
  TrajectorySet set;
  set.dt = dt;
  for (auto& [id, samples] : by_ped) {
    std::sort(samples.begin(), samples.end(),
              [](const auto& a, const auto& b) { return a.frame < b.frame; });
    for (std::size_t k = 1; k < samples.size(); ++k)
      if (samples[k].frame == samples[k - 1].frame)
        throw DataError("duplicate sample for pedestrian " +
                        std::to_string(id) + " at frame " +
                        std::to_string(samples[k].frame));
    set.trajectories.push_back({id, std::move(samples)});
  }
  return set;
}

inline TrajectorySet parse_trajectory_file(const std::string& path,
                                           double dt = kDefaultDt) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open trajectory file '" + path + "'");
  try {
    return parse_trajectory_text(f, dt);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void write_trajectory_text(std::ostream& os, const TrajectorySet& set,
                                  const std::vector<std::string>& header = {}) {
  for (const auto& h : header) os << "# " << h << '\n';
  // frame-major, then pedestrian id, for diff-friendly output
  std::map<long, std::vector<std::pair<int, Vec2>>> rows;
  for (const auto& t : set.trajectories)
    for (const auto& s : t.samples) rows[s.frame].emplace_back(t.id, s.position);
  for (auto& [frame, peds] : rows) {
    std::sort(peds.begin(), peds.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [id, p] : peds)
      os << frame << ' ' << id << ' ' << format_double(p.x) << ' '
         << format_double(p.y) << '\n';
  }
}

inline void write_trajectory_file(const std::string& path,
                                  const TrajectorySet& set,
                                  const std::vector<std::string>& header = {}) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  write_trajectory_text(f, set, header);
}

// ---- natural cubic spline resampling ---------------------------------------

namespace detail {

// Natural cubic spline through (t_k, y_k); second derivative zero at both
// ends. Piecewise form y = a + b dx + c dx^2 + d dx^3 per interval.
struct CubicSpline {
  std::vector<double> t, a, b, c, d;

  static CubicSpline fit(const std::vector<double>& ts,
                         const std::vector<double>& ys) {
    const std::size_t n = ts.size();
    require(n >= 2 && ys.size() == n, "CubicSpline: need matching knots");
    CubicSpline s;
    s.t = ts;
    s.a = ys;
    s.b.assign(n, 0.0);
    s.c.assign(n, 0.0);
    s.d.assign(n, 0.0);
    if (n == 2) {
      s.b[0] = (ys[1] - ys[0]) / (ts[1] - ts[0]);
      return s;
    }
    std::vector<double> h(n - 1);
    for (std::size_t k = 0; k + 1 < n; ++k) h[k] = ts[k + 1] - ts[k];
    // Thomas solve of the tridiagonal system for c_1..c_{n-2}
    std::vector<double> diag(n, 2.0), rhs(n, 0.0), upper(n, 0.0);
    for (std::size_t k = 1; k + 1 < n; ++k) {
      diag[k] = 2.0 * (h[k - 1] + h[k]);
      rhs[k] = 3.0 * ((ys[k + 1] - ys[k]) / h[k] - (ys[k] - ys[k - 1]) / h[k - 1]);
      upper[k] = h[k];
    }
    for (std::size_t k = 2; k + 1 < n; ++k) {
      const double w = h[k - 1] / diag[k - 1];
      diag[k] -= w * upper[k - 1];
      rhs[k] -= w * rhs[k - 1];
    }
    for (std::size_t k = n - 2; k >= 1; --k) {
      s.c[k] = (rhs[k] - upper[k] * (k + 2 < n ? s.c[k + 1] : 0.0)) / diag[k];
      if (k == 1) break;
    }
    for (std::size_t k = 0; k + 1 < n; ++k) {
      s.b[k] = (ys[k + 1] - ys[k]) / h[k] - h[k] * (2.0 * s.c[k] + s.c[k + 1]) / 3.0;
      s.d[k] = (s.c[k + 1] - s.c[k]) / (3.0 * h[k]);
    }
    return s;
  }

  double eval(double x) const {
    const std::size_t n = t.size();
    // knots reproduce exactly
    for (std::size_t k = 0; k < n; ++k)
      if (std::abs(x - t[k]) < 1e-9) return a[k];
    std::size_t k = 0;
    if (x >= t[n - 1])
      k = n - 2;
    else if (x > t[0])
      k = static_cast<std::size_t>(
              std::upper_bound(t.begin(), t.end(), x) - t.begin()) - 1;
    const double dx = x - t[k];
    return a[k] + dx * (b[k] + dx * (c[k] + dx * d[k]));
  }
};

}  // namespace detail

// Natural cubic interpolation of every trajectory onto the uniform
// target_dt lattice spanning its original time range. Pedestrians with
// fewer than 4 samples pass through unresampled with a warning. When
// target_dt equals the source dt the set is returned unchanged.
inline TrajectorySet resample_cubic(const TrajectorySet& traj,
                                    double target_dt,
                                    std::vector<std::string>* warnings =
                                        nullptr) {
  require(target_dt > 0.0, "resample_cubic: target_dt must be positive");
  if (target_dt == traj.dt) return traj;
  TrajectorySet out;
  out.dt = target_dt;
  for (const auto& t : traj.trajectories) {
    if (t.samples.size() < 4) {
      if (warnings)
        warnings->push_back("pedestrian " + std::to_string(t.id) +
                            ": fewer than 4 samples, not resampled");
      out.trajectories.push_back(t);
      continue;
    }
    std::vector<double> ts, xs, ys;
    ts.reserve(t.samples.size());
    for (const auto& s : t.samples) {
      ts.push_back(static_cast<double>(s.frame) * traj.dt);
      xs.push_back(s.position.x);
      ys.push_back(s.position.y);
    }
    const auto sx = detail::CubicSpline::fit(ts, xs);
    const auto sy = detail::CubicSpline::fit(ts, ys);
    const double t_first = ts.front(), t_last = ts.back();
    const long j0 = static_cast<long>(std::ceil(t_first / target_dt - 1e-9));
    const long j1 = static_cast<long>(std::floor(t_last / target_dt + 1e-9));
    Trajectory rt;
    rt.id = t.id;
    rt.samples.reserve(static_cast<std::size_t>(j1 - j0 + 1));
    for (long j = j0; j <= j1; ++j) {
      const double time = static_cast<double>(j) * target_dt;
      rt.samples.push_back({j, Vec2(sx.eval(time), sy.eval(time))});
    }
    out.trajectories.push_back(std::move(rt));
  }
  return out;
}

// ---- episodes ---------------------------------------------------------------

// A contiguous ground-truth window of h history frames plus tau horizon
// frames. Frames hold every pedestrian present; active_ids lists the ones
// present for the whole window (the only ones trained and evaluated on).
struct Episode {
  Scene scene;
  std::size_t history = kDefaultHistory;
  std::size_t horizon = 10;
  long start_frame = 0;
  std::vector<CrowdState> frames;            // h + tau states
  std::vector<std::vector<int>> active_ids;  // per frame, sorted

  std::size_t length() const { return history + horizon; }
};

// Sliding windows of length h+tau; stride defaults to tau. Pedestrians
// must cover the whole window to be active; windows with no active
// pedestrian are dropped. Destinations are each pedestrian's final
// observed position.
inline std::vector<Episode> make_episodes(const TrajectorySet& traj,
                                          const Scene& scene, std::size_t h,
                                          std::size_t tau,
                                          std::size_t stride = 0,
                                          std::vector<std::string>* warnings =
                                              nullptr) {
  require(h >= 1 && tau >= 1, "make_episodes: h and tau must be >= 1");
  if (stride == 0) stride = tau;
  std::vector<Episode> episodes;
  if (traj.trajectories.empty()) return episodes;
  const auto tracks = velocities_from_positions(traj, warnings);
  if (tracks.empty()) return episodes;
  const std::size_t window = h + tau;
  long lo = 0, hi = 0;
  bool any = false;
  for (const auto& tr : tracks) {
    const long first = tr.first_frame;
    const long last = first + static_cast<long>(tr.positions.size()) - 1;
    if (!any) {
      lo = first;
      hi = last;
      any = true;
    } else {
      lo = std::min(lo, first);
      hi = std::max(hi, last);
    }
  }
  for (long start = lo; start + static_cast<long>(window) - 1 <= hi;
       start += static_cast<long>(stride)) {
    const long end = start + static_cast<long>(window) - 1;
    Episode ep;
    ep.scene = scene;
    ep.history = h;
    ep.horizon = tau;
    ep.start_frame = start;
    ep.frames.reserve(window);
    ep.active_ids.resize(window);
    std::vector<int> active;
    for (const auto& tr : tracks) {
      const long first = tr.first_frame;
      const long last = first + static_cast<long>(tr.positions.size()) - 1;
      if (first <= start && last >= end) active.push_back(tr.id);
    }
    if (active.empty()) continue;
    std::sort(active.begin(), active.end());
    for (std::size_t f = 0; f < window; ++f) {
      const long frame = start + static_cast<long>(f);
      CrowdState state;
      state.time_index = frame;
      state.dt = traj.dt;
      for (const auto& tr : tracks) {
        const long first = tr.first_frame;
        const long k = frame - first;
        if (k < 0 || k >= static_cast<long>(tr.positions.size())) continue;
        PedestrianState ped;
        ped.id = tr.id;
        ped.position = tr.positions[k];
        ped.velocity = tr.velocities[k];
        ped.acceleration = tr.accelerations[k];
        ped.destination = tr.positions.back();
        // history stays inside the window, padded later if short
        const long h_lo = std::max<long>({0, k - static_cast<long>(h) + 1,
                                          start - first});
        for (long q = h_lo; q <= k; ++q)
          ped.history.push_back(
              {tr.positions[q], tr.velocities[q], tr.accelerations[q]});
        state.pedestrians.push_back(std::move(ped));
      }
      ep.active_ids[f] = active;
      ep.frames.push_back(std::move(state));
    }
    episodes.push_back(std::move(ep));
  }
  return episodes;
}

// ---- synthetic scenarios -----------------------------------------------------

enum class ScenarioKind { kCorridor, kCrossing, kCircle };

inline const char* scenario_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kCorridor: return "corridor";
    case ScenarioKind::kCrossing: return "crossing";
    case ScenarioKind::kCircle: return "circle";
  }
  return "corridor";
}

inline ScenarioKind scenario_from_name(const std::string& s) {
  if (s == "corridor") return ScenarioKind::kCorridor;
  if (s == "crossing") return ScenarioKind::kCrossing;
  if (s == "circle") return ScenarioKind::kCircle;
  throw ConfigError("unknown scenario '" + s + "'");
}

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::kCorridor;
  std::size_t pedestrians = 2;
  double speed = 1.2;        // m/s
  double speed_jitter = 0.0; // relative per-pedestrian spread (corridor/crossing)
  double noise_std = 0.0;    // m
  std::size_t duration = 100;  // frames
  std::uint64_t seed = 0;
  double dt = kDefaultDt;
};

// Straight-line kinematics toward a scenario-specific goal plus seeded
// Gaussian position noise. Purely a function of the spec.
inline std::pair<TrajectorySet, Scene> synth_scenario(const ScenarioSpec& spec) {
  require(spec.pedestrians >= 1, "synth_scenario: need at least 1 pedestrian");
  require(spec.duration >= 2, "synth_scenario: need at least 2 frames");
  require(spec.speed > 0.0 && spec.dt > 0.0,
          "synth_scenario: speed and dt must be positive");
  const std::size_t m = spec.pedestrians;
  const std::size_t frames = spec.duration;
  const double travel = spec.speed * spec.dt * static_cast<double>(frames - 1);
  std::mt19937_64 rng(spec.seed);
  // per-pedestrian cruise speeds; real crowds are speed-diverse and the
  // predictor needs that coverage to learn a stable velocity response
  std::vector<double> speeds(m, spec.speed);
  if (spec.speed_jitter > 0.0 && spec.kind != ScenarioKind::kCircle) {
    std::uniform_real_distribution<double> sj(-spec.speed_jitter,
                                              spec.speed_jitter);
    for (auto& s : speeds) s = spec.speed * (1.0 + sj(rng));
  }
  std::vector<Vec2> starts(m), dirs(m);
  switch (spec.kind) {
    case ScenarioKind::kCorridor:
      // two opposing lanes, 0.6 m apart vertically
      for (std::size_t i = 0; i < m; ++i) {
        const double y = 0.6 * static_cast<double>(i);
        if (i % 2 == 0) {
          starts[i] = {0.0, y};
          dirs[i] = {1.0, 0.0};
        } else {
          starts[i] = {travel, y};
          dirs[i] = {-1.0, 0.0};
        }
      }
      break;
    case ScenarioKind::kCrossing: {
      // one eastbound and one northbound stream meeting mid-scene
      const std::size_t half = (m + 1) / 2;
      for (std::size_t i = 0; i < m; ++i) {
        const double lane = 0.6 * static_cast<double>(i < half ? i : i - half);
        const double c = travel * 0.25;
        if (i < half) {
          starts[i] = {0.0, c + lane};
          dirs[i] = {1.0, 0.0};
        } else {
          starts[i] = {c + lane, 0.0};
          dirs[i] = {0.0, 1.0};
        }
      }
      break;
    }
    case ScenarioKind::kCircle: {
      // start on a circle, walk straight to the antipode; radius chosen so
      // the antipode is reached exactly at the final frame
      const double r = travel / 2.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double th = 2.0 * M_PI * static_cast<double>(i) /
                          static_cast<double>(m);
        starts[i] = {r * std::cos(th), r * std::sin(th)};
        dirs[i] = {-std::cos(th), -std::sin(th)};
      }
      break;
    }
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  TrajectorySet set;
  set.dt = spec.dt;
  double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
  for (std::size_t i = 0; i < m; ++i) {
    Trajectory t;
    t.id = static_cast<int>(i + 1);
    t.samples.reserve(frames);
    for (std::size_t f = 0; f < frames; ++f) {
      Vec2 p = starts[i] + dirs[i] * (speeds[i] * spec.dt *
                                      static_cast<double>(f));
      if (spec.noise_std > 0.0) {
        p.x += spec.noise_std * noise(rng);
        p.y += spec.noise_std * noise(rng);
      }
      min_x = std::min(min_x, p.x);
      min_y = std::min(min_y, p.y);
      max_x = std::max(max_x, p.x);
      max_y = std::max(max_y, p.y);
      t.samples.push_back({static_cast<long>(f), p});
    }
    set.trajectories.push_back(std::move(t));
  }
  const double margin = 1.0;
  Scene scene(Rect{min_x - margin, min_y - margin, max_x + margin,
                   max_y + margin},
              {});
  return {std::move(set), std::move(scene)};
}

inline nlohmann::json scenario_spec_to_json(const ScenarioSpec& spec) {
  nlohmann::json j;
  j["scenario"] = scenario_name(spec.kind);
  j["peds"] = spec.pedestrians;
  j["speed"] = spec.speed;
  j["speed_jitter"] = spec.speed_jitter;
  j["noise"] = spec.noise_std;
  j["frames"] = spec.duration;
  j["seed"] = spec.seed;
  j["dt"] = spec.dt;
  return j;
}

inline ScenarioSpec scenario_spec_from_json(const nlohmann::json& j) {
  ScenarioSpec spec;
  if (j.contains("scenario"))
    spec.kind = scenario_from_name(j.at("scenario").get<std::string>());
  auto get = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("peds", spec.pedestrians);
  get("speed", spec.speed);
  get("speed_jitter", spec.speed_jitter);
  get("noise", spec.noise_std);
  get("frames", spec.duration);
  get("seed", spec.seed);
  get("dt", spec.dt);
  return spec;
}

// ---- split -------------------------------------------------------------------

// Temporal split: the earliest floor(n*ratio) episodes train, the rest
// test. Never shuffled; overlapping windows would leak otherwise.
inline std::pair<std::vector<Episode>, std::vector<Episode>> split(
    std::vector<Episode> episodes, double ratio) {
  require(ratio > 0.0 && ratio < 1.0, "split: ratio must be inside (0,1)");
  const std::size_t n = episodes.size();
  const std::size_t n_train =
      static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio));
  std::vector<Episode> train(episodes.begin(),
                             episodes.begin() + static_cast<long>(n_train));
  std::vector<Episode> test(episodes.begin() + static_cast<long>(n_train),
                            episodes.end());
  return {std::move(train), std::move(test)};
}

// ---- scene JSON ---------------------------------------------------------------

inline nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json doc;
  doc["bounds"] = {{"min_x", scene.bounds.min_x},
                   {"min_y", scene.bounds.min_y},
                   {"max_x", scene.bounds.max_x},
                   {"max_y", scene.bounds.max_y}};
  nlohmann::json obs = nlohmann::json::array();
  for (const auto& o : scene.obstacles) obs.push_back({o.x, o.y});
  doc["obstacles"] = std::move(obs);
  return doc;
}

inline Scene scene_from_json(const nlohmann::json& doc) {
  const auto& b = doc.at("bounds");
  Rect bounds{b.at("min_x").get<double>(), b.at("min_y").get<double>(),
              b.at("max_x").get<double>(), b.at("max_y").get<double>()};
  std::vector<Vec2> obstacles;
  for (const auto& o : doc.at("obstacles"))
    obstacles.emplace_back(o.at(0).get<double>(), o.at(1).get<double>());
  return Scene(bounds, std::move(obstacles));
}

inline Scene load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open scene file '" + path + "'");
  nlohmann::json doc;
  f >> doc;
  return scene_from_json(doc);
}

}  // namespace crowdflow
