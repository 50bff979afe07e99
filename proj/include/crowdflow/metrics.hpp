#pragma once

// Trajectory evaluation suite: MAE, FDE, entropic OT, Gaussian MMD, DTW,
// collision counting with the companion exemption, and the density-excess
// fraction.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "crowdflow/common.hpp"
#include "crowdflow/core.hpp"

#include "json.hpp"

namespace crowdflow {

namespace detail {

// (pred, gt) position pairs for every (id, frame) present in both sets.
inline std::vector<std::pair<Vec2, Vec2>> aligned_pairs(
    const TrajectorySet& pred, const TrajectorySet& gt) {
  std::vector<std::pair<Vec2, Vec2>> pairs;
  for (const auto& tp : pred.trajectories) {
    const Trajectory* tg = gt.find(tp.id);
    if (!tg) continue;
    std::map<long, Vec2> gmap;
    for (const auto& s : tg->samples) gmap[s.frame] = s.position;
    for (const auto& s : tp.samples) {
      auto it = gmap.find(s.frame);
      if (it != gmap.end()) pairs.emplace_back(s.position, it->second);
    }
  }
  return pairs;
}

inline std::vector<Vec2> all_points(const TrajectorySet& set) {
  std::vector<Vec2> pts;
  for (const auto& t : set.trajectories)
    for (const auto& s : t.samples) pts.push_back(s.position);
  return pts;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

inline double mae(const TrajectorySet& pred, const TrajectorySet& gt) {
  const auto pairs = detail::aligned_pairs(pred, gt);
  if (pairs.empty()) throw MetricError("mae: no aligned samples");
  double sum = 0.0;
  for (const auto& [p, g] : pairs) sum += distance(p, g);
  return sum / static_cast<double>(pairs.size());
}

inline double fde(const TrajectorySet& pred, const TrajectorySet& gt) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& tp : pred.trajectories) {
    const Trajectory* tg = gt.find(tp.id);
    if (!tg) continue;
    // final frame present in both
    std::map<long, Vec2> gmap;
    for (const auto& s : tg->samples) gmap[s.frame] = s.position;
    for (auto it = tp.samples.rbegin(); it != tp.samples.rend(); ++it) {
      auto g = gmap.find(it->frame);
      if (g != gmap.end()) {
        sum += distance(it->position, g->second);
        ++count;
        break;
      }
    }
  }
  if (count == 0) throw MetricError("fde: no aligned samples");
  return sum / static_cast<double>(count);
}

// Entropic-regularized optimal transport between uniform empirical
// measures, squared Euclidean cost, log-domain Sinkhorn updates. Returns
// the transport cost <pi, C>. eps <= 0 picks 0.01 * median cost. The two
// arguments are ordered canonically first, so the value is exactly
// symmetric in (P, Q).
inline double ot_sinkhorn(const std::vector<Vec2>& p_in,
                          const std::vector<Vec2>& q_in, double eps = 0.0,
                          std::size_t iters = 200) {
  if (p_in.empty() || q_in.empty()) throw MetricError("ot: empty point set");
  auto before = [](const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].x != b[i].x) return a[i].x < b[i].x;
      if (a[i].y != b[i].y) return a[i].y < b[i].y;
    }
    return false;
  };
  const bool flip = before(q_in, p_in);
  const std::vector<Vec2>& p = flip ? q_in : p_in;
  const std::vector<Vec2>& q = flip ? p_in : q_in;
  const std::size_t n = p.size(), m = q.size();
  std::vector<double> cost(n * m);
  parallel_ranges(n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t j = 0; j < m; ++j)
        cost[i * m + j] = (p[i] - q[j]).squared_norm();
  });
  if (eps <= 0.0) eps = 0.01 * detail::median(cost);
  if (eps <= 0.0) return 0.0;  // all points coincide
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  std::vector<double> u(n, 0.0), v(m, 0.0);
  double cur_eps = eps;
  auto lse_row = [&](std::size_t i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      mx = std::max(mx, (v[j] - cost[i * m + j]) / cur_eps);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      s += std::exp((v[j] - cost[i * m + j]) / cur_eps - mx);
    return mx + std::log(s);
  };
  auto lse_col = [&](std::size_t j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
      mx = std::max(mx, (u[i] - cost[i * m + j]) / cur_eps);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      s += std::exp((u[i] - cost[i * m + j]) / cur_eps - mx);
    return mx + std::log(s);
  };
  // epsilon scaling: the first quarter of the budget anneals from a large
  // regularizer down to the target, which converges far faster than raw
  // small-eps sweeps
  const std::size_t anneal_total = std::max<std::size_t>(1, iters / 4);
  const std::size_t phases = 6;
  for (std::size_t ph = 0; ph < phases; ++ph) {
    cur_eps = eps * static_cast<double>(1u << (phases - 1 - ph));
    for (std::size_t it = 0; it < std::max<std::size_t>(1, anneal_total / phases);
         ++it) {
      for (std::size_t i = 0; i < n; ++i) u[i] = cur_eps * (log_a - lse_row(i));
      for (std::size_t j = 0; j < m; ++j) v[j] = cur_eps * (log_b - lse_col(j));
    }
  }
  cur_eps = eps;
  for (std::size_t it = 0; it < iters - std::min(iters - 1, anneal_total);
       ++it) {
    for (std::size_t i = 0; i < n; ++i) u[i] = eps * (log_a - lse_row(i));
    for (std::size_t j = 0; j < m; ++j) v[j] = eps * (log_b - lse_col(j));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      total += std::exp((u[i] + v[j] - cost[i * m + j]) / eps) * cost[i * m + j];
  return total;
}

struct MmdResult {
  double value = 0.0;
  bool biased_fallback = false;  // singleton input, biased estimator used
  double bandwidth = 0.0;
};

// Gaussian-kernel MMD^2, unbiased U-statistic, median-heuristic bandwidth
// over the pooled points. Equal-size sets use the paired form with the
// diagonal excluded from the cross term, pairing by canonical (sorted)
// order so the statistic has set semantics and vanishes exactly on
// identical multisets; unequal sizes use the full cross sum.
inline MmdResult mmd_gaussian(std::vector<Vec2> p, std::vector<Vec2> q) {
  if (p.empty() || q.empty()) throw MetricError("mmd: empty point set");
  auto lex = [](Vec2 a, Vec2 b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  };
  std::sort(p.begin(), p.end(), lex);
  std::sort(q.begin(), q.end(), lex);
  std::vector<Vec2> pooled = p;
  pooled.insert(pooled.end(), q.begin(), q.end());
  std::vector<double> dists;
  dists.reserve(pooled.size() * (pooled.size() - 1) / 2);
  for (std::size_t i = 0; i < pooled.size(); ++i)
    for (std::size_t j = i + 1; j < pooled.size(); ++j)
      dists.push_back(distance(pooled[i], pooled[j]));
  double sigma = detail::median(dists);
  if (sigma <= 0.0) sigma = 1.0;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  auto kernel = [&](Vec2 a, Vec2 b) {
    return std::exp(-(a - b).squared_norm() * inv);
  };
  MmdResult result;
  result.bandwidth = sigma;
  const std::size_t n = p.size(), m = q.size();
  result.biased_fallback = n < 2 || m < 2;
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  if (result.biased_fallback) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) kxx += kernel(p[i], p[j]);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) kyy += kernel(q[i], q[j]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) kxy += kernel(p[i], q[j]);
    result.value = kxx / static_cast<double>(n * n) +
                   kyy / static_cast<double>(m * m) -
                   2.0 * kxy / static_cast<double>(n * m);
    return result;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) kxx += kernel(p[i], p[j]);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (i != j) kyy += kernel(q[i], q[j]);
  if (n == m) {
    // paired U-statistic: diagonal excluded from the cross term too, so
    // identical multisets give exactly zero
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) kxy += kernel(p[i], q[j]);
    result.value = (kxx + kyy - 2.0 * kxy) / static_cast<double>(n * (n - 1));
    return result;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) kxy += kernel(p[i], q[j]);
  result.value = kxx / static_cast<double>(n * (n - 1)) +
                 kyy / static_cast<double>(m * (m - 1)) -
                 2.0 * kxy / static_cast<double>(n * m);
  return result;
}

// Dynamic time warping with Euclidean ground cost; classic O(nm) program,
// no window constraint. Returns the minimal path cost sum.
inline double dtw(const std::vector<Vec2>& seq1,
                  const std::vector<Vec2>& seq2) {
  require(!seq1.empty() && !seq2.empty(), "dtw: empty sequence");
  const std::size_t n = seq1.size(), m = seq2.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      const double c = distance(seq1[i - 1], seq2[j - 1]);
      cur[j] = c + std::min({prev[j], cur[j - 1], prev[j - 1]});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

// Mean DTW over pedestrians present in both sets.
inline double dtw_mean(const TrajectorySet& pred, const TrajectorySet& gt) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& tp : pred.trajectories) {
    const Trajectory* tg = gt.find(tp.id);
    if (!tg || tp.samples.empty() || tg->samples.empty()) continue;
    std::vector<Vec2> a, b;
    for (const auto& s : tp.samples) a.push_back(s.position);
    for (const auto& s : tg->samples) b.push_back(s.position);
    sum += dtw(a, b);
    ++count;
  }
  if (count == 0) throw MetricError("dtw: no common pedestrians");
  return sum / static_cast<double>(count);
}

// Pairs closer than 0.5 m count one collision per frame. A pair whose
// consecutive sub-threshold run lasts longer than 2 s anywhere is treated
// as companions and contributes nothing at all.
inline std::size_t collision_count(const TrajectorySet& traj,
                                   double threshold = 0.5,
                                   double friend_seconds = 2.0) {
  std::map<long, std::vector<std::pair<int, Vec2>>> frames;
  for (const auto& t : traj.trajectories)
    for (const auto& s : t.samples)
      frames[s.frame].emplace_back(t.id, s.position);
  std::map<std::pair<int, int>, std::vector<long>> hits;
  for (const auto& [frame, peds] : frames)
    for (std::size_t i = 0; i < peds.size(); ++i)
      for (std::size_t j = i + 1; j < peds.size(); ++j)
        if (distance(peds[i].second, peds[j].second) < threshold) {
          auto key = std::minmax(peds[i].first, peds[j].first);
          hits[{key.first, key.second}].push_back(frame);
        }
  std::size_t total = 0;
  for (auto& [pair, fs] : hits) {
    std::sort(fs.begin(), fs.end());
    std::size_t longest = 1, run = 1;
    for (std::size_t k = 1; k < fs.size(); ++k) {
      run = fs[k] == fs[k - 1] + 1 ? run + 1 : 1;
      longest = std::max(longest, run);
    }
    const bool friends =
        static_cast<double>(longest) * traj.dt > friend_seconds;
    if (!friends) total += fs.size();
  }
  return total;
}

// Fraction of predicted (pedestrian, frame) samples whose local density
// (neighbors within radius) strictly exceeds the ground-truth mean.
inline double dea(const TrajectorySet& pred, const TrajectorySet& gt,
                  double radius = 1.0) {
  require(!pred.trajectories.empty() && !gt.trajectories.empty(),
          "dea: empty trajectory set");
  auto local_densities = [&](const TrajectorySet& set) {
    std::map<long, std::vector<Vec2>> frames;
    for (const auto& t : set.trajectories)
      for (const auto& s : t.samples) frames[s.frame].push_back(s.position);
    std::vector<double> densities;
    for (const auto& [frame, pts] : frames)
      for (std::size_t i = 0; i < pts.size(); ++i) {
        std::size_t count = 0;
        for (std::size_t j = 0; j < pts.size(); ++j)
          if (j != i && distance(pts[i], pts[j]) <= radius) ++count;
        densities.push_back(static_cast<double>(count));
      }
    return densities;
  };
  const auto gt_density = local_densities(gt);
  double mu = 0.0;
  for (double d : gt_density) mu += d;
  mu /= static_cast<double>(gt_density.size());
  const auto pred_density = local_densities(pred);
  std::size_t above = 0;
  for (double d : pred_density)
    if (d > mu) ++above;
  return static_cast<double>(above) / static_cast<double>(pred_density.size());
}

// ---- report -------------------------------------------------------------------

struct MetricReport {
  std::map<std::string, double> values;
  std::map<std::string, std::string> config_echo;

  nlohmann::json to_json() const {
    nlohmann::json doc;
    doc["metrics"] = values;
    doc["config"] = config_echo;
    return doc;
  }

  std::string to_table() const {
    std::size_t width = 7;
    for (const auto& [k, v] : values) width = std::max(width, k.size());
    std::ostringstream os;
    for (const auto& [k, v] : values) {
      os << k;
      for (std::size_t i = k.size(); i < width + 2; ++i) os << ' ';
      os << format_double(v) << '\n';
    }
    return os.str();
  }
};

inline MetricReport evaluate_metrics(const TrajectorySet& pred,
                                     const TrajectorySet& gt,
                                     const std::vector<std::string>& which) {
  MetricReport report;
  const auto pred_pts = detail::all_points(pred);
  const auto gt_pts = detail::all_points(gt);
  for (const auto& name : which) {
    if (name == "mae") {
      report.values["mae"] = mae(pred, gt);
    } else if (name == "fde") {
      report.values["fde"] = fde(pred, gt);
    } else if (name == "ot") {
      report.values["ot"] = ot_sinkhorn(pred_pts, gt_pts);
      report.config_echo["ot"] = "eps=0.01*median_cost iters=200";
    } else if (name == "mmd") {
      const MmdResult r = mmd_gaussian(pred_pts, gt_pts);
      report.values["mmd"] = r.value;
      report.config_echo["mmd"] =
          "bandwidth=median_heuristic(" + format_double(r.bandwidth) + ")" +
          (r.biased_fallback ? " biased_fallback" : "");
    } else if (name == "dtw") {
      report.values["dtw"] = dtw_mean(pred, gt);
    } else if (name == "colli") {
      report.values["colli"] = static_cast<double>(collision_count(pred));
      report.config_echo["colli"] = "threshold=0.5m friend_rule=2s";
    } else if (name == "dea") {
      report.values["dea"] = dea(pred, gt);
      report.config_echo["dea"] = "radius=1m";
    } else {
      throw ConfigError("unknown metric '" + name + "'");
    }
  }
  return report;
}

}  // namespace crowdflow
