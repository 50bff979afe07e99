#pragma once

// Next-frame acceleration model: an invariant history encoder feeding a
// stack of equivariant graph convolution layers over the pedestrian
// neighbor graph, plus a gated attraction along the destination direction.
// Node features are built from norms and destination-axis projections only,
// so they are invariant under rigid motions while positions, velocities and
// accelerations transform covariantly.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "crowdflow/autodiff.hpp"
#include "crowdflow/core.hpp"

namespace crowdflow {

constexpr double kEgclDistanceEps = 1e-6;
constexpr std::size_t kHistoryFeatures = 5;  // per history frame

struct PredictorConfig {
  std::size_t history = kDefaultHistory;  // h frames
  std::size_t embed_dim = 64;             // node embedding width
  std::size_t hidden = 64;                // MLP hidden width
  std::size_t layers = 2;                 // EGCL stack depth
  double neighbor_radius = 4.0;           // meters
  std::size_t max_neighbors = 8;          // k_max
  bool include_obstacles = true;

  std::size_t feature_dim() const { return kHistoryFeatures * history + 1; }
};

struct PredictorModel {
  PredictorConfig cfg;
};

// ---- parameter layout ------------------------------------------------------

inline void init_linear(ad::ParameterStore& store, const std::string& name,
                        std::size_t in, std::size_t out, std::mt19937_64& rng,
                        bool zero = false) {
  const double bound = zero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  ad::Tensor w(in, out);
  if (!zero)
    for (auto& v : w.mut_values()) v = dist(rng);
  store.add(name + ".w", std::move(w));
  store.add(name + ".b", ad::Tensor::zeros(1, out));
}

// Two-layer perceptron with a sigmoid-weighted linear unit in between.
inline void init_mlp(ad::ParameterStore& store, const std::string& name,
                     std::size_t in, std::size_t hidden, std::size_t out,
                     std::mt19937_64& rng, bool zero_output = false) {
  init_linear(store, name + ".l1", in, hidden, rng);
  init_linear(store, name + ".l2", hidden, out, rng, zero_output);
}

inline ad::Tensor linear(const ad::ParamMap& params, const std::string& name,
                         const ad::Tensor& x) {
  const ad::Tensor& w = params.at(name + ".w");
  const ad::Tensor& b = params.at(name + ".b");
  ad::Tensor y = ad::matmul(x, w);
  return ad::add(y, ad::broadcast(b, y.rows(), y.cols()));
}

inline ad::Tensor mlp(const ad::ParamMap& params, const std::string& name,
                      const ad::Tensor& x) {
  return linear(params, name + ".l2",
                ad::silu(linear(params, name + ".l1", x)));
}

inline void init_predictor(ad::ParameterStore& store,
                           const PredictorConfig& cfg, std::mt19937_64& rng) {
  const std::size_t d = cfg.embed_dim;
  init_mlp(store, "encoder", cfg.feature_dim(), cfg.hidden, d, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "egcl" + std::to_string(l);
    init_mlp(store, p + ".phi_e", 2 * d + 1, cfg.hidden, d, rng);
    init_mlp(store, p + ".phi_p", d, cfg.hidden, 1, rng);
    init_mlp(store, p + ".phi_h", 2 * d, cfg.hidden, d, rng);
    init_mlp(store, p + ".phi_a", d, cfg.hidden, 1, rng);
  }
}

// ---- neighbor graph --------------------------------------------------------

struct NeighborGraph {
  // Per node, neighbor indices nearest-first, ties broken by lower key.
  std::vector<std::vector<std::size_t>> neighbors;
};

namespace detail {

inline NeighborGraph neighbor_lists(const std::vector<Vec2>& pos,
                                    const std::vector<long>& keys,
                                    double radius, std::size_t k_max) {
  require(radius > 0.0, "build_neighbor_graph: radius must be positive");
  const std::size_t n = pos.size();
  NeighborGraph graph;
  graph.neighbors.resize(n);
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d2 = (pos[i] - pos[j]).squared_norm();
      if (d2 <= r2) cand.emplace_back(d2, j);
    }
    std::sort(cand.begin(), cand.end(),
              [&](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first < b.first;
                return keys[a.second] < keys[b.second];
              });
    if (cand.size() > k_max) cand.resize(k_max);
    graph.neighbors[i].reserve(cand.size());
    for (const auto& [d2, j] : cand) graph.neighbors[i].push_back(j);
  }
  return graph;
}

}  // namespace detail

inline NeighborGraph build_neighbor_graph(const CrowdState& state,
                                          double radius, std::size_t k_max) {
  std::vector<Vec2> pos;
  std::vector<long> keys;
  pos.reserve(state.size());
  keys.reserve(state.size());
  for (const auto& p : state.pedestrians) {
    pos.push_back(p.position);
    keys.push_back(p.id);
  }
  return detail::neighbor_lists(pos, keys, radius, k_max);
}

// ---- EGCL layer ------------------------------------------------------------

struct EgclState {
  ad::Tensor h;  // (n, embed)
  ad::Tensor p;  // (n, 2)
  ad::Tensor v;  // (n, 2)
  ad::Tensor a;  // (n, 2) acceleration produced by the layer
};

struct EdgeList {
  std::vector<std::size_t> receiver;  // i
  std::vector<std::size_t> sender;    // j in N(i)

  static EdgeList from_neighbors(const NeighborGraph& graph) {
    EdgeList e;
    for (std::size_t i = 0; i < graph.neighbors.size(); ++i)
      for (std::size_t j : graph.neighbors[i]) {
        e.receiver.push_back(i);
        e.sender.push_back(j);
      }
    return e;
  }
};

// One message-passing layer:
//   m_ij = phi_e(h_i, h_j, |p_i-p_j|^2)
//   a_i  = phi_a(h_i) * dest_dir_i + sum_j (p_i-p_j)/(|p_i-p_j|+eps) * phi_p(m_ij)
//   v'   = v + a,  p' = p + v'
//   h'   = phi_h(h, sum_j m_ij)
// Rows flagged in `frozen` (static obstacle nodes) keep p and v fixed.
inline EgclState egcl_forward(const ad::ParamMap& params,
                              const std::string& prefix, const ad::Tensor& h,
                              const ad::Tensor& p, const ad::Tensor& v,
                              const EdgeList& edges,
                              const ad::Tensor& dest_dirs,
                              const ad::Tensor& mobile_mask, int layer_index) {
  const std::size_t n = h.rows();
  ad::Tensor a_interact = ad::Tensor::zeros(n, 2);
  ad::Tensor agg = ad::Tensor::zeros(n, h.cols());
  if (!edges.receiver.empty()) {
    ad::Tensor hi = ad::take_rows(h, edges.receiver);
    ad::Tensor hj = ad::take_rows(h, edges.sender);
    ad::Tensor rel =
        ad::sub(ad::take_rows(p, edges.receiver), ad::take_rows(p, edges.sender));
    ad::Tensor d2 = ad::sum_axis(ad::mul(rel, rel), 1);  // (E,1)
    ad::Tensor msg = mlp(params, prefix + ".phi_e",
                         ad::concat_cols({hi, hj, d2}));
    ad::Tensor coef = ad::divide(mlp(params, prefix + ".phi_p", msg),
                                 ad::add_scalar(ad::sqrt(d2), kEgclDistanceEps));
    ad::Tensor force = ad::mul(rel, ad::broadcast(coef, rel.rows(), 2));
    a_interact = ad::segment_sum(force, edges.receiver, n);
    agg = ad::segment_sum(msg, edges.receiver, n);
  }
  ad::Tensor gate = mlp(params, prefix + ".phi_a", h);  // (n,1)
  ad::Tensor a_dest = ad::mul(dest_dirs, ad::broadcast(gate, n, 2));
  ad::Tensor a = ad::mul(ad::add(a_dest, a_interact),
                         ad::broadcast(mobile_mask, n, 2));
  EgclState out;
  out.a = a;
  out.v = ad::add(v, a);
  out.p = ad::add(p, out.v);
  out.h = mlp(params, prefix + ".phi_h", ad::concat_cols({h, agg}));
  if (!out.h.all_finite() || !out.a.all_finite())
    throw TrainError("egcl layer " + std::to_string(layer_index) +
                     ": non-finite activation");
  return out;
}

// ---- history features ------------------------------------------------------

// Rigid-motion invariant description of one pedestrian's recent motion:
// per history frame, the speed, its projection on the destination
// direction, the displacement from the current position (magnitude +
// projection) and the distance to the destination. Histories shorter than
// h repeat their earliest frame. Frame-difference accelerations are
// deliberately left out: on real data they are noise-dominated, and at
// rollout time the model's own smooth accelerations would sit far off the
// training manifold.
//
// Each feature is soft-saturated at a physical scale: pedestrian speeds
// and in-window displacements live well under 8 m/s / 8 m. Autoregressive
// rollouts would otherwise feed the encoder inputs far outside anything
// seen in training, and the extrapolated outputs blow the rollout up.
inline double squash(double x, double scale) {
  return scale * std::tanh(x / scale);
}

inline void append_history_features(std::vector<double>& out,
                                    const PedestrianState& ped,
                                    std::size_t h) {
  constexpr double kSpeedScale = 8.0;
  constexpr double kDispScale = 8.0;
  constexpr double kDestScale = 16.0;
  std::vector<HistFrame> hist = ped.history;
  if (hist.empty())
    hist.push_back({ped.position, ped.velocity, ped.acceleration});
  while (hist.size() < h) hist.insert(hist.begin(), hist.front());
  if (hist.size() > h)
    hist.erase(hist.begin(), hist.begin() + (hist.size() - h));
  const Vec2 cur = ped.position;
  const Vec2 dest_dir = (ped.destination - cur).unit();
  for (const auto& f : hist) {
    const Vec2 disp = cur - f.position;
    out.push_back(squash(f.velocity.norm(), kSpeedScale));
    out.push_back(squash(f.velocity.dot(dest_dir), kSpeedScale));
    out.push_back(squash(disp.norm(), kDispScale));
    out.push_back(squash(disp.dot(dest_dir), kDispScale));
    out.push_back(squash((ped.destination - f.position).norm(), kDestScale));
  }
}

// ---- full forward ----------------------------------------------------------

// Per-pedestrian acceleration (M,2) for the next frame, in m/s^2. Obstacles
// join the graph as static zero-velocity nodes with a type flag.
inline ad::Tensor predict_next(const ad::ParamMap& params,
                               const PredictorModel& model,
                               const CrowdState& state, const Scene& scene) {
  const PredictorConfig& cfg = model.cfg;
  const std::size_t m = state.size();
  if (m == 0) return ad::Tensor::zeros(0, 2);
  const std::size_t s =
      cfg.include_obstacles ? scene.obstacles.size() : std::size_t{0};
  const std::size_t n = m + s;

  ad::Tensor feats(n, cfg.feature_dim());
  ad::Tensor p0(n, 2), v0(n, 2), dest_dirs(n, 2), mobile(n, 1);
  std::vector<Vec2> pos(n);
  std::vector<long> keys(n);
  long max_id = 0;
  for (const auto& ped : state.pedestrians)
    max_id = std::max(max_id, static_cast<long>(ped.id));
  std::vector<double> row;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& ped = state.pedestrians[i];
    row.clear();
    append_history_features(row, ped, cfg.history);
    row.push_back(0.0);  // pedestrian type flag
    for (std::size_t c = 0; c < row.size(); ++c) feats.mut(i, c) = row[c];
    p0.mut(i, 0) = ped.position.x;
    p0.mut(i, 1) = ped.position.y;
    v0.mut(i, 0) = ped.velocity.x;
    v0.mut(i, 1) = ped.velocity.y;
    const Vec2 dir = (ped.destination - ped.position).unit();
    dest_dirs.mut(i, 0) = dir.x;
    dest_dirs.mut(i, 1) = dir.y;
    mobile.mut(i, 0) = 1.0;
    pos[i] = ped.position;
    keys[i] = ped.id;
  }
  for (std::size_t j = 0; j < s; ++j) {
    const std::size_t i = m + j;
    feats.mut(i, cfg.feature_dim() - 1) = 1.0;  // obstacle type flag
    p0.mut(i, 0) = scene.obstacles[j].x;
    p0.mut(i, 1) = scene.obstacles[j].y;
    mobile.mut(i, 0) = 0.0;
    pos[i] = scene.obstacles[j];
    keys[i] = max_id + 1 + static_cast<long>(j);
  }

  const NeighborGraph graph = detail::neighbor_lists(
      pos, keys, cfg.neighbor_radius, cfg.max_neighbors);
  const EdgeList edges = EdgeList::from_neighbors(graph);

  EgclState st;
  st.h = mlp(params, "encoder", feats);
  st.p = p0;
  st.v = v0;
  st.a = ad::Tensor::zeros(n, 2);
  for (std::size_t l = 0; l < cfg.layers; ++l)
    st = egcl_forward(params, "egcl" + std::to_string(l), st.h, st.p, st.v,
                      edges, dest_dirs, mobile, static_cast<int>(l));

  // The layer's unit-time velocity increment becomes an acceleration for
  // the external dt-scaled integrator.
  return ad::scale(ad::slice_rows(st.a, 0, m), 1.0 / state.dt);
}

inline std::vector<Vec2> predict_next_vec(const ad::ParamMap& params,
                                          const PredictorModel& model,
                                          const CrowdState& state,
                                          const Scene& scene) {
  ad::Tensor a = predict_next(params, model, state, scene);
  std::vector<Vec2> out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) out[i] = {a.at(i, 0), a.at(i, 1)};
  return out;
}

}  // namespace crowdflow
