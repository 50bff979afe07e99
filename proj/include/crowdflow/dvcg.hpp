#pragma once

// Density-velocity coupled graph: pedestrian cell transitions become
// directed edges between grid cells, carrying mean speed and a gate mask;
// inflow minus outflow over those edges is the density time derivative.

#include <map>
#include <utility>
#include <vector>

#include "crowdflow/autodiff.hpp"
#include "crowdflow/density.hpp"

#include "json.hpp"

namespace crowdflow {

struct NodeEmbedding {
  ad::Tensor w;  // (N,d)
  ad::Tensor b;  // (N,d)
};

// W = w w^T, B = b b^T, recomputed from the live embeddings so gradients
// reach w and b.
inline std::pair<ad::Tensor, ad::Tensor> expand_weights(
    const NodeEmbedding& emb) {
  return {ad::matmul(emb.w, ad::transpose(emb.w)),
          ad::matmul(emb.b, ad::transpose(emb.b))};
}

struct DynamicGraph {
  std::size_t cells = 0;
  std::vector<std::size_t> from;  // per-edge source cell
  std::vector<std::size_t> to;    // per-edge target cell
  ad::Tensor speed;               // (E,1) mean contributor speed
  ad::Tensor gate;                // (E,1) max contributor mask
  std::vector<std::vector<std::size_t>> contributors;  // pedestrian indices

  std::size_t edge_count() const { return from.size(); }
};

// Each pedestrian contributes to the edge (cell of pos_t -> cell of
// pos_next); same-cell transitions carry no flux. Cell selection is the
// assignment argmax, which for the softmax form is simply the nearest
// center, so it is hard and carries no gradient; speeds and gates stay
// differentiable.
inline DynamicGraph build_dynamic_graph(const Grid& grid,
                                        const std::vector<Vec2>& pos_t,
                                        const std::vector<Vec2>& pos_next,
                                        const ad::Tensor& velocities,
                                        const ad::Tensor& masks) {
  const std::size_t m = pos_t.size();
  require(pos_next.size() == m && velocities.rows() == m &&
              velocities.cols() == 2 && masks.rows() == m && masks.cols() == 1,
          "build_dynamic_graph: pedestrian array sizes disagree");
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>>
      edges;
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t j = grid.nearest_cell(pos_t[k]);
    const std::size_t i = grid.nearest_cell(pos_next[k]);
    if (j == i) continue;
    edges[{j, i}].push_back(k);
  }
  DynamicGraph g;
  g.cells = grid.size();
  const std::size_t e = edges.size();
  g.from.reserve(e);
  g.to.reserve(e);
  g.contributors.reserve(e);
  std::vector<std::size_t> contrib_ped, contrib_edge;
  std::vector<double> inv_count;
  std::size_t idx = 0;
  for (const auto& [key, peds] : edges) {
    g.from.push_back(key.first);
    g.to.push_back(key.second);
    g.contributors.push_back(peds);
    inv_count.push_back(1.0 / static_cast<double>(peds.size()));
    for (std::size_t k : peds) {
      contrib_ped.push_back(k);
      contrib_edge.push_back(idx);
    }
    ++idx;
  }
  ad::Tensor speeds_all =
      ad::sqrt(ad::sum_axis(ad::mul(velocities, velocities), 1));  // (M,1)
  ad::Tensor speed_sum = ad::segment_sum(
      ad::take_rows(speeds_all, contrib_ped), contrib_edge, e);
  g.speed = ad::mul(speed_sum, ad::Tensor::column(inv_count));
  g.gate =
      ad::segment_max(ad::take_rows(masks, contrib_ped), contrib_edge, e);
  return g;
}

struct FluxReport {
  ad::Tensor g_in;   // (N,1)
  ad::Tensor g_out;  // (N,1)
  ad::Tensor f_g;    // (N,1) = g_in - g_out
};

// Inflow gathers gated, weighted, speed-scaled source density over the
// observed transitions; outflow scales the predicted next-step density by
// the predicted outgoing transitions. Bias terms add per active edge,
// unscaled by density or speed.
inline FluxReport density_derivative(const DynamicGraph& graph_t,
                                     const DynamicGraph& graph_next,
                                     const ad::Tensor& rho_t,
                                     const ad::Tensor& rho_next_pred,
                                     const ad::Tensor& W, const ad::Tensor& B) {
  const std::size_t n = graph_t.cells;
  require(graph_next.cells == n, "density_derivative: grid size mismatch");
  require(rho_t.rows() == n && rho_t.cols() == 1 &&
              rho_next_pred.rows() == n && rho_next_pred.cols() == 1,
          "density_derivative: density shape mismatch");
  require(W.rows() == n && W.cols() == n && B.rows() == n && B.cols() == n,
          "density_derivative: weight shape mismatch");

  auto edge_flat = [n](const DynamicGraph& g) {
    std::vector<std::size_t> flat;
    flat.reserve(g.edge_count());
    for (std::size_t e = 0; e < g.edge_count(); ++e)
      flat.push_back(g.from[e] * n + g.to[e]);
    return flat;
  };

  FluxReport report;
  {
    const auto flat = edge_flat(graph_t);
    ad::Tensor wv = ad::take_flat(W, flat);
    ad::Tensor bv = ad::take_flat(B, flat);
    ad::Tensor rho_src = ad::take_rows(rho_t, graph_t.from);
    ad::Tensor term = ad::mul(ad::mul(graph_t.gate, wv),
                              ad::mul(graph_t.speed, rho_src));
    report.g_in = ad::add(ad::segment_sum(term, graph_t.to, n),
                          ad::segment_sum(bv, graph_t.to, n));
  }
  {
    const auto flat = edge_flat(graph_next);
    ad::Tensor wv = ad::take_flat(W, flat);
    ad::Tensor bv = ad::take_flat(B, flat);
    ad::Tensor coeff = ad::mul(ad::mul(graph_next.gate, wv), graph_next.speed);
    ad::Tensor out_coeff = ad::segment_sum(coeff, graph_next.from, n);
    report.g_out = ad::add(ad::mul(rho_next_pred, out_coeff),
                           ad::segment_sum(bv, graph_next.from, n));
  }
  report.f_g = ad::sub(report.g_in, report.g_out);
  return report;
}

inline nlohmann::json graph_to_json(const DynamicGraph& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    nlohmann::json entry;
    entry["from"] = g.from[e];
    entry["to"] = g.to[e];
    entry["speed"] = g.speed.at(e, 0);
    entry["gate"] = g.gate.at(e, 0);
    entry["contributors"] = g.contributors[e];
    edges.push_back(std::move(entry));
  }
  return edges;
}

}  // namespace crowdflow
