#pragma once

// Joint velocity+density training: per episode, teacher-forced predictor
// calls drive a per-frame flux graph whose Euler rollout supplies the
// density loss; velocities are supervised directly. One optimizer step per
// episode batch.

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "crowdflow/autodiff.hpp"
#include "crowdflow/core.hpp"
#include "crowdflow/data.hpp"
#include "crowdflow/density.hpp"
#include "crowdflow/dvcg.hpp"
#include "crowdflow/ode.hpp"
#include "crowdflow/predictor.hpp"

#include "json.hpp"

namespace crowdflow {

enum class Variant {
  kFull,
  kNoOde,
  kNoCgd,
  kNoNnLoss,
  kNoNe,
  kTrans,
  kRk4,
  kDiscrete
};

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoOde: return "no-ode";
    case Variant::kNoCgd: return "no-cgd";
    case Variant::kNoNnLoss: return "no-nnloss";
    case Variant::kNoNe: return "no-ne";
    case Variant::kTrans: return "trans";
    case Variant::kRk4: return "rk4";
    case Variant::kDiscrete: return "discrete";
  }
  return "full";
}

inline Variant variant_from_name(const std::string& s) {
  for (Variant v : {Variant::kFull, Variant::kNoOde, Variant::kNoCgd,
                    Variant::kNoNnLoss, Variant::kNoNe, Variant::kTrans,
                    Variant::kRk4, Variant::kDiscrete})
    if (s == variant_name(v)) return v;
  throw ConfigError("unknown variant '" + s + "'");
}

struct TrainConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t horizon = 10;  // tau
  std::size_t history = kDefaultHistory;
  double beta = 0.0;  // 0 -> 2 / cell area
  double alpha = 50.0;
  double tau_mask = 0.05;
  std::size_t grid_nx = 10;
  std::size_t grid_ny = 10;
  std::size_t node_embed_dim = 16;  // d
  std::uint64_t seed = 0;
  SolverMethod solver = SolverMethod::kEuler;
  Variant variant = Variant::kFull;
  bool absolute_loss = false;
  std::size_t batch_episodes = 1;
  double train_ratio = 0.8;
  PredictorConfig predictor;

  double lambda1_effective() const {
    return variant == Variant::kNoNnLoss ? 0.0 : lambda1;
  }
  double lambda2_effective() const {
    return variant == Variant::kNoOde ? 0.0 : lambda2;
  }
  SolverMethod solver_effective() const {
    if (variant == Variant::kRk4) return SolverMethod::kRk4;
    if (variant == Variant::kDiscrete) return SolverMethod::kDiscrete;
    return solver;
  }

  void validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0)
      throw ConfigError("lambda1 and lambda2 must be nonnegative");
    if (lambda1_effective() == 0.0 && lambda2_effective() == 0.0)
      throw ConfigError("lambda1 and lambda2 cannot both be zero");
    if (learning_rate < 0.0) throw ConfigError("learning rate must be >= 0");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (history < 1) throw ConfigError("history must be >= 1");
    if (grid_nx < 1 || grid_ny < 1) throw ConfigError("grid must be >= 1x1");
    if (batch_episodes < 1) throw ConfigError("batch_episodes must be >= 1");
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["lambda1"] = c.lambda1;
  j["lambda2"] = c.lambda2;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["horizon"] = c.horizon;
  j["history"] = c.history;
  j["beta"] = c.beta;
  j["alpha"] = c.alpha;
  j["tau_mask"] = c.tau_mask;
  j["grid_nx"] = c.grid_nx;
  j["grid_ny"] = c.grid_ny;
  j["node_embed_dim"] = c.node_embed_dim;
  j["seed"] = c.seed;
  j["solver"] = solver_name(c.solver);
  j["variant"] = variant_name(c.variant);
  j["absolute_loss"] = c.absolute_loss;
  j["batch_episodes"] = c.batch_episodes;
  j["train_ratio"] = c.train_ratio;
  j["rtol"] = 1e-4;  // solver tolerances, recorded for provenance only
  j["atol"] = 1e-3;
  nlohmann::json p;
  p["embed_dim"] = c.predictor.embed_dim;
  p["hidden"] = c.predictor.hidden;
  p["layers"] = c.predictor.layers;
  p["neighbor_radius"] = c.predictor.neighbor_radius;
  p["max_neighbors"] = c.predictor.max_neighbors;
  p["include_obstacles"] = c.predictor.include_obstacles;
  j["predictor"] = std::move(p);
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("lambda1", c.lambda1);
  get("lambda2", c.lambda2);
  get("learning_rate", c.learning_rate);
  get("epochs", c.epochs);
  get("horizon", c.horizon);
  get("history", c.history);
  get("beta", c.beta);
  get("alpha", c.alpha);
  get("tau_mask", c.tau_mask);
  get("grid_nx", c.grid_nx);
  get("grid_ny", c.grid_ny);
  get("node_embed_dim", c.node_embed_dim);
  get("seed", c.seed);
  if (j.contains("solver"))
    c.solver = solver_from_name(j.at("solver").get<std::string>());
  if (j.contains("variant"))
    c.variant = variant_from_name(j.at("variant").get<std::string>());
  get("absolute_loss", c.absolute_loss);
  get("batch_episodes", c.batch_episodes);
  get("train_ratio", c.train_ratio);
  if (j.contains("predictor")) {
    const auto& p = j.at("predictor");
    auto getp = [&](const char* key, auto& slot) {
      if (p.contains(key))
        slot = p.at(key).get<std::decay_t<decltype(slot)>>();
    };
    getp("embed_dim", c.predictor.embed_dim);
    getp("hidden", c.predictor.hidden);
    getp("layers", c.predictor.layers);
    getp("neighbor_radius", c.predictor.neighbor_radius);
    getp("max_neighbors", c.predictor.max_neighbors);
    getp("include_obstacles", c.predictor.include_obstacles);
  }
  c.predictor.history = c.history;
  return c;
}

// ---- optimizer ---------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

inline void optimizer_step(ad::ParameterStore& params, const ad::GradMap& grads,
                           AdamState& state, double lr) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (const auto& [name, grad] : grads) {
    ad::Tensor& p = params.at(name);
    require(grad.rows() == p.rows() && grad.cols() == p.cols(),
            "optimizer_step: gradient shape mismatch for '" + name + "'");
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(p.numel(), 0.0);
    if (v.empty()) v.assign(p.numel(), 0.0);
    const auto& g = grad.values();
    auto& pv = p.mut_values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      pv[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

// ---- joint loss ----------------------------------------------------------------

struct JointLoss {
  ad::Tensor total;  // scalar, on the tape when any input is
  double nn = 0.0;
  double ode = 0.0;
};

// l_NN: mean squared (or absolute) error over all velocity components and
// frames; l_ODE: same over all cells and frames; total = l1*l_NN + l2*l_ODE.
inline JointLoss joint_loss(const std::vector<ad::Tensor>& pred_velocities,
                            const std::vector<ad::Tensor>& gt_velocities,
                            const std::vector<ad::Tensor>& pred_densities,
                            const std::vector<ad::Tensor>& gt_densities,
                            double lambda1, double lambda2,
                            bool absolute = false) {
  require(pred_velocities.size() == gt_velocities.size(),
          "joint_loss: velocity sequence length mismatch");
  require(pred_densities.size() == gt_densities.size(),
          "joint_loss: density sequence length mismatch");
  auto accumulate = [&](const std::vector<ad::Tensor>& pred,
                        const std::vector<ad::Tensor>& gt) {
    ad::Tensor acc = ad::Tensor::scalar(0.0);
    std::size_t count = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
      ad::detail::check_same_shape("joint_loss", pred[k], gt[k]);
      ad::Tensor diff = ad::sub(pred[k], gt[k]);
      acc = ad::add(acc, absolute ? ad::sum(ad::abs(diff))
                                  : ad::squared_norm(diff));
      count += diff.numel();
    }
    if (count > 0) acc = ad::scale(acc, 1.0 / static_cast<double>(count));
    return acc;
  };
  JointLoss loss;
  ad::Tensor l_nn = accumulate(pred_velocities, gt_velocities);
  ad::Tensor l_ode = accumulate(pred_densities, gt_densities);
  loss.nn = l_nn.item();
  loss.ode = l_ode.item();
  loss.total = ad::add(ad::scale(l_nn, lambda1), ad::scale(l_ode, lambda2));
  if (!loss.total.all_finite())
    throw TrainError("joint_loss: non-finite loss");
  return loss;
}

// ---- trainer -------------------------------------------------------------------

struct LossReport {
  double l_nn = 0.0;
  double l_ode = 0.0;
  double l_joint = 0.0;
  double grad_norm = 0.0;
  std::size_t floor_events = 0;
};

struct Trainer {
  TrainConfig cfg;
  Scene scene;
  Grid grid;
  PredictorModel model;
  ad::ParameterStore store;
  AdamState adam;
  double beta = 0.0;
};

inline Trainer make_trainer(const Scene& scene, TrainConfig cfg) {
  cfg.predictor.history = cfg.history;
  cfg.validate();
  Trainer tr;
  tr.cfg = cfg;
  tr.scene = scene;
  tr.grid = Grid::make(scene.bounds, cfg.grid_nx, cfg.grid_ny);
  tr.beta = cfg.beta > 0.0 ? cfg.beta : tr.grid.default_beta();
  tr.model.cfg = cfg.predictor;
  std::mt19937_64 rng(cfg.seed);
  init_predictor(tr.store, cfg.predictor, rng);
  const std::size_t n = tr.grid.size();
  if (cfg.variant == Variant::kNoNe) {
    std::uniform_real_distribution<double> dist(-0.1, 0.1);
    ad::Tensor w(n, n), b(n, n);
    for (auto& v : w.mut_values()) v = dist(rng);
    for (auto& v : b.mut_values()) v = 0.0;
    tr.store.add("flux.W", std::move(w));
    tr.store.add("flux.B", std::move(b));
  } else {
    const double d = static_cast<double>(cfg.node_embed_dim);
    std::uniform_real_distribution<double> wd(-0.5 / std::sqrt(d),
                                              0.5 / std::sqrt(d));
    std::uniform_real_distribution<double> bd(-0.05, 0.05);
    ad::Tensor w(n, cfg.node_embed_dim), b(n, cfg.node_embed_dim);
    for (auto& v : w.mut_values()) v = wd(rng);
    for (auto& v : b.mut_values()) v = bd(rng);
    tr.store.add("node_embed.w", std::move(w));
    tr.store.add("node_embed.b", std::move(b));
  }
  if (cfg.variant == Variant::kTrans) {
    std::uniform_real_distribution<double> ld(-3.0, -1.0);
    ad::Tensor logits(n, n);
    for (auto& v : logits.mut_values()) v = ld(rng);
    tr.store.add("flux.logits", std::move(logits));
  }
  return tr;
}

namespace detail {

// Active-only view of one episode frame, ordered by id.
inline CrowdState active_substate(const Episode& ep, std::size_t f) {
  CrowdState out;
  out.time_index = ep.frames[f].time_index;
  out.dt = ep.frames[f].dt;
  for (int id : ep.active_ids[f])
    for (const auto& ped : ep.frames[f].pedestrians)
      if (ped.id == id) {
        out.pedestrians.push_back(ped);
        break;
      }
  return out;
}

inline ad::Tensor positions_tensor(const CrowdState& s) {
  ad::Tensor t(s.size(), 2);
  for (std::size_t i = 0; i < s.size(); ++i) {
    t.mut(i, 0) = s.pedestrians[i].position.x;
    t.mut(i, 1) = s.pedestrians[i].position.y;
  }
  return t;
}

inline ad::Tensor velocities_tensor(const CrowdState& s) {
  ad::Tensor t(s.size(), 2);
  for (std::size_t i = 0; i < s.size(); ++i) {
    t.mut(i, 0) = s.pedestrians[i].velocity.x;
    t.mut(i, 1) = s.pedestrians[i].velocity.y;
  }
  return t;
}

inline std::vector<Vec2> positions_vec(const CrowdState& s) {
  std::vector<Vec2> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s.pedestrians[i].position;
  return out;
}

inline std::vector<Vec2> tensor_to_vecs(const ad::Tensor& t) {
  std::vector<Vec2> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) out[i] = {t.at(i, 0), t.at(i, 1)};
  return out;
}

// Everything one frame of the flux provider needs, built once per frame so
// fractional RK4 stages reuse the frame-t graphs.
struct FrameFlux {
  bool built = false;
  DynamicGraph graph_t;
  DynamicGraph graph_next;
  ad::Tensor rho_next_pred;  // (N,1), teacher-forced
};

}  // namespace detail

struct EpisodeRun {
  double nn = 0.0;
  double ode = 0.0;
  double joint = 0.0;
  std::size_t floor_events = 0;
  ad::GradMap grads;
};

// Loss and parameter gradients of one teacher-forced episode; pure in the
// trainer's parameter store.
inline EpisodeRun run_episode(Trainer& tr, const Episode& ep,
                              std::size_t episode_index = 0) {
  using detail::FrameFlux;
  using detail::active_substate;
  using detail::positions_tensor;
  using detail::positions_vec;
  using detail::tensor_to_vecs;
  using detail::velocities_tensor;
  const TrainConfig& cfg = tr.cfg;
  const std::size_t h = ep.history;
  const std::size_t tau = ep.horizon;
  require(ep.frames.size() == h + tau,
          "train_epoch: episode length does not match h + tau");

  ad::Tape tape;
  ad::ParamMap P = ad::watch_params(tape, tr.store);

  // Flux weight matrices, rebuilt from the live embeddings each episode.
  ad::Tensor W, B;
  if (cfg.variant == Variant::kNoNe) {
    W = P.at("flux.W");
    B = P.at("flux.B");
  } else {
    NodeEmbedding emb{P.at("node_embed.w"), P.at("node_embed.b")};
    auto wb = expand_weights(emb);
    W = wb.first;
    B = wb.second;
  }
  // Static soft adjacency pieces for the trans variant.
  ad::Tensor trans_in_mat, trans_in_bias, trans_out_coef, trans_out_bias;
  const bool trans = cfg.variant == Variant::kTrans;
  if (trans) {
    ad::Tensor S = ad::sigmoid(P.at("flux.logits"));
    ad::Tensor sw = ad::mul(S, W);
    ad::Tensor sb = ad::mul(S, B);
    trans_in_mat = ad::transpose(sw);
    trans_in_bias = ad::transpose(ad::sum_axis(sb, 0));
    trans_out_coef = ad::sum_axis(sw, 1);
    trans_out_bias = ad::sum_axis(sb, 1);
  }

  // Ground-truth constants per frame (never on the tape).
  std::vector<CrowdState> gt(h + tau);
  std::vector<ad::Tensor> gt_pos(h + tau), gt_vel(h + tau);
  for (std::size_t f = 0; f < h + tau; ++f) {
    gt[f] = active_substate(ep, f);
    gt_pos[f] = positions_tensor(gt[f]);
    gt_vel[f] = velocities_tensor(gt[f]);
  }
  const std::size_t m = gt[0].size();
  require(m > 0, "train_epoch: episode has no active pedestrians");

  std::vector<ad::Tensor> pred_vel(tau), gt_vel_next(tau);
  std::vector<FrameFlux> flux(tau);
  ad::Tensor ones_mask = ad::Tensor::full(m, 1, 1.0);

  auto build_frame = [&](std::size_t t) -> FrameFlux& {
    FrameFlux& fx = flux[t];
    if (fx.built) return fx;
    const std::size_t e = h - 1 + t;
    // one predictor call per frame (Algorithm line: predict p^{t+1})
    ad::Tensor a_hat = predict_next(P, tr.model, gt[e], ep.scene);
    ad::Tensor v_hat = ad::add(gt_vel[e], ad::scale(a_hat, gt[e].dt));
    pred_vel[t] = v_hat;
    gt_vel_next[t] = gt_vel[e + 1];
    if (cfg.lambda2_effective() > 0.0) {
      // predicted next positions: base + predicted velocity
      ad::Tensor p_hat_next =
          ad::add(gt_pos[e], ad::scale(gt_vel[e], gt[e].dt));  // constant
      ad::Tensor p_hat_next2 =
          ad::add(gt_pos[e + 1], ad::scale(v_hat, gt[e].dt));  // on tape
      fx.rho_next_pred = density_from_positions(tr.grid, p_hat_next, tr.beta);
      if (!trans) {
        // observed t-side transitions with ground-truth gates
        ad::Tensor mask_t = ones_mask;
        ad::Tensor mask_next = ones_mask;
        if (cfg.variant != Variant::kNoCgd) {
          ad::Tensor q_e = soft_assign_matrix(tr.grid, gt_pos[e], tr.beta);
          ad::Tensor q_e1 = soft_assign_matrix(tr.grid, gt_pos[e + 1], tr.beta);
          ad::Tensor q_pred = soft_assign_matrix(tr.grid, p_hat_next2, tr.beta);
          mask_t = cross_grid_mask(js_rows(q_e, q_e1), cfg.alpha, cfg.tau_mask);
          mask_next =
              cross_grid_mask(js_rows(q_e1, q_pred), cfg.alpha, cfg.tau_mask);
        }
        fx.graph_t = build_dynamic_graph(tr.grid, positions_vec(gt[e]),
                                         positions_vec(gt[e + 1]), gt_vel[e],
                                         mask_t);
        fx.graph_next = build_dynamic_graph(tr.grid, positions_vec(gt[e + 1]),
                                            tensor_to_vecs(p_hat_next2), v_hat,
                                            mask_next);
      }
    }
    fx.built = true;
    return fx;
  };

  std::vector<ad::Tensor> rho_pred, rho_gt;
  std::size_t floor_events = 0;
  if (cfg.lambda2_effective() > 0.0) {
    ad::Tensor rho0 =
        density_from_positions(tr.grid, gt_pos[h - 1], tr.beta);
    auto provider = [&](std::size_t t, const ad::Tensor& rho) -> ad::Tensor {
      FrameFlux& fx = build_frame(t);
      if (trans) {
        ad::Tensor g_in =
            ad::add(ad::matmul(trans_in_mat, rho), trans_in_bias);
        ad::Tensor g_out = ad::add(ad::mul(fx.rho_next_pred, trans_out_coef),
                                   trans_out_bias);
        return ad::sub(g_in, g_out);
      }
      return density_derivative(fx.graph_t, fx.graph_next, rho,
                                fx.rho_next_pred, W, B)
          .f_g;
    };
    SolverConfig scfg;
    scfg.method = cfg.solver_effective();
    scfg.horizon = tau;
    RolloutResult ro = rollout_density(rho0, provider, scfg);
    floor_events = ro.floor_events;
    rho_pred = std::move(ro.densities);
    rho_gt.reserve(tau);
    for (std::size_t t = 0; t < tau; ++t)
      rho_gt.push_back(
          density_from_positions(tr.grid, gt_pos[h + t], tr.beta));
  } else {
    for (std::size_t t = 0; t < tau; ++t) build_frame(t);
  }

  JointLoss loss;
  try {
    loss = joint_loss(pred_vel, gt_vel_next, rho_pred, rho_gt,
                      cfg.lambda1_effective(), cfg.lambda2_effective(),
                      cfg.absolute_loss);
  } catch (const TrainError& e) {
    throw TrainError("episode " + std::to_string(episode_index) + ": " +
                     e.what());
  }

  EpisodeRun run;
  run.nn = loss.nn;
  run.ode = loss.ode;
  run.joint = loss.total.item();
  run.floor_events = floor_events;
  tape.backward_from(loss.total);
  run.grads = ad::param_gradients(tape, P);
  return run;
}

// One pass over the episodes; one optimizer step per batch of
// cfg.batch_episodes episodes (gradients averaged across the batch).
inline LossReport train_epoch(Trainer& tr, const std::vector<Episode>& episodes) {
  tr.cfg.validate();
  require(!episodes.empty(), "train_epoch: no episodes");
  LossReport report;
  double nn_sum = 0.0, ode_sum = 0.0, grad_norm_sq = 0.0;
  ad::GradMap batch;
  std::size_t in_batch = 0;
  auto flush = [&]() {
    if (in_batch == 0) return;
    if (in_batch > 1)
      for (auto& [name, g] : batch)
        for (auto& v : g.mut_values()) v /= static_cast<double>(in_batch);
    for (const auto& [name, g] : batch)
      for (double v : g.values()) grad_norm_sq += v * v;
    optimizer_step(tr.store, batch, tr.adam, tr.cfg.learning_rate);
    batch.clear();
    in_batch = 0;
  };
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    EpisodeRun run = run_episode(tr, episodes[i], i);
    nn_sum += run.nn;
    ode_sum += run.ode;
    report.floor_events += run.floor_events;
    if (batch.empty())
      batch = std::move(run.grads);
    else
      for (auto& [name, g] : batch) {
        const auto& src = run.grads.at(name).values();
        auto& dst = g.mut_values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    ++in_batch;
    if (in_batch == tr.cfg.batch_episodes) flush();
  }
  flush();
  const double n = static_cast<double>(episodes.size());
  report.l_nn = nn_sum / n;
  report.l_ode = ode_sum / n;
  report.l_joint = tr.cfg.lambda1_effective() * report.l_nn +
                   tr.cfg.lambda2_effective() * report.l_ode;
  report.grad_norm = std::sqrt(grad_norm_sq);
  return report;
}

inline std::vector<LossReport> train(Trainer& tr,
                                     const std::vector<Episode>& episodes) {
  std::vector<LossReport> reports;
  reports.reserve(tr.cfg.epochs);
  for (std::size_t e = 0; e < tr.cfg.epochs; ++e)
    reports.push_back(train_epoch(tr, episodes));
  return reports;
}

inline void write_training_log(std::ostream& os,
                               const std::vector<LossReport>& reports) {
  os << "epoch,l_nn,l_ode,l_joint\n";
  for (std::size_t e = 0; e < reports.size(); ++e)
    os << (e + 1) << ',' << format_double(reports[e].l_nn) << ','
       << format_double(reports[e].l_ode) << ','
       << format_double(reports[e].l_joint) << '\n';
}

// ---- checkpoints -----------------------------------------------------------

inline nlohmann::json checkpoint_to_json(const ad::ParameterStore& store,
                                         const TrainConfig& cfg) {
  nlohmann::json doc;
  doc["format"] = "crowdflow-checkpoint-v1";
  doc["config"] = train_config_to_json(cfg);
  doc["params"] = store.to_json();
  return doc;
}

inline std::pair<ad::ParameterStore, TrainConfig> checkpoint_from_json(
    const nlohmann::json& doc) {
  return {ad::ParameterStore::from_json(doc.at("params")),
          train_config_from_json(doc.at("config"))};
}

inline void save_checkpoint(const std::string& path,
                            const ad::ParameterStore& store,
                            const TrainConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << checkpoint_to_json(store, cfg).dump(2) << '\n';
}

inline std::pair<ad::ParameterStore, TrainConfig> load_checkpoint(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open checkpoint '" + path + "'");
  nlohmann::json doc;
  f >> doc;
  return checkpoint_from_json(doc);
}

}  // namespace crowdflow
