// crowdflow command-line interface: synthetic scenario generation,
// resampling, training, simulation, evaluation and benchmarking.

#include <chrono>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "crowdflow/crowdflow.hpp"

namespace cf = crowdflow;
using nlohmann::json;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_json_file(const std::string& path, const json& doc) {
  std::ofstream f(path);
  if (!f) throw cf::DataError("cannot open '" + path + "' for writing");
  f << doc.dump(2) << '\n';
}

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw cf::DataError("cannot open '" + path + "'");
  json doc;
  f >> doc;
  return doc;
}

int run_synth(const std::string& spec_path, const std::string& scenario,
              std::size_t peds, std::size_t frames, double noise, double speed,
              double speed_jitter, std::uint64_t seed, double dt,
              const std::string& out, std::string scene_out) {
  cf::ScenarioSpec spec;
  if (!spec_path.empty()) {
    spec = cf::scenario_spec_from_json(read_json_file(spec_path));
  } else {
    spec.kind = cf::scenario_from_name(scenario);
    spec.pedestrians = peds;
    spec.duration = frames;
    spec.noise_std = noise;
    spec.speed = speed;
    spec.speed_jitter = speed_jitter;
    spec.seed = seed;
    spec.dt = dt;
  }
  auto [traj, scene] = cf::synth_scenario(spec);
  json echo = cf::scenario_spec_to_json(spec);
  echo["command"] = "synth";
  cf::write_trajectory_file(out, traj, {"config " + echo.dump()});
  if (scene_out.empty()) scene_out = out + ".scene.json";
  json scene_doc = cf::scene_to_json(scene);
  scene_doc["config"] = echo;
  write_json_file(scene_out, scene_doc);
  std::cout << "wrote " << out << " (" << traj.trajectories.size()
            << " pedestrians, " << spec.duration << " frames) and "
            << scene_out << "\n";
  return 0;
}

int run_preprocess(const std::string& in, double source_dt, double target_dt,
                   const std::string& out) {
  cf::TrajectorySet traj = cf::parse_trajectory_file(in, source_dt);
  std::vector<std::string> warnings;
  cf::TrajectorySet resampled = cf::resample_cubic(traj, target_dt, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  json echo;
  echo["command"] = "preprocess";
  echo["in"] = in;
  echo["source_dt"] = source_dt;
  echo["target_dt"] = target_dt;
  cf::write_trajectory_file(out, resampled, {"config " + echo.dump()});
  std::cout << "wrote " << out << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_path,
              const std::string& scene_path, const std::string& out,
              std::string log_path) {
  cf::TrainConfig cfg;
  if (!config_path.empty())
    cfg = cf::train_config_from_json(read_json_file(config_path));
  cf::Scene scene = cf::load_scene(scene_path);
  cf::TrajectorySet traj = cf::parse_trajectory_file(data_path);
  std::vector<std::string> warnings;
  auto episodes =
      cf::make_episodes(traj, scene, cfg.history, cfg.horizon, 0, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  if (episodes.empty()) throw cf::DataError("no usable episodes in " + data_path);
  auto [train_eps, test_eps] = cf::split(episodes, cfg.train_ratio);
  if (train_eps.empty()) train_eps = episodes;  // tiny inputs train on all
  cf::Trainer trainer = cf::make_trainer(scene, cfg);
  std::cout << "training variant=" << cf::variant_name(cfg.variant) << " on "
            << train_eps.size() << " episodes (" << test_eps.size()
            << " held out), " << cfg.epochs << " epochs\n";
  auto reports = cf::train(trainer, train_eps);
  cf::save_checkpoint(out, trainer.store, trainer.cfg);
  if (log_path.empty()) log_path = out + ".log.csv";
  std::ofstream log(log_path);
  cf::write_training_log(log, reports);
  if (!reports.empty())
    std::cout << "final l_joint=" << cf::format_double(reports.back().l_joint)
              << " (l_nn=" << cf::format_double(reports.back().l_nn)
              << ", l_ode=" << cf::format_double(reports.back().l_ode)
              << ")\n";
  std::cout << "wrote " << out << " and " << log_path << "\n";
  return 0;
}

int run_simulate(const std::string& model_path, const std::string& kind,
                 const std::string& init_path, const std::string& scene_path,
                 std::size_t horizon, const std::string& out) {
  cf::Scene scene = cf::load_scene(scene_path);
  cf::TrajectorySet init_traj = cf::parse_trajectory_file(init_path);
  cf::AccelFn accel;
  std::size_t history = cf::kDefaultHistory;
  json echo;
  echo["command"] = "simulate";
  echo["model_kind"] = kind;
  echo["init"] = init_path;
  echo["horizon"] = horizon;
  if (kind == "stddn") {
    if (model_path.empty())
      throw cf::ConfigError("simulate: --model required for stddn");
    auto [store, cfg] = cf::load_checkpoint(model_path);
    history = cfg.history;
    cf::PredictorModel model;
    model.cfg = cfg.predictor;
    auto shared = std::make_shared<cf::ad::ParameterStore>(std::move(store));
    accel = [shared, model](const cf::CrowdState& s, const cf::Scene& sc) {
      return cf::predict_next_vec(cf::ad::plain_params(*shared), model, s, sc);
    };
    echo["model"] = model_path;
  } else if (kind == "sfm") {
    accel = cf::sfm_accel_fn();
  } else if (kind == "zero") {
    accel = cf::zero_accel_fn();
  } else {
    throw cf::ConfigError("unknown model kind '" + kind + "'");
  }
  cf::CrowdState initial = cf::initial_state_from(init_traj, history);
  cf::RolloutOptions opts;
  opts.horizon = horizon;
  opts.history = history;
  cf::TrajectorySet rollout =
      cf::autoregressive_rollout(accel, initial, scene, opts);
  cf::write_trajectory_file(out, rollout, {"config " + echo.dump()});
  std::cout << "wrote " << out << " (" << rollout.trajectories.size()
            << " pedestrians)\n";
  return 0;
}

int run_evaluate(const std::string& pred_path, const std::string& gt_path,
                 const std::string& metric_list, const std::string& out,
                 const std::string& curve_path) {
  cf::TrajectorySet pred = cf::parse_trajectory_file(pred_path);
  cf::TrajectorySet gt = cf::parse_trajectory_file(gt_path);
  auto names = split_list(metric_list);
  cf::MetricReport report = cf::evaluate_metrics(pred, gt, names);
  report.config_echo["pred"] = pred_path;
  report.config_echo["gt"] = gt_path;
  std::cout << report.to_table();
  if (!out.empty()) write_json_file(out, report.to_json());
  if (!curve_path.empty()) {
    auto mae_curve =
        cf::accumulated_error_curve(pred, gt, cf::CurveMetric::kMae);
    auto ot_curve = cf::accumulated_error_curve(pred, gt, cf::CurveMetric::kOt);
    std::ofstream f(curve_path);
    if (!f) throw cf::DataError("cannot open '" + curve_path + "'");
    cf::write_error_curve_csv(f, mae_curve, ot_curve);
    std::cout << "wrote " << curve_path << "\n";
  }
  return 0;
}

// Multiply-add count of one predictor forward pass, doubled into flops.
double flops_per_frame(const cf::PredictorConfig& cfg, std::size_t nodes,
                       std::size_t edges) {
  const double f = static_cast<double>(cfg.feature_dim());
  const double h = static_cast<double>(cfg.hidden);
  const double e = static_cast<double>(cfg.embed_dim);
  const double n = static_cast<double>(nodes);
  const double E = static_cast<double>(edges);
  double macs = n * (f * h + h * e);  // encoder
  const double phi_e = (2.0 * e + 1.0) * h + h * e;
  const double phi_p = e * h + h;
  const double phi_h = 2.0 * e * h + h * e;
  const double phi_a = e * h + h;
  macs += static_cast<double>(cfg.layers) *
          (E * (phi_e + phi_p) + n * (phi_h + phi_a));
  return 2.0 * macs;
}

int run_bench(const std::string& model_path, std::size_t peds,
              std::size_t frames) {
  auto [store, cfg] = cf::load_checkpoint(model_path);
  cf::PredictorModel model;
  model.cfg = cfg.predictor;
  auto params = cf::ad::plain_params(store);
  // synthetic benchmark state
  std::mt19937_64 rng(12345);
  std::uniform_real_distribution<double> up(0.0, 20.0);
  std::uniform_real_distribution<double> uv(-1.5, 1.5);
  cf::CrowdState state;
  for (std::size_t i = 0; i < peds; ++i) {
    cf::PedestrianState ped;
    ped.id = static_cast<int>(i + 1);
    ped.position = {up(rng), up(rng)};
    ped.velocity = {uv(rng), uv(rng)};
    ped.destination = {up(rng), up(rng)};
    ped.history = {{ped.position, ped.velocity, ped.acceleration}};
    state.pedestrians.push_back(ped);
  }
  cf::Scene scene(cf::Rect{-10, -10, 30, 30}, {});
  // warmup
  for (int k = 0; k < 3; ++k) cf::predict_next_vec(params, model, state, scene);
  std::vector<double> latencies_ms;
  latencies_ms.reserve(frames);
  auto bench_state = state;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t f = 0; f < frames; ++f) {
    const auto s0 = std::chrono::steady_clock::now();
    auto accel = cf::predict_next_vec(params, model, bench_state, scene);
    const auto s1 = std::chrono::steady_clock::now();
    latencies_ms.push_back(
        std::chrono::duration<double, std::milli>(s1 - s0).count());
    bench_state = cf::integrate_step(bench_state, accel, cfg.history);
  }
  const auto t1 = std::chrono::steady_clock::now();
  const double total_s = std::chrono::duration<double>(t1 - t0).count();
  std::sort(latencies_ms.begin(), latencies_ms.end());
  auto pct = [&](double q) {
    return latencies_ms[static_cast<std::size_t>(
        q * static_cast<double>(latencies_ms.size() - 1))];
  };
  double mean = 0.0;
  for (double v : latencies_ms) mean += v;
  mean /= static_cast<double>(latencies_ms.size());
  // edge count of the benchmark state for the analytic flop estimate
  auto graph = cf::build_neighbor_graph(state, model.cfg.neighbor_radius,
                                        model.cfg.max_neighbors);
  std::size_t edges = 0;
  for (const auto& nb : graph.neighbors) edges += nb.size();
  json doc;
  doc["parameters"] = store.scalar_count();
  doc["pedestrians"] = peds;
  doc["frames"] = frames;
  doc["latency_ms"] = {{"mean", mean},
                       {"p50", pct(0.5)},
                       {"p95", pct(0.95)},
                       {"min", latencies_ms.front()},
                       {"max", latencies_ms.back()}};
  doc["fps"] = static_cast<double>(frames) / total_s;
  doc["gflops_per_frame"] =
      flops_per_frame(model.cfg, peds, edges) * 1e-9;
  std::cout << doc.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crowd simulation engine: continuity-constrained trajectory "
               "prediction, training and evaluation"};
  app.require_subcommand(1);

  // synth
  std::string spec_path, scenario = "corridor", out, scene_out;
  std::size_t peds = 2, frames = 100;
  double noise = 0.0, speed = 1.2, speed_jitter = 0.0, dt = cf::kDefaultDt;
  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "generate a synthetic scenario");
  synth->add_option("--spec", spec_path,
                    "scenario spec JSON (overrides the flags below)");
  synth->add_option("--scenario", scenario, "corridor|crossing|circle");
  synth->add_option("--peds", peds, "pedestrian count");
  synth->add_option("--frames", frames, "duration in frames");
  synth->add_option("--noise", noise, "position noise std (m)");
  synth->add_option("--speed", speed, "cruise speed (m/s)");
  synth->add_option("--speed-jitter", speed_jitter,
                    "relative per-pedestrian speed spread");
  synth->add_option("--seed", seed, "random seed");
  synth->add_option("--dt", dt, "frame interval (s)");
  synth->add_option("--out", out, "trajectory output file")->required();
  synth->add_option("--scene-out", scene_out,
                    "scene JSON output (default: OUT.scene.json)");

  // preprocess
  std::string pre_in, pre_out;
  double source_dt = 0.4, target_dt = cf::kDefaultDt;
  auto* pre = app.add_subcommand("preprocess",
                                 "cubic-resample a trajectory file");
  pre->add_option("--in", pre_in, "input trajectory file")->required();
  pre->add_option("--source-dt", source_dt, "input frame interval (s)");
  pre->add_option("--target-dt", target_dt, "output frame interval (s)");
  pre->add_option("--out", pre_out, "output trajectory file")->required();

  // train
  std::string cfg_path, data_path, scene_path, model_out, log_path;
  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", cfg_path, "train config JSON");
  tr->add_option("--data", data_path, "trajectory file")->required();
  tr->add_option("--scene", scene_path, "scene JSON")->required();
  tr->add_option("--out", model_out, "checkpoint output")->required();
  tr->add_option("--log", log_path, "training log CSV (default: OUT.log.csv)");

  // simulate
  std::string sim_model, sim_kind = "stddn", sim_init, sim_scene, sim_out;
  std::size_t horizon = 100;
  auto* sim = app.add_subcommand("simulate", "autoregressive rollout");
  sim->add_option("--model", sim_model, "checkpoint JSON");
  sim->add_option("--model-kind", sim_kind, "stddn|sfm|zero");
  sim->add_option("--init", sim_init, "reference trajectory file")->required();
  sim->add_option("--scene", sim_scene, "scene JSON")->required();
  sim->add_option("--horizon", horizon, "rollout steps");
  sim->add_option("--out", sim_out, "trajectory output")->required();

  // evaluate
  std::string ev_pred, ev_gt, ev_metrics = "mae,fde,ot,mmd,dtw,colli,dea";
  std::string ev_out, ev_curve;
  auto* ev = app.add_subcommand("evaluate", "trajectory metric report");
  ev->add_option("--pred", ev_pred, "predicted trajectories")->required();
  ev->add_option("--gt", ev_gt, "ground-truth trajectories")->required();
  ev->add_option("--metrics", ev_metrics, "comma-separated metric names");
  ev->add_option("--out", ev_out, "report JSON output");
  ev->add_option("--curve", ev_curve, "accumulated-error CSV output");

  // bench
  std::string bench_model;
  std::size_t bench_peds = 20, bench_frames = 100;
  auto* be = app.add_subcommand("bench", "latency / throughput benchmark");
  be->add_option("--model", bench_model, "checkpoint JSON")->required();
  be->add_option("--peds", bench_peds, "pedestrian count");
  be->add_option("--frames", bench_frames, "frames to simulate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth)
      return run_synth(spec_path, scenario, peds, frames, noise, speed,
                       speed_jitter, seed, dt, out, scene_out);
    if (*pre) return run_preprocess(pre_in, source_dt, target_dt, pre_out);
    if (*tr) return run_train(cfg_path, data_path, scene_path, model_out,
                              log_path);
    if (*sim)
      return run_simulate(sim_model, sim_kind, sim_init, sim_scene, horizon,
                          sim_out);
    if (*ev) return run_evaluate(ev_pred, ev_gt, ev_metrics, ev_out, ev_curve);
    if (*be) return run_bench(bench_model, bench_peds, bench_frames);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
