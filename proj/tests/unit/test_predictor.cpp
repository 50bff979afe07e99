#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "crowdflow/predictor.hpp"

using namespace crowdflow;
using ad::Tensor;

namespace {

Vec2 rotate(Vec2 v, double c, double s) {
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

Vec2 translate(Vec2 v, Vec2 t) { return v + t; }

CrowdState random_state(std::size_t m, std::mt19937_64& rng,
                        std::size_t history = 4) {
  std::uniform_real_distribution<double> up(0.0, 10.0);
  std::uniform_real_distribution<double> uv(-1.5, 1.5);
  CrowdState s;
  for (std::size_t i = 0; i < m; ++i) {
    PedestrianState ped;
    ped.id = static_cast<int>(i + 1);
    ped.position = {up(rng), up(rng)};
    ped.velocity = {uv(rng), uv(rng)};
    ped.acceleration = {uv(rng), uv(rng)};
    ped.destination = {up(rng), up(rng)};
    Vec2 p = ped.position;
    std::vector<HistFrame> hist;
    for (std::size_t k = 0; k < history; ++k) {
      hist.insert(hist.begin(), {p, Vec2{uv(rng), uv(rng)},
                                 Vec2{uv(rng), uv(rng)}});
      p = p - Vec2{0.1 * uv(rng), 0.1 * uv(rng)};
    }
    ped.history = hist;
    s.pedestrians.push_back(std::move(ped));
  }
  return s;
}

CrowdState transform_state(const CrowdState& s, double angle, Vec2 shift) {
  const double c = std::cos(angle), sn = std::sin(angle);
  CrowdState out = s;
  for (auto& ped : out.pedestrians) {
    ped.position = translate(rotate(ped.position, c, sn), shift);
    ped.velocity = rotate(ped.velocity, c, sn);
    ped.acceleration = rotate(ped.acceleration, c, sn);
    ped.destination = translate(rotate(ped.destination, c, sn), shift);
    for (auto& h : ped.history) {
      h.position = translate(rotate(h.position, c, sn), shift);
      h.velocity = rotate(h.velocity, c, sn);
      h.acceleration = rotate(h.acceleration, c, sn);
    }
  }
  return out;
}

Scene transform_scene(const Scene& scene, double angle, Vec2 shift) {
  // bounds grow to hold the rotated obstacles; only obstacle geometry
  // matters to the predictor
  std::vector<Vec2> obs;
  const double c = std::cos(angle), sn = std::sin(angle);
  double lo_x = -100, lo_y = -100, hi_x = 100, hi_y = 100;
  for (const auto& o : scene.obstacles)
    obs.push_back(translate(rotate(o, c, sn), shift));
  return Scene(Rect{lo_x, lo_y, hi_x, hi_y}, obs);
}

PredictorModel small_model(std::size_t h = 4) {
  PredictorModel model;
  model.cfg.history = h;
  model.cfg.embed_dim = 16;
  model.cfg.hidden = 16;
  model.cfg.layers = 2;
  return model;
}

}  // namespace

TEST_CASE("neighbor graph basics") {
  SECTION("two pedestrians a meter apart are mutual neighbors") {
    CrowdState s;
    for (int i = 0; i < 2; ++i) {
      PedestrianState p;
      p.id = i + 1;
      p.position = {static_cast<double>(i), 0.0};
      s.pedestrians.push_back(p);
    }
    auto g = build_neighbor_graph(s, 4.0, 8);
    REQUIRE(g.neighbors[0].size() == 1);
    REQUIRE(g.neighbors[1].size() == 1);
    CHECK(g.neighbors[0][0] == 1);
    CHECK(g.neighbors[1][0] == 0);
  }
  SECTION("isolated pedestrian has no neighbors") {
    CrowdState s;
    PedestrianState a, b;
    a.id = 1;
    a.position = {0, 0};
    b.id = 2;
    b.position = {100, 100};
    s.pedestrians = {a, b};
    auto g = build_neighbor_graph(s, 4.0, 8);
    CHECK(g.neighbors[0].empty());
    CHECK(g.neighbors[1].empty());
  }
  SECTION("line of 20 pedestrians against the brute-force oracle") {
    CrowdState s;
    for (int i = 0; i < 20; ++i) {
      PedestrianState p;
      p.id = i + 1;
      p.position = {static_cast<double>(i), 0.0};
      s.pedestrians.push_back(p);
    }
    auto g = build_neighbor_graph(s, 4.0, 4);
    // brute force: all within radius, sorted by (distance, id), first 4
    for (std::size_t i = 0; i < 20; ++i) {
      std::vector<std::pair<double, std::size_t>> cand;
      for (std::size_t j = 0; j < 20; ++j)
        if (j != i) {
          const double d =
              distance(s.pedestrians[i].position, s.pedestrians[j].position);
          if (d <= 4.0) cand.emplace_back(d, j);
        }
      std::sort(cand.begin(), cand.end());
      cand.resize(std::min<std::size_t>(cand.size(), 4));
      REQUIRE(g.neighbors[i].size() == cand.size());
      for (std::size_t k = 0; k < cand.size(); ++k)
        CHECK(g.neighbors[i][k] == cand[k].second);
    }
    // interior node keeps its 4 nearest, two on each side
    const auto& inner = g.neighbors[10];
    REQUIRE(inner.size() == 4);
    CHECK(std::count(inner.begin(), inner.end(), 9u) == 1);
    CHECK(std::count(inner.begin(), inner.end(), 11u) == 1);
    CHECK(std::count(inner.begin(), inner.end(), 8u) == 1);
    CHECK(std::count(inner.begin(), inner.end(), 12u) == 1);
  }
}

TEST_CASE("egcl layer with no neighbors and zeroed gate is the identity") {
  std::mt19937_64 rng(3);
  ad::ParameterStore store;
  init_mlp(store, "egcl0.phi_e", 2 * 8 + 1, 8, 8, rng);
  init_mlp(store, "egcl0.phi_p", 8, 8, 1, rng);
  init_mlp(store, "egcl0.phi_h", 2 * 8, 8, 8, rng);
  init_mlp(store, "egcl0.phi_a", 8, 8, 1, rng, /*zero_output=*/true);
  auto params = ad::plain_params(store);
  Tensor h(1, 8), p(1, 2), v(1, 2), dirs(1, 2);
  for (auto& x : h.mut_values()) x = 0.3;
  p.mut(0, 0) = 1.0;
  v.mut(0, 1) = -0.5;
  dirs.mut(0, 0) = 1.0;
  EdgeList edges;  // empty
  auto out = egcl_forward(params, "egcl0", h, p, v, edges, dirs,
                          Tensor::full(1, 1, 1.0), 0);
  CHECK(out.a.at(0, 0) == 0.0);
  CHECK(out.a.at(0, 1) == 0.0);
  CHECK(out.v.at(0, 0) == v.at(0, 0));
  CHECK(out.v.at(0, 1) == v.at(0, 1));
  CHECK(out.p.at(0, 0) == Catch::Approx(1.0));
  CHECK(out.p.at(0, 1) == Catch::Approx(-0.5));
}

TEST_CASE("egcl layer is rotation equivariant with invariant h-stream") {
  std::mt19937_64 rng(17);
  const std::size_t emb = 8, n = 5;
  ad::ParameterStore store;
  init_mlp(store, "L.phi_e", 2 * emb + 1, 12, emb, rng);
  init_mlp(store, "L.phi_p", emb, 12, 1, rng);
  init_mlp(store, "L.phi_h", 2 * emb, 12, emb, rng);
  init_mlp(store, "L.phi_a", emb, 12, 1, rng);
  auto params = ad::plain_params(store);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Tensor h(n, emb), p(n, 2), v(n, 2), dirs(n, 2);
  for (auto& x : h.mut_values()) x = u(rng);
  for (auto& x : p.mut_values()) x = u(rng);
  for (auto& x : v.mut_values()) x = u(rng);
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 d = Vec2{u(rng), u(rng)}.unit();
    dirs.mut(i, 0) = d.x;
    dirs.mut(i, 1) = d.y;
  }
  EdgeList edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        edges.receiver.push_back(i);
        edges.sender.push_back(j);
      }
  Tensor mobile = Tensor::full(n, 1, 1.0);
  auto base = egcl_forward(params, "L", h, p, v, edges, dirs, mobile, 0);

  const double angle = 1.234;
  const double c = std::cos(angle), sn = std::sin(angle);
  auto rot = [&](const Tensor& t) {
    Tensor out(t.rows(), 2);
    for (std::size_t i = 0; i < t.rows(); ++i) {
      Vec2 r = rotate({t.at(i, 0), t.at(i, 1)}, c, sn);
      out.mut(i, 0) = r.x;
      out.mut(i, 1) = r.y;
    }
    return out;
  };
  auto rotated =
      egcl_forward(params, "L", h, rot(p), rot(v), edges, rot(dirs), mobile, 0);
  Tensor expect_a = rot(base.a), expect_p = rot(base.p), expect_v = rot(base.v);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t cidx = 0; cidx < 2; ++cidx) {
      CHECK(rotated.a.at(i, cidx) ==
            Catch::Approx(expect_a.at(i, cidx)).margin(1e-9));
      CHECK(rotated.p.at(i, cidx) ==
            Catch::Approx(expect_p.at(i, cidx)).margin(1e-9));
      CHECK(rotated.v.at(i, cidx) ==
            Catch::Approx(expect_v.at(i, cidx)).margin(1e-9));
    }
    for (std::size_t cidx = 0; cidx < emb; ++cidx)
      CHECK(rotated.h.at(i, cidx) ==
            Catch::Approx(base.h.at(i, cidx)).margin(1e-9));
  }
}

TEST_CASE("mirror-symmetric pedestrians get mirrored accelerations") {
  std::mt19937_64 rng(23);
  PredictorModel model = small_model();
  ad::ParameterStore store;
  init_predictor(store, model.cfg, rng);
  auto params = ad::plain_params(store);
  CrowdState s;
  auto make = [&](double sign) {
    PedestrianState p;
    p.id = sign > 0 ? 1 : 2;
    p.position = {sign * 1.0, 0.0};
    p.velocity = {-sign * 1.2, 0.0};
    p.destination = {-sign * 8.0, 0.0};
    p.history = {{p.position, p.velocity, Vec2{}}};
    return p;
  };
  s.pedestrians = {make(1.0), make(-1.0)};
  Scene scene(Rect{-20, -20, 20, 20}, {});
  auto a = predict_next_vec(params, model, s, scene);
  CHECK(a[0].x == Catch::Approx(-a[1].x).margin(1e-9));
  CHECK(a[0].y == Catch::Approx(a[1].y).margin(1e-9));
}

TEST_CASE("zeroed output perceptrons give zero acceleration") {
  std::mt19937_64 rng(29);
  PredictorModel model = small_model();
  ad::ParameterStore store;
  init_predictor(store, model.cfg, rng);
  // zero the output layers feeding the acceleration
  for (std::size_t l = 0; l < model.cfg.layers; ++l) {
    const std::string prefix = "egcl" + std::to_string(l);
    for (const char* head : {".phi_p", ".phi_a"})
      for (auto& v :
           store.at(prefix + head + std::string(".l2.w")).mut_values())
        v = 0.0;
  }
  auto params = ad::plain_params(store);
  std::mt19937_64 srng(5);
  CrowdState s = random_state(6, srng);
  Scene scene(Rect{-20, -20, 20, 20}, {});
  auto a = predict_next_vec(params, model, s, scene);
  for (const auto& ai : a) {
    CHECK(ai.x == 0.0);
    CHECK(ai.y == 0.0);
  }
  // and uniform motion continues under integration
  auto next = integrate_step(s, a);
  for (std::size_t i = 0; i < s.size(); ++i)
    CHECK(next.pedestrians[i].velocity.x ==
          s.pedestrians[i].velocity.x);
}

TEST_CASE("predict_next on an empty crowd returns an empty result") {
  std::mt19937_64 rng(31);
  PredictorModel model = small_model();
  ad::ParameterStore store;
  init_predictor(store, model.cfg, rng);
  auto params = ad::plain_params(store);
  CrowdState s;
  Scene scene(Rect{0, 0, 10, 10}, {});
  auto a = predict_next(params, model, s, scene);
  CHECK(a.rows() == 0);
}

TEST_CASE("predict_next is equivariant under rigid motions") {
  std::mt19937_64 rng(37);
  PredictorModel model = small_model();
  ad::ParameterStore store;
  init_predictor(store, model.cfg, rng);
  auto params = ad::plain_params(store);
  Scene scene(Rect{-100, -100, 100, 100}, {Vec2{4.0, 5.0}, Vec2{6.0, 2.0}});
  std::mt19937_64 srng(7);
  CrowdState s = random_state(10, srng);
  auto base = predict_next_vec(params, model, s, scene);
  std::uniform_real_distribution<double> ua(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> ut(-30.0, 30.0);
  for (int trial = 0; trial < 25; ++trial) {
    const double angle = ua(srng);
    const Vec2 shift{ut(srng), ut(srng)};
    auto ts = transform_state(s, angle, shift);
    auto tsc = transform_scene(scene, angle, shift);
    auto moved = predict_next_vec(params, model, ts, tsc);
    const double c = std::cos(angle), sn = std::sin(angle);
    for (std::size_t i = 0; i < base.size(); ++i) {
      const Vec2 expect = rotate(base[i], c, sn);
      CHECK(moved[i].x == Catch::Approx(expect.x).margin(1e-9));
      CHECK(moved[i].y == Catch::Approx(expect.y).margin(1e-9));
    }
  }
}

TEST_CASE("predict_next translation leaves accelerations unchanged") {
  std::mt19937_64 rng(41);
  PredictorModel model = small_model();
  ad::ParameterStore store;
  init_predictor(store, model.cfg, rng);
  auto params = ad::plain_params(store);
  Scene scene(Rect{-100, -100, 100, 100}, {});
  std::mt19937_64 srng(11);
  CrowdState s = random_state(7, srng);
  auto base = predict_next_vec(params, model, s, scene);
  auto shifted = predict_next_vec(params, model,
                                  transform_state(s, 0.0, {17.5, -3.25}),
                                  scene);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(shifted[i].x == Catch::Approx(base[i].x).margin(1e-9));
    CHECK(shifted[i].y == Catch::Approx(base[i].y).margin(1e-9));
  }
}

TEST_CASE("predict_next is permutation equivariant") {
  std::mt19937_64 rng(43);
  PredictorModel model = small_model();
  ad::ParameterStore store;
  init_predictor(store, model.cfg, rng);
  auto params = ad::plain_params(store);
  Scene scene(Rect{-100, -100, 100, 100}, {});
  std::mt19937_64 srng(13);
  CrowdState s = random_state(8, srng);
  auto base = predict_next_vec(params, model, s, scene);
  std::vector<std::size_t> perm{3, 1, 7, 0, 5, 2, 6, 4};
  CrowdState ps;
  ps.dt = s.dt;
  for (std::size_t i : perm) ps.pedestrians.push_back(s.pedestrians[i]);
  auto permuted = predict_next_vec(params, model, ps, scene);
  for (std::size_t k = 0; k < perm.size(); ++k) {
    CHECK(permuted[k].x == Catch::Approx(base[perm[k]].x).margin(1e-12));
    CHECK(permuted[k].y == Catch::Approx(base[perm[k]].y).margin(1e-12));
  }
}

TEST_CASE("coincident pedestrians keep gradients finite") {
  std::mt19937_64 rng(59);
  PredictorModel model = small_model();
  ad::ParameterStore store;
  init_predictor(store, model.cfg, rng);
  CrowdState s;
  for (int i = 0; i < 2; ++i) {
    PedestrianState p;
    p.id = i + 1;
    p.position = {2.0, 2.0};  // exactly the same point
    p.velocity = {1.0, 0.0};
    p.destination = {8.0, 2.0};
    p.history = {{p.position, p.velocity, Vec2{}}};
    s.pedestrians.push_back(p);
  }
  Scene scene(Rect{-20, -20, 20, 20}, {});
  ad::Tape tape;
  auto params = ad::watch_params(tape, store);
  ad::Tensor a = predict_next(params, model, s, scene);
  REQUIRE(a.all_finite());
  tape.backward_from(ad::squared_norm(a));
  for (const auto& [name, g] : ad::param_gradients(tape, params))
    for (double v : g.values()) {
      REQUIRE(std::isfinite(v));
    }
}

TEST_CASE("obstacles join message passing as static nodes") {
  std::mt19937_64 rng(53);
  PredictorModel model = small_model();
  ad::ParameterStore store;
  init_predictor(store, model.cfg, rng);
  auto params = ad::plain_params(store);
  CrowdState s;
  PedestrianState p;
  p.id = 1;
  p.position = {0, 0};
  p.velocity = {1.0, 0};
  p.destination = {8, 0};
  p.history = {{p.position, p.velocity, Vec2{}}};
  s.pedestrians = {p};
  Scene empty_scene(Rect{-20, -20, 20, 20}, {});
  Scene blocked(Rect{-20, -20, 20, 20}, {Vec2{1.0, 0.0}});
  auto free_a = predict_next_vec(params, model, s, empty_scene);
  auto blocked_a = predict_next_vec(params, model, s, blocked);
  const double diff = (free_a[0] - blocked_a[0]).norm();
  CHECK(diff > 1e-9);  // the obstacle message changes the output
  // with obstacle participation disabled the scene is invisible
  PredictorModel no_obs = model;
  no_obs.cfg.include_obstacles = false;
  auto ignored = predict_next_vec(params, no_obs, s, blocked);
  auto base = predict_next_vec(params, no_obs, s, empty_scene);
  CHECK(ignored[0].x == base[0].x);
  CHECK(ignored[0].y == base[0].y);
}

TEST_CASE("predict_next gradients pass grad_check on a 5-pedestrian state") {
  std::mt19937_64 rng(47);
  PredictorModel model;
  model.cfg.history = 2;
  model.cfg.embed_dim = 4;
  model.cfg.hidden = 6;
  model.cfg.layers = 1;
  ad::ParameterStore store;
  init_predictor(store, model.cfg, rng);
  Scene scene(Rect{-100, -100, 100, 100}, {});
  std::mt19937_64 srng(17);
  CrowdState state = random_state(5, srng, 2);
  Tensor weights(5, 2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : weights.mut_values()) v = u(srng);
  for (const auto& [pname, ptensor] : store.all()) {
    auto f = [&, pname](const Tensor& t) {
      ad::ParamMap P;
      for (const auto& [n, v] : store.all())
        P.emplace(n, n == pname ? t : v.detached());
      Tensor a = predict_next(P, model, state, scene);
      return ad::sum(ad::mul(a, weights));
    };
    INFO(pname);
    CHECK(ad::grad_check(f, ptensor, 1e-6) < 1e-5);
  }
}
