#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "crowdflow/autodiff.hpp"

using namespace crowdflow;
using ad::Tensor;

namespace {

Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                     double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(rows, cols);
  for (auto& v : t.mut_values()) v = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tensor x = Tensor::zeros(1, 3);
  Tensor s = ad::softmax_rows(x);
  for (std::size_t c = 0; c < 3; ++c)
    CHECK(s.at(0, c) == Catch::Approx(1.0 / 3.0).margin(1e-15));
}

TEST_CASE("outer product example") {
  Tensor a = Tensor::column({1, 2});
  Tensor b = Tensor::column({3, 4});
  Tensor o = ad::outer(a, b);
  CHECK(o.at(0, 0) == 3.0);
  CHECK(o.at(0, 1) == 4.0);
  CHECK(o.at(1, 0) == 6.0);
  CHECK(o.at(1, 1) == 8.0);
}

TEST_CASE("sigmoid at zero") {
  CHECK(ad::sigmoid(Tensor::scalar(0.0)).item() == Catch::Approx(0.5));
}

TEST_CASE("backward on a quadratic") {
  ad::Tape tape;
  Tensor w = Tensor::column({1, 2, 3});
  tape.watch(w);
  Tensor loss = ad::sum(ad::mul(w, w));
  tape.backward_from(loss);
  auto g = tape.gradient_of(w);
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 4.0);
  CHECK(g[2] == 6.0);
}

TEST_CASE("unreached parameters get zero gradients") {
  ad::Tape tape;
  Tensor used = Tensor::scalar(2.0);
  Tensor unused = Tensor::column({1, 2});
  tape.watch(used);
  tape.watch(unused);
  Tensor loss = ad::mul(used, used);
  tape.backward_from(loss);
  auto g = tape.gradient_of(unused);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
}

TEST_CASE("backward twice on one tape is a contract error") {
  ad::Tape tape;
  Tensor w = Tensor::scalar(1.5);
  tape.watch(w);
  Tensor loss = ad::mul(w, w);
  tape.backward_from(loss);
  CHECK_THROWS_AS(tape.backward_from(loss), ContractError);
}

TEST_CASE("shape mismatches name the op") {
  Tensor a = Tensor::zeros(2, 3);
  Tensor b = Tensor::zeros(3, 2);
  CHECK_THROWS_WITH(ad::add(a, b),
                    Catch::Matchers::ContainsSubstring("add") &&
                        Catch::Matchers::ContainsSubstring("2x3"));
  CHECK_THROWS_AS(ad::matmul(a, a), ContractError);
}

TEST_CASE("recording off means zero tape growth") {
  ad::Tape tape;
  Tensor a = Tensor::scalar(1.0);
  Tensor b = Tensor::scalar(2.0);
  Tensor c = ad::add(ad::mul(a, b), ad::exp(a));
  CHECK(c.item() == Catch::Approx(2.0 + std::exp(1.0)));
  CHECK(tape.empty());
  CHECK_FALSE(c.on_tape());
}

TEST_CASE("grad_check on identity and constant") {
  // dyadic point and step make the central difference exact
  Tensor x = Tensor::column({0.25, -0.5});
  const double step = 9.5367431640625e-7;  // 2^-20
  CHECK(ad::grad_check([](const Tensor& t) { return ad::sum(t); }, x, step) <
        1e-12);
  CHECK(ad::grad_check([](const Tensor&) { return Tensor::scalar(3.0); }, x,
                       step) < 1e-12);
}

TEST_CASE("every primitive matches central differences on random inputs") {
  std::mt19937_64 rng(1234);
  const double tol = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = random_tensor(3, 4, rng, 0.2, 1.5);  // positive: log/sqrt safe
    Tensor other = random_tensor(3, 4, rng, 0.2, 1.5);
    Tensor mat = random_tensor(4, 2, rng);
    auto check = [&](auto f) { CHECK(ad::grad_check(f, x, 1e-6) < tol); };
    check([&](const Tensor& t) { return ad::sum(ad::add(t, other)); });
    check([&](const Tensor& t) { return ad::sum(ad::sub(other, t)); });
    check([&](const Tensor& t) { return ad::sum(ad::mul(t, other)); });
    check([&](const Tensor& t) { return ad::sum(ad::divide(other, t)); });
    check([&](const Tensor& t) { return ad::sum(ad::matmul(t, mat)); });
    check([&](const Tensor& t) {
      return ad::sum(ad::matmul(ad::transpose(t), t));
    });
    check([&](const Tensor& t) { return ad::mean(ad::exp(t)); });
    check([&](const Tensor& t) { return ad::sum(ad::log(t)); });
    check([&](const Tensor& t) { return ad::sum(ad::sqrt(t)); });
    check([&](const Tensor& t) { return ad::sum(ad::sigmoid(t)); });
    check([&](const Tensor& t) { return ad::sum(ad::abs(t)); });
    check([&](const Tensor& t) { return ad::squared_norm(t); });
    check([&](const Tensor& t) { return ad::sum(ad::softmax_rows(t)); });
    check([&](const Tensor& t) {
      return ad::squared_norm(ad::softmax_rows(ad::scale(t, 3.0)));
    });
    check([&](const Tensor& t) { return ad::sum(ad::sum_axis(t, 0)); });
    check([&](const Tensor& t) {
      return ad::squared_norm(ad::sum_axis(t, 1));
    });
    check([&](const Tensor& t) {
      return ad::sum(ad::broadcast(ad::sum_axis(t, 1), 3, 4));
    });
    check([&](const Tensor& t) {
      return ad::squared_norm(ad::concat_cols({t, ad::mul(t, t)}));
    });
    check([&](const Tensor& t) {
      return ad::sum(ad::slice_cols(ad::slice_rows(t, 1, 3), 0, 2));
    });
    check([&](const Tensor& t) {
      return ad::sum(ad::take_rows(t, {2, 0, 2}));
    });
    check([&](const Tensor& t) {
      return ad::sum(ad::take_flat(t, {0, 5, 11, 5}));
    });
    check([&](const Tensor& t) {
      return ad::squared_norm(ad::segment_sum(t, {1, 0, 1}, 2));
    });
    check([&](const Tensor& t) { return ad::sum(ad::clamp(t, 0.4, 1.2)); });
    check([&](const Tensor& t) {
      Tensor col = ad::sum_axis(t, 1);
      return ad::sum(ad::segment_max(col, {0, 1, 0}, 2));
    });
    check([&](const Tensor& t) {
      Tensor v = ad::slice_cols(ad::slice_rows(t, 0, 3), 0, 1);
      Tensor u = ad::slice_cols(ad::slice_rows(t, 0, 3), 1, 2);
      return ad::sum(ad::outer(v, u));
    });
  }
}

TEST_CASE("random 3-layer MLP gradient matches finite differences") {
  std::mt19937_64 rng(77);
  Tensor w1 = random_tensor(5, 8, rng);
  Tensor b1 = random_tensor(1, 8, rng);
  Tensor w2 = random_tensor(8, 8, rng);
  Tensor b2 = random_tensor(1, 8, rng);
  Tensor w3 = random_tensor(8, 1, rng);
  Tensor x = random_tensor(2, 5, rng);
  auto forward = [&](const Tensor& w1v, const Tensor& b1v, const Tensor& w2v,
                     const Tensor& b2v, const Tensor& w3v) {
    Tensor h1 = ad::sigmoid(
        ad::add(ad::matmul(x, w1v), ad::broadcast(b1v, 2, 8)));
    Tensor h2 = ad::silu(
        ad::add(ad::matmul(h1, w2v), ad::broadcast(b2v, 2, 8)));
    return ad::mean(ad::matmul(h2, w3v));
  };
  const double tol = 1e-5;
  CHECK(ad::grad_check(
            [&](const Tensor& t) { return forward(t, b1, w2, b2, w3); }, w1,
            1e-6) < tol);
  CHECK(ad::grad_check(
            [&](const Tensor& t) { return forward(w1, t, w2, b2, w3); }, b1,
            1e-6) < tol);
  CHECK(ad::grad_check(
            [&](const Tensor& t) { return forward(w1, b1, t, b2, w3); }, w2,
            1e-6) < tol);
  CHECK(ad::grad_check(
            [&](const Tensor& t) { return forward(w1, b1, w2, t, w3); }, b2,
            1e-6) < tol);
  CHECK(ad::grad_check(
            [&](const Tensor& t) { return forward(w1, b1, w2, b2, t); }, w3,
            1e-6) < tol);
}

TEST_CASE("chain rule composition equals fused expression") {
  // f(x) = sum(sigmoid(x*x)) recorded in one go vs through an explicit
  // intermediate tensor on the same tape
  std::mt19937_64 rng(5);
  Tensor x0 = random_tensor(2, 3, rng);
  ad::Tape t1;
  Tensor xa = x0.clone();
  t1.watch(xa);
  Tensor fused = ad::sum(ad::sigmoid(ad::mul(xa, xa)));
  t1.backward_from(fused);
  auto g1 = t1.gradient_of(xa);

  ad::Tape t2;
  Tensor xb = x0.clone();
  t2.watch(xb);
  Tensor stage = ad::mul(xb, xb);
  Tensor two_stage = ad::sum(ad::sigmoid(stage));
  t2.backward_from(two_stage);
  auto g2 = t2.gradient_of(xb);
  for (std::size_t i = 0; i < g1.size(); ++i)
    CHECK(g1[i] == Catch::Approx(g2[i]).margin(1e-15));
}

TEST_CASE("parameter store round trip is bit exact") {
  std::mt19937_64 rng(9);
  ad::ParameterStore store;
  store.add("layer.w", random_tensor(3, 4, rng, -10.0, 10.0));
  store.add("layer.b", random_tensor(1, 4, rng, -1e-7, 1e-7));
  Tensor odd = Tensor::from(1, 3, {1.0 / 3.0, 1e300, -4.9406564584124654e-324});
  store.add("odd", odd);
  auto doc = store.to_json();
  auto text = doc.dump();
  auto restored = ad::ParameterStore::from_json(nlohmann::json::parse(text));
  for (const auto& [name, t] : store.all()) {
    const auto& r = restored.at(name);
    REQUIRE(r.rows() == t.rows());
    REQUIRE(r.cols() == t.cols());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      // bit-exact round trip
      CHECK(std::memcmp(&r.values()[i], &t.values()[i], sizeof(double)) == 0);
    }
  }
}

TEST_CASE("watched parameters collect gradients by name") {
  ad::ParameterStore store;
  store.add("a", Tensor::column({1.0, 2.0}));
  store.add("b", Tensor::scalar(3.0));
  ad::Tape tape;
  auto params = ad::watch_params(tape, store);
  Tensor loss = ad::squared_norm(params.at("a"));
  tape.backward_from(loss);
  auto grads = ad::param_gradients(tape, params);
  CHECK(grads.at("a").at(0, 0) == 2.0);
  CHECK(grads.at("a").at(1, 0) == 4.0);
  CHECK(grads.at("b").at(0, 0) == 0.0);  // unreachable -> zero
}
