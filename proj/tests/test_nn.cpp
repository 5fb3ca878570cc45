#include <cmath>
#include <numeric>

#include "doctest.h"
#include "meir/error.hpp"
#include "meir/nn.hpp"
#include "meir/random.hpp"

using namespace meir;
using namespace meir::nn;

namespace {

struct Problem {
  Mlp net;
  std::vector<Vector> xs;
  std::vector<double> ys;
};

Problem random_problem(std::uint64_t seed, std::size_t n = 12) {
  Problem p;
  p.net.layers = init_params({{5, 7, Activation::relu}, {7, 1, Activation::identity}}, seed);
  Rng rng(seed + 100);
  for (auto* m : p.net.params()) {
    for (auto& x : m->data) x += 0.1 * rng.normal();  // nonzero biases
  }
  for (std::size_t i = 0; i < n; ++i) {
    Vector x(5);
    for (auto& v : x) v = rng.normal();
    p.xs.push_back(x);
    p.ys.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
  }
  return p;
}

double check_problem(Problem& p, double eps, double scale_first_layer = 1.0) {
  Mlp grads = p.net.zeros();
  p.net.loss(p.xs, p.ys, &grads);
  for (auto& x : grads.layers[0].weight.data) x *= scale_first_layer;
  std::vector<const Matrix*> g;
  for (auto* m : grads.params()) g.push_back(m);
  return grad_check(p.net.params(), g, [&] { return p.net.loss(p.xs, p.ys, nullptr); }, eps);
}

}  // namespace

TEST_CASE("dense forward") {
  DenseLayer id{Matrix(2, 2), Matrix(2, 1), Activation::identity};
  id.weight.data = {1, 0, 0, 1};
  CHECK(dense_forward(id, Vector{3, -4}) == Vector{3, -4});

  DenseLayer l{Matrix(2, 2), Matrix(2, 1, 1.0), Activation::identity};
  l.weight.data = {1, 2, 3, 4};
  CHECK(dense_forward(l, Vector{1, 1}) == Vector{4, 8});

  DenseLayer r{Matrix(2, 2), Matrix(2, 1), Activation::relu};
  r.weight.data = {1, 0, 0, 1};
  CHECK(dense_forward(r, Vector{-2, 3}) == Vector{0, 3});

  CHECK_THROWS_AS(dense_forward(r, Vector{1, 2, 3}), Error);
}

TEST_CASE("zero input gives zero weight gradients") {
  Rng rng(1);
  auto layer = init_layer({4, 3, Activation::identity}, rng);
  DenseCache cache;
  dense_forward(layer, Vector(4, 0.0), &cache);
  auto grads = zeros_like(layer);
  dense_backward(layer, cache, Vector{1, -1, 2}, grads);
  for (double g : grads.weight.data) CHECK(g == 0.0);
}

TEST_CASE("gradient check on random two-layer nets") {
  for (std::uint64_t s = 1; s <= 5; ++s) {
    auto p = random_problem(s);
    CHECK(check_problem(p, 1e-5) < 1e-4);
  }
}

TEST_CASE("gradient check detects a doubled layer gradient") {
  auto p = random_problem(3);
  CHECK(check_problem(p, 1e-5, 2.0) > 0.3);
}

TEST_CASE("gradient check is stable across step sizes") {
  auto p = random_problem(4);
  const double coarse = check_problem(p, 1e-3);
  const double fine = check_problem(p, 1e-5);
  CHECK(coarse < 1e-2);
  CHECK(fine < 1e-2);
}

TEST_CASE("a gradient through a hard zero is zero") {
  // relu layer with all-negative pre-activations blocks everything below it.
  Mlp net;
  net.layers = init_params({{3, 2, Activation::identity}, {2, 2, Activation::relu}, {2, 1, Activation::identity}}, 2);
  net.layers[1].weight.data.assign(4, 0.0);
  net.layers[1].bias.data = {-1, -1};
  Mlp grads = net.zeros();
  net.loss({{1, 2, 3}}, {1.0}, &grads);
  for (double g : grads.layers[0].weight.data) CHECK(g == 0.0);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Matrix theta(2, 2, 0.5);
    Matrix g(2, 2, 0.0);
    auto st = adam_init({&theta});
    adam_step({&theta}, {&g}, st);
    CHECK(theta == Matrix(2, 2, 0.5));
  }
  SUBCASE("first step of a unit gradient") {
    Matrix theta(1, 1, 0.0);
    Matrix g(1, 1, 1.0);
    auto st = adam_init({&theta});
    adam_step({&theta}, {&g}, st);
    const double step = -theta.data[0];
    CHECK(step >= 0.0009999);
    CHECK(step <= 0.001);
    // Independent evaluation of the bias-corrected update at t = 1.
    const double m_hat = (0.1 * 1.0) / (1 - 0.9), v_hat = (0.001 * 1.0) / (1 - 0.999);
    CHECK(step == doctest::Approx(0.001 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-12));
    const double before = theta.data[0];
    adam_step({&theta}, {&g}, st);
    CHECK(theta.data[0] < before);
  }
}

TEST_CASE("losses") {
  CHECK(binary_xent(0.5, 1.0) == doctest::Approx(std::log(2.0)));
  CHECK(binary_xent(1.0, 1.0) <= 1e-6);
  CHECK(binary_xent(0.0, 0.0) <= 1e-6);
  CHECK(std::isfinite(binary_xent(0.0, 1.0)));
  const Vector uniform{1.0 / 3, 1.0 / 3, 1.0 / 3};
  CHECK(categorical_xent(uniform, 2) == doctest::Approx(std::log(3.0)));
  auto sm = softmax(Vector{1, 2, 3});
  CHECK(std::abs(sm[0] - 0.0900) < 1e-4);
  CHECK(std::abs(sm[1] - 0.2447) < 1e-4);
  CHECK(std::abs(sm[2] - 0.6652) < 1e-4);
}

TEST_CASE("initialization") {
  auto a = init_params({{100, 100, Activation::relu}}, 9);
  auto b = init_params({{100, 100, Activation::relu}}, 9);
  CHECK(a[0].weight == b[0].weight);
  const auto& w = a[0].weight.data;
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  double var = 0;
  for (double x : w) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(w.size()));
  CHECK(std::abs(sd - std::sqrt(2.0 / 100.0)) < 0.15 * std::sqrt(2.0 / 100.0));
  for (double x : a[0].bias.data) CHECK(x == 0.0);

  Rng rng(1);
  auto gate = init_layer({4, 4, Activation::sigmoid, 1.0}, rng);
  for (double x : gate.bias.data) CHECK(x == 1.0);
}

TEST_CASE("a small net memorizes 32 samples") {
  Mlp net;
  net.layers = init_params({{6, 32, Activation::relu}, {32, 1, Activation::identity}}, 11);
  Rng rng(12);
  std::vector<Vector> xs;
  std::vector<double> ys;
  for (int i = 0; i < 32; ++i) {
    Vector x(6);
    for (auto& v : x) v = rng.normal();
    xs.push_back(x);
    ys.push_back(i % 2);
  }
  auto st = adam_init(net.params(), {0.01});
  double loss = 1.0;
  for (int step = 0; step < 500; ++step) {
    Mlp grads = net.zeros();
    loss = net.loss(xs, ys, &grads);
    std::vector<const Matrix*> g;
    for (auto* m : grads.params()) g.push_back(m);
    adam_step(net.params(), g, st);
  }
  loss = net.loss(xs, ys, nullptr);
  CHECK(loss < 0.05);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) correct += (net.predict(xs[i]) >= 0.5) == (ys[i] == 1.0);
  CHECK(correct == 32);
}

TEST_CASE("tensor serialization is exact") {
  NamedTensors t{{"a", Matrix(2, 3)}, {"b", Matrix(1, 1)}};
  Rng rng(5);
  for (auto& x : t[0].second.data) x = rng.normal();
  t[1].second.data[0] = 0.1;
  auto back = parse_tensors(serialize_tensors(t));
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "a");
  CHECK(back[0].second == t[0].second);
  CHECK(back[1].second == t[1].second);
  CHECK_THROWS_AS(parse_tensors("tensors 1\ntensor a 2 2\n1 2\n"), Error);
}
