#include <doctest.h>

#include <cmath>

#include "gradcheck_suite.hpp"
#include "mpner/autodiff.hpp"

using namespace mpner;
using namespace mpner::ad;

TEST_CASE("forward values") {
  Graph<double> g;
  auto sm = g.value(g.softmax(g.constant(Tensor<double>({2}, {0.0, 0.0}))));
  CHECK(sm.data == std::vector<double>{0.5, 0.5});

  Rng rng(1);
  const auto a = gradcheck::random_tensor(rng, {3, 3});
  const Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(g.value(g.matmul(g.constant(eye), g.constant(a))).data == a.data);

  const auto lse = g.value(g.logsumexp(g.constant(Tensor<double>({4}, 0.0)))).item();
  CHECK(lse == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(lse == doctest::Approx(1.386294).epsilon(1e-6));

  const auto cat = g.value(g.concat(g.constant(Tensor<double>({1, 2}, {1, 2})), g.constant(Tensor<double>({1, 1}, {3}))));
  CHECK(cat.shape == Shape{1, 3});
  CHECK(cat.data == std::vector<double>{1, 2, 3});
}

TEST_CASE("softmax rows sum to one and masked keys get zero weight") {
  Rng rng(4);
  Graph<double> g;
  const auto x = gradcheck::random_tensor(rng, {2, 3, 5}, -30.0, 30.0);
  const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 0, 0, 0, 1, 1};
  const auto p = g.value(g.softmax(g.constant(x), mask));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t k = 0; k < 5; ++k) {
        const double w = p.data[(b * 3 + r) * 5 + k];
        if (!mask[b * 5 + k]) CHECK(w == 0.0);
        total += w;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("layer_norm centres and scales rows before the affine map") {
  Rng rng(6);
  Graph<double> g;
  const auto x = gradcheck::random_tensor(rng, {4, 7}, -5.0, 5.0);
  const auto y = g.value(g.layer_norm(g.constant(x), g.constant(Tensor<double>({7}, 1.0)), g.constant(Tensor<double>({7}))));
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t k = 0; k < 7; ++k) mean += y.data[r * 7 + k] / 7.0;
    for (std::size_t k = 0; k < 7; ++k) var += (y.data[r * 7 + k] - mean) * (y.data[r * 7 + k] - mean) / 7.0;
    CHECK(std::abs(mean) <= 1e-6);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("backward basics") {
  Tensor<double> x({2}, {-1.0, 2.0});
  Tensor<double> unused({3}, 1.0);
  Graph<double> g;
  Var px = g.param(x);
  g.param(unused);
  g.backward(g.sum(g.relu(px)));
  CHECK(g.grad_of(x).data == std::vector<double>{0.0, 1.0});
  CHECK(g.grad_of(unused).data == std::vector<double>(3, 0.0));

  Tensor<double> zero({2}, 0.0);
  Graph<double> g0;
  g0.backward(g0.sum(g0.relu(g0.param(zero))));
  CHECK(g0.grad_of(zero).data == std::vector<double>{0.0, 0.0});

  Graph<double> g2;
  CHECK_THROWS_AS(g2.backward(g2.param(x)), std::invalid_argument);
}

TEST_CASE("sum of W x has outer-product gradient") {
  Rng rng(12);
  auto w = gradcheck::random_tensor(rng, {4, 3});
  const auto x = gradcheck::random_tensor(rng, {2, 4});
  Graph<double> g;
  g.backward(g.sum(g.matmul(g.constant(x), g.param(w))));
  const auto dw = g.grad_of(w);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(dw.data[i * 3 + j] == doctest::Approx(x.data[i] + x.data[4 + i]));
  const auto r = finite_diff_check([&](Graph<double>& h) { return h.sum(h.matmul(h.constant(x), h.param(w))); }, w, 1e-9);
  CHECK(r.ok);
  CHECK(r.max_rel_error <= 1e-9);
}

TEST_CASE("finite differences agree for every primitive") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& o : gradcheck::op_suite(seed)) {
      INFO(o.name << " seed " << seed << " err " << o.result.max_rel_error);
      CHECK(o.result.ok);
      CHECK(o.result.checked > 0);
    }
  }
}

TEST_CASE("finite differences agree for the full loss") {
  for (bool dense : {false, true}) {
    for (const auto& o : gradcheck::model_suite(5, dense)) {
      INFO(o.name << " dense " << dense << " err " << o.result.max_rel_error);
      CHECK(o.result.ok);
    }
  }
}

TEST_CASE("dropout") {
  Rng rng(3);
  auto x = gradcheck::random_tensor(rng, {50, 4});
  Graph<double> eval;
  Var y = eval.dropout(eval.param(x), 0.5);
  CHECK(eval.value(y).data == x.data);

  Graph<double> train(true, 17);
  Var d = train.dropout(train.param(x), 0.25);
  const auto out = train.value(d);
  train.backward(train.sum(d));
  const auto grad = train.grad_of(x);
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK((grad.data[i] == 0.0 || grad.data[i] == doctest::Approx(1.0 / 0.75)));
    CHECK(out.data[i] == doctest::Approx(x.data[i] * grad.data[i]));
    dropped += grad.data[i] == 0.0;
  }
  CHECK(dropped > 20);
  CHECK(dropped < 80);

  Graph<double> again(true, 17);
  CHECK(again.value(again.dropout(again.param(x), 0.25)).data == out.data);
}

TEST_CASE("non-finite values are rejected") {
  Graph<double> g;
  Var big = g.constant(Tensor<double>({1}, {1e308}));
  CHECK_THROWS_AS(g.scale(big, 10.0), std::domain_error);
}

TEST_CASE("adam_step") {
  Tensor<double> p({1}, 0.0);
  Tensor<double>* params[] = {&p};
  const Tensor<double> grads[] = {Tensor<double>({1}, 1.0)};
  AdamState<double> state;
  state.lr = 0.001;
  adam_step<double>(params, grads, state);
  // t = 1: m_hat = 1, v_hat = 1, update = -lr / (1 + eps).
  CHECK(p.data[0] == doctest::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(std::abs(p.data[0] - -0.000999999995) < 1e-11);
  CHECK(state.step == 1);

  Tensor<double> q({3}, {0.5, -1.0, 2.0});
  const auto before = q.data;
  Tensor<double>* qs[] = {&q};
  const Tensor<double> zeros[] = {Tensor<double>({3}, 0.0)};
  AdamState<double> fresh;
  adam_step<double>(qs, zeros, fresh);
  CHECK(q.data == before);

  Tensor<double> a({2}, 1.0), b({2}, 1.0);
  Tensor<double>* ab[] = {&a, &b};
  const Tensor<double> same[] = {Tensor<double>({2}, {0.3, -0.7}), Tensor<double>({2}, {0.3, -0.7})};
  AdamState<double> st;
  for (int i = 0; i < 5; ++i) adam_step<double>(ab, same, st);
  CHECK(a.data == b.data);
}
