#include <doctest.h>

#include <cmath>

#include "mpner/crf.hpp"
#include "oracles.hpp"

using namespace mpner;

TEST_CASE("score_sequence") {
  const auto zero = TagLattice::zeros(4, 5);
  CHECK(score_sequence(zero, {0, 4, 1, 3}) == 0.0);

  Rng rng(3);
  auto one = oracle::random_lattice(rng, 1, 5);
  CHECK(score_sequence(one, {2}) == one.start[2] + one.emission(0, 2) + one.end[2]);

  auto l = oracle::random_lattice(rng, 3, 3);
  const double by_hand = l.start[0] + l.emission(0, 0) + l.transition(0, 2) + l.emission(1, 2) +
                         l.transition(2, 1) + l.emission(2, 1) + l.end[1];
  CHECK(score_sequence(l, {0, 2, 1}) == doctest::Approx(by_hand).epsilon(1e-14));
  CHECK_THROWS_AS(score_sequence(l, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(score_sequence(l, {0, 1, 3}), std::invalid_argument);
}

TEST_CASE("log_partition") {
  CHECK(log_partition(TagLattice::zeros(2, 2)) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  Rng rng(8);
  const auto one = oracle::random_lattice(rng, 1, 4);
  double m = -1e300;
  for (std::size_t k = 0; k < 4; ++k) m = std::max(m, one.start[k] + one.emission(0, k) + one.end[k]);
  double acc = 0.0;
  for (std::size_t k = 0; k < 4; ++k) acc += std::exp(one.start[k] + one.emission(0, k) + one.end[k] - m);
  CHECK(log_partition(one) == doctest::Approx(m + std::log(acc)).epsilon(1e-14));

  const auto l = oracle::random_lattice(rng, 4, 3);
  CHECK(std::abs(log_partition(l) - oracle::brute_log_partition(l)) <= 1e-8);
}

TEST_CASE("crf_nll") {
  CHECK(crf_nll(TagLattice::zeros(2, 2), {0, 1}) == doctest::Approx(std::log(4.0)));

  auto l = TagLattice::zeros(5, 5);
  const TagSequence gold = {1, 2, 3, 0, 4};
  for (std::size_t i = 0; i < 5; ++i) l.emission(i, gold[i]) = 100.0;
  CHECK(crf_nll(l, gold) <= 1e-3);

  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const auto lat = oracle::random_lattice(rng, 1 + rng.below(5), 2 + rng.below(3));
    TagSequence tags(lat.length);
    for (auto& t : tags) t = static_cast<int>(rng.below(lat.num_tags));
    const double nll = crf_nll(lat, tags);
    CHECK(nll >= -1e-9);
    CHECK(std::exp(-nll) <= 1.0 + 1e-9);
  }
}

TEST_CASE("viterbi") {
  auto l = TagLattice::zeros(2, 5);
  l.emission(0, kOutside) = 10.0;
  l.emission(1, kUnit) = 10.0;
  CHECK(viterbi(l).tags == TagSequence{kOutside, kUnit});

  CHECK(viterbi(TagLattice::zeros(6, 5)).tags == TagSequence(6, kOutside));
  const auto mask = bilou_constraints();
  CHECK(viterbi(TagLattice::zeros(6, 5), &mask).tags == TagSequence(6, kOutside));

  Rng rng(5);
  const auto r = oracle::random_lattice(rng, 5, 5);
  const auto got = viterbi(r);
  const auto want = oracle::brute_viterbi(r);
  CHECK(got.tags == want.tags);
  CHECK(std::abs(got.score - want.score) <= 1e-9);
  CHECK_THROWS_AS(viterbi(TagLattice::zeros(0, 5)), std::invalid_argument);
}

TEST_CASE("viterbi beats random paths and is shift invariant per row") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto l = oracle::random_lattice(rng, 1 + rng.below(6), 2 + rng.below(4));
    const auto best = viterbi(l);
    for (int k = 0; k < 100; ++k) {
      TagSequence tags(l.length);
      for (auto& t : tags) t = static_cast<int>(rng.below(l.num_tags));
      CHECK(best.score >= score_sequence(l, tags) - 1e-12);
    }
    const std::size_t row = rng.below(l.length);
    const double z = log_partition(l);
    const double c = 0.5 * static_cast<double>(trial + 1);
    auto shifted = l;
    for (std::size_t k = 0; k < l.num_tags; ++k) shifted.emission(row, k) += c;
    CHECK(log_partition(shifted) == doctest::Approx(z + c).epsilon(1e-12));
    CHECK(viterbi(shifted).tags == best.tags);
    CHECK(score_sequence(shifted, best.tags) == doctest::Approx(best.score + c).epsilon(1e-12));
  }
}

TEST_CASE("bilou constraint mask") {
  const auto m = bilou_constraints();
  CHECK(!m.transition_allowed(kBegin, kOutside));
  CHECK(!m.allowed_start[kInside]);
  CHECK(!m.allowed_start[kLast]);
  CHECK(!m.allowed_end[kBegin]);
  CHECK(!m.allowed_end[kInside]);
  CHECK(m.transition_allowed(kLast, kBegin));
  CHECK(m.transition_allowed(kUnit, kUnit));
  CHECK(!m.transition_allowed(kOutside, kInside));

  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(20));
    CHECK(m.path_allowed(bilou_encode(oracle::random_spans(rng, n), n)));
  }
}

TEST_CASE("constrained viterbi matches constrained enumeration and always strict-decodes") {
  const auto mask = bilou_constraints();
  Rng rng(31);
  for (int trial = 0; trial < 60; ++trial) {
    const auto l = oracle::random_lattice(rng, 1 + rng.below(5), 5, 4.0);
    const auto got = viterbi(l, &mask);
    const auto want = oracle::brute_viterbi(l, &mask);
    CHECK(got.tags == want.tags);
    CHECK(std::abs(got.score - want.score) <= 1e-9);
    CHECK_NOTHROW(bilou_decode(got.tags, true));
  }
}

TEST_CASE("viterbi ties go to the lowest tag id") {
  auto l = TagLattice::zeros(3, 3);
  l.emission(1, 1) = 2.0;
  l.emission(1, 2) = 2.0;
  CHECK(viterbi(l).tags == TagSequence{0, 1, 0});
  CHECK(oracle::brute_viterbi(l).tags == TagSequence{0, 1, 0});
}

TEST_CASE("crf_nll_node agrees with the scalar loss and ignores padding") {
  Rng rng(44);
  const std::size_t K = 5, S = 6;
  const auto a = oracle::random_lattice(rng, 6, K);
  const auto b = oracle::random_lattice(rng, 3, K);
  const TagSequence ga = {0, 1, 3, 4, 0, 4}, gb = {4, 1, 3};

  ad::Tensor<double> em({2, S, K});
  std::copy(a.emissions.begin(), a.emissions.end(), em.data.begin());
  std::copy(b.emissions.begin(), b.emissions.end(), em.data.begin() + S * K);
  for (std::size_t i = 3 * K; i < S * K; ++i) em.data[S * K + i] = rng.uniform(-50.0, 50.0);
  std::vector<int> gold(2 * S, 0);
  std::copy(ga.begin(), ga.end(), gold.begin());
  std::copy(gb.begin(), gb.end(), gold.begin() + S);
  gold[S + 4] = 3;  // padding garbage

  auto lb = b;
  lb.transitions = a.transitions;
  lb.start = a.start;
  lb.end = a.end;
  const double expected = 0.5 * (crf_nll(a, ga) + crf_nll(lb, gb));
  const std::vector<std::size_t> lengths = {6, 3};

  ad::Graph<double> g;
  const auto v = crf_nll_node(g, g.constant(em), g.constant(ad::Tensor<double>({K, K}, a.transitions)),
                              g.constant(ad::Tensor<double>({K}, a.start)),
                              g.constant(ad::Tensor<double>({K}, a.end)), gold, lengths);
  CHECK(g.value(v).item() == doctest::Approx(expected).epsilon(1e-12));
}
