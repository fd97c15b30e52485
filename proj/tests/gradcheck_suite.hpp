#pragma once

// Finite-difference checks for every primitive op and for the full model
// loss. Shared by the unit tests and the acceptance run.

#include <functional>
#include <string>
#include <vector>

#include "mpner/autodiff.hpp"
#include "mpner/crf.hpp"
#include "mpner/model.hpp"

namespace gradcheck {

using mpner::ad::Graph;
using mpner::ad::GradCheckResult;
using mpner::ad::Shape;
using mpner::ad::Tensor;
using mpner::ad::Var;

struct Outcome {
  std::string name;
  GradCheckResult result;
};

inline Tensor<double> random_tensor(mpner::Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& x : t.data) x = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so relu kinks are never straddled.
inline Tensor<double> away_from_zero(mpner::Rng& rng, Shape shape) {
  Tensor<double> t(std::move(shape));
  for (auto& x : t.data) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.05, 1.0);
  return t;
}

// Scalar loss sum(y . w) with a fixed random w over the last axis, so every
// output element gets a distinct weight.
inline Var project(Graph<double>& g, Var y, std::uint64_t seed) {
  mpner::Rng rng(seed);
  const std::size_t n = g.value(y).last_dim();
  return g.sum(g.matmul(y, g.constant(random_tensor(rng, {n, 1}))));
}

inline std::vector<Outcome> op_suite(std::uint64_t seed, double tolerance = 1e-4) {
  mpner::Rng rng(seed);
  std::vector<Outcome> out;
  auto check = [&](const std::string& name, Tensor<double>& param, const std::function<Var(Graph<double>&)>& build) {
    out.push_back({name, mpner::ad::finite_diff_check(build, param, tolerance)});
  };
  const std::uint64_t ps = mpner::derive_seed(seed, 99);

  {
    auto a = random_tensor(rng, {3, 4});
    auto b = random_tensor(rng, {4, 5});
    auto bt = random_tensor(rng, {5, 4});
    check("matmul.a", a, [&](Graph<double>& g) { return project(g, g.matmul(g.param(a), g.param(b)), ps); });
    check("matmul.b", b, [&](Graph<double>& g) { return project(g, g.matmul(g.param(a), g.param(b)), ps); });
    check("matmul.transpose_b", bt,
          [&](Graph<double>& g) { return project(g, g.matmul(g.param(a), g.param(bt), true), ps); });
  }
  {
    auto a = random_tensor(rng, {2, 3, 4});
    auto b = random_tensor(rng, {2, 4, 3});
    auto c = random_tensor(rng, {2, 5, 4});
    check("matmul.batched.a", a, [&](Graph<double>& g) { return project(g, g.matmul(g.param(a), g.param(b)), ps); });
    check("matmul.batched.b", b, [&](Graph<double>& g) { return project(g, g.matmul(g.param(a), g.param(b)), ps); });
    check("matmul.batched.transpose_b", c,
          [&](Graph<double>& g) { return project(g, g.matmul(g.param(a), g.param(c), true), ps); });
  }
  {
    auto a = random_tensor(rng, {2, 3, 4});
    auto b = random_tensor(rng, {4});
    check("add.a", a, [&](Graph<double>& g) { return project(g, g.add(g.param(a), g.param(b)), ps); });
    check("add.broadcast", b, [&](Graph<double>& g) { return project(g, g.add(g.param(a), g.param(b)), ps); });
    check("scale", a, [&](Graph<double>& g) { return project(g, g.scale(g.param(a), -1.7), ps); });
  }
  {
    auto x = away_from_zero(rng, {3, 5});
    check("relu", x, [&](Graph<double>& g) { return project(g, g.relu(g.param(x)), ps); });
  }
  {
    auto x = random_tensor(rng, {2, 3, 4}, -2.0, 2.0);
    const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1, 0, 0, 1};
    check("softmax", x, [&](Graph<double>& g) { return project(g, g.softmax(g.param(x)), ps); });
    check("softmax.masked", x, [&](Graph<double>& g) { return project(g, g.softmax(g.param(x), mask), ps); });
    check("logsumexp", x, [&](Graph<double>& g) { return project(g, g.logsumexp(g.param(x)), ps); });
    check("softmax+logsumexp", x, [&](Graph<double>& g) {
      Var s = g.softmax(g.param(x));
      return g.sum(g.logsumexp(g.scale(s, 3.0)));
    });
  }
  {
    auto x = random_tensor(rng, {3, 6}, -2.0, 2.0);
    auto gain = random_tensor(rng, {6}, 0.5, 1.5);
    auto bias = random_tensor(rng, {6});
    auto build = [&](Graph<double>& g) {
      return project(g, g.layer_norm(g.param(x), g.param(gain), g.param(bias)), ps);
    };
    check("layer_norm.x", x, build);
    check("layer_norm.gain", gain, build);
    check("layer_norm.bias", bias, build);
  }
  {
    auto a = random_tensor(rng, {3, 2});
    auto b = random_tensor(rng, {3, 4});
    check("concat.a", a, [&](Graph<double>& g) { return project(g, g.concat(g.param(a), g.param(b)), ps); });
    check("concat.b", b, [&](Graph<double>& g) { return project(g, g.concat(g.param(a), g.param(b)), ps); });
  }
  {
    auto table = random_tensor(rng, {5, 3});
    const std::vector<std::size_t> ids = {4, 0, 4, 2};
    check("gather_rows", table, [&](Graph<double>& g) { return project(g, g.gather_rows(g.param(table), ids), ps); });
  }
  {
    mpner::ad::SparseRows<double> rows;
    rows.width = 6;
    rows.add(0, 1.0);
    rows.add(3, 2.0);
    rows.end_row();
    rows.end_row();
    rows.add(5, 1.0);
    rows.add(3, 1.0);
    rows.end_row();
    auto w = random_tensor(rng, {6, 4});
    check("sparse_matmul", w, [&](Graph<double>& g) { return project(g, g.sparse_matmul(rows, g.param(w)), ps); });
  }
  {
    auto x = random_tensor(rng, {2, 3, 4});
    check("reshape", x, [&](Graph<double>& g) { return project(g, g.reshape(g.param(x), Shape{6, 4}), ps); });
    check("split_heads", x, [&](Graph<double>& g) { return project(g, g.split_heads(g.param(x), 2), ps); });
    check("merge_heads", x, [&](Graph<double>& g) {
      return project(g, g.merge_heads(g.reshape(g.param(x), Shape{2, 3, 2, 2})), ps);
    });
    auto scores = random_tensor(rng, {2, 4, 5});
    check("relative_select", scores,
          [&](Graph<double>& g) { return project(g, g.relative_select(g.param(scores), 2), ps); });
    check("sum", x, [&](Graph<double>& g) { return g.sum(g.scale(g.param(x), 0.5)); });
    check("mean", x, [&](Graph<double>& g) { return g.mean(g.param(x)); });
  }
  {
    const std::size_t B = 2, S = 4, K = 5;
    auto em = random_tensor(rng, {B, S, K});
    auto tr = random_tensor(rng, {K, K});
    auto st = random_tensor(rng, {K});
    auto en = random_tensor(rng, {K});
    const std::vector<int> gold = {0, 4, 1, 3, 1, 3, 0, 0};
    const std::vector<std::size_t> lengths = {4, 2};
    auto build = [&](Graph<double>& g) {
      return mpner::crf_nll_node(g, g.param(em), g.param(tr), g.param(st), g.param(en), gold, lengths);
    };
    check("crf_nll.emissions", em, build);
    check("crf_nll.transitions", tr, build);
    check("crf_nll.start", st, build);
    check("crf_nll.end", en, build);
  }
  return out;
}

inline mpner::ModelConfig tiny_config(bool dense) {
  mpner::ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.ff_units = 8;
  c.n_layers = 1;
  c.sparse_proj_dim = 6;
  c.rel_clip = 2;
  c.dropout = 0.0;
  c.vocab_words = 7;
  c.vocab_ngrams = 9;
  c.use_lexical = true;
  c.dense_dim = dense ? 3 : 0;
  return c;
}

// Random padded batch of two sequences (lengths 5 and 3) with gold tags.
struct TinyBatch {
  mpner::EncoderInput<double> input;
  std::vector<int> gold;
};

inline TinyBatch tiny_batch(const mpner::ModelConfig& c, std::uint64_t seed) {
  mpner::Rng rng(seed);
  std::vector<mpner::SequenceFeatures> seqs(2);
  const std::size_t lens[2] = {5, 3};
  for (std::size_t b = 0; b < 2; ++b) {
    auto& s = seqs[b];
    s.dense.dim = c.dense_dim;
    s.dense.length = lens[b];
    for (std::size_t i = 0; i < lens[b]; ++i) {
      mpner::SparseTokenFeatures f;
      if (rng.below(4) != 0) f.word = static_cast<int>(rng.below(c.vocab_words));
      for (std::size_t k = 0; k < c.vocab_ngrams; ++k)
        if (rng.below(3) == 0) f.ngrams.emplace_back(static_cast<int>(k), 1 + static_cast<int>(rng.below(2)));
      for (auto& flag : f.lexical) flag = static_cast<std::uint8_t>(rng.below(2));
      s.sparse.push_back(f);
      for (std::size_t j = 0; j < c.dense_dim; ++j) s.dense.values.push_back(rng.uniform(-1.0, 1.0));
    }
  }
  std::vector<const mpner::SequenceFeatures*> ptrs = {&seqs[0], &seqs[1]};
  TinyBatch tb{mpner::pack_batch<double>(ptrs, c), {}};
  const std::vector<std::vector<int>> tags = {{1, 3, 0, 4, 0}, {4, 1, 3}};
  tb.gold.assign(tb.input.batch * tb.input.length, 0);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < tags[b].size(); ++i) tb.gold[b * tb.input.length + i] = tags[b][i];
  return tb;
}

// One check per parameter tensor of the full loss.
inline std::vector<Outcome> model_suite(std::uint64_t seed, bool dense, double tolerance = 1e-4) {
  const auto config = tiny_config(dense);
  auto params = mpner::init_params<double>(config, seed);
  // Nonzero biases, gains and CRF scores so no gradient path is trivially zero.
  mpner::Rng rng(mpner::derive_seed(seed, 7));
  for (auto& [name, t] : params.named())
    for (auto& x : t->data) x += rng.uniform(-0.2, 0.2);
  const auto batch = tiny_batch(config, mpner::derive_seed(seed, 8));
  std::vector<Outcome> out;
  for (auto& [name, tensor] : params.named()) {
    auto build = [&](Graph<double>& g) {
      const auto bound = mpner::bind_params(g, params);
      return mpner::model_loss(g, bound, batch.input, batch.gold, config);
    };
    out.push_back({"model." + name, mpner::ad::finite_diff_check(build, *tensor, tolerance)});
  }
  return out;
}

}  // namespace gradcheck
