#include "mpner/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mpner/crf.hpp"
#include "mpner/rng.hpp"

namespace mpner {

using ad::Shape;
using ad::Tensor;
using ad::Var;

void ModelConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || ff_units < 1 || sparse_proj_dim < 1 || n_tags < 1)
    throw std::invalid_argument("model dimensions must be >= 1");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                                std::to_string(n_heads) + ")");
  if (n_layers < 1 || n_layers > kMaxLayers)
    throw std::invalid_argument("n_layers must be between 1 and " + std::to_string(kMaxLayers) +
                                " (stacked layer cap), got " + std::to_string(n_layers));
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
}

namespace {

template <typename Params, typename Ptr>
std::vector<std::pair<std::string, Ptr>> collect(Params& p) {
  std::vector<std::pair<std::string, Ptr>> out = {
      {"sparse.weight", &p.sparse_weight},
      {"sparse.bias", &p.sparse_bias},
      {"fuse.weight", &p.fuse_weight},
      {"fuse.bias", &p.fuse_bias},
  };
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "layer" + std::to_string(i) + ".";
    out.insert(out.end(), {{pre + "ln1.gain", &l.ln1_gain},
                           {pre + "ln1.bias", &l.ln1_bias},
                           {pre + "attn.query", &l.query},
                           {pre + "attn.key", &l.key},
                           {pre + "attn.value", &l.value},
                           {pre + "attn.output", &l.output},
                           {pre + "attn.relative", &l.relative},
                           {pre + "ln2.gain", &l.ln2_gain},
                           {pre + "ln2.bias", &l.ln2_bias},
                           {pre + "ffn.in.weight", &l.ff1_weight},
                           {pre + "ffn.in.bias", &l.ff1_bias},
                           {pre + "ffn.out.weight", &l.ff2_weight},
                           {pre + "ffn.out.bias", &l.ff2_bias}});
  }
  out.insert(out.end(), {{"emit.weight", &p.emit_weight},
                         {"emit.bias", &p.emit_bias},
                         {"crf.transitions", &p.transitions},
                         {"crf.start", &p.start},
                         {"crf.end", &p.end}});
  return out;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> ModelParams<T>::named() {
  return collect<ModelParams<T>, Tensor<T>*>(*this);
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> ModelParams<T>::named() const {
  return collect<const ModelParams<T>, const Tensor<T>*>(*this);
}

std::vector<std::pair<std::string, Shape>> expected_shapes(const ModelConfig& c) {
  const std::size_t d = c.d_model, P = c.sparse_proj_dim, K = c.n_tags;
  std::vector<std::pair<std::string, Shape>> out = {
      {"sparse.weight", {c.sparse_input_dim(), P}},
      {"sparse.bias", {P}},
      {"fuse.weight", {P + c.dense_dim, d}},
      {"fuse.bias", {d}},
  };
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const std::string pre = "layer" + std::to_string(i) + ".";
    out.insert(out.end(), {{pre + "ln1.gain", {d}},
                           {pre + "ln1.bias", {d}},
                           {pre + "attn.query", {d, d}},
                           {pre + "attn.key", {d, d}},
                           {pre + "attn.value", {d, d}},
                           {pre + "attn.output", {d, d}},
                           {pre + "attn.relative", {2 * c.rel_clip + 1, c.head_dim()}},
                           {pre + "ln2.gain", {d}},
                           {pre + "ln2.bias", {d}},
                           {pre + "ffn.in.weight", {d, c.ff_units}},
                           {pre + "ffn.in.bias", {c.ff_units}},
                           {pre + "ffn.out.weight", {c.ff_units, d}},
                           {pre + "ffn.out.bias", {d}}});
  }
  out.insert(out.end(), {{"emit.weight", {d, K}},
                         {"emit.bias", {K}},
                         {"crf.transitions", {K, K}},
                         {"crf.start", {K}},
                         {"crf.end", {K}}});
  return out;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams<T> params;
  params.config = config;
  params.layers.resize(config.n_layers);
  const auto shapes = expected_shapes(config);
  auto named = params.named();
  Rng rng(seed);
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& [name, tensor] = named[i];
    const Shape& shape = shapes[i].second;
    *tensor = Tensor<T>(shape);
    if (ends_with(name, ".gain")) {
      std::fill(tensor->data.begin(), tensor->data.end(), T(1));
    } else if (ends_with(name, ".relative")) {
      for (auto& x : tensor->data) x = static_cast<T>(rng.uniform(-0.1, 0.1));
    } else if (shape.size() == 2 && name.rfind("crf.", 0) != 0) {
      const double limit = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(shape[0], 1)));
      for (auto& x : tensor->data) x = static_cast<T>(rng.uniform(-limit, limit));
    }
  }
  return params;
}

template <typename U, typename T>
ModelParams<U> cast_params(const ModelParams<T>& params) {
  ModelParams<U> out;
  out.config = params.config;
  out.layers.resize(params.layers.size());
  auto dst = out.named();
  const auto src = params.named();
  for (std::size_t i = 0; i < src.size(); ++i) {
    *dst[i].second = Tensor<U>(src[i].second->shape);
    std::transform(src[i].second->data.begin(), src[i].second->data.end(), dst[i].second->data.begin(),
                   [](T x) { return static_cast<U>(x); });
  }
  return out;
}

SequenceFeatures extract_features(const TokenSequence& tokens, const Vocabulary& vocab, bool use_lexical,
                                  const EmbeddingProvider* provider) {
  SequenceFeatures f;
  f.sparse = featurize(tokens, vocab, use_lexical);
  if (provider) {
    f.dense = embed_sequence(*provider, tokens);
  } else {
    f.dense.length = tokens.size();
  }
  return f;
}

template <typename T>
EncoderInput<T> pack_batch(std::span<const SequenceFeatures* const> sequences, const ModelConfig& config,
                           std::size_t min_length) {
  EncoderInput<T> in;
  in.batch = sequences.size();
  in.length = min_length;
  for (const auto* s : sequences) in.length = std::max(in.length, s->size());
  in.sparse.width = config.sparse_input_dim();
  in.mask.assign(in.batch * in.length, 0);
  in.dense.assign(in.batch * in.length * config.dense_dim, T(0));
  const std::size_t ngram_offset = config.vocab_words;
  const std::size_t lexical_offset = config.vocab_words + config.vocab_ngrams;
  for (std::size_t b = 0; b < in.batch; ++b) {
    const SequenceFeatures& seq = *sequences[b];
    if (config.dense_dim > 0 && seq.size() > 0 && seq.dense.dim != config.dense_dim)
      throw std::invalid_argument("dense width " + std::to_string(seq.dense.dim) + " does not match model dense_dim " +
                                  std::to_string(config.dense_dim));
    in.lengths.push_back(seq.size());
    for (std::size_t i = 0; i < in.length; ++i) {
      if (i < seq.size()) {
        in.mask[b * in.length + i] = 1;
        const SparseTokenFeatures& tok = seq.sparse[i];
        if (tok.word) {
          if (static_cast<std::size_t>(*tok.word) >= config.vocab_words)
            throw std::invalid_argument("word id outside model vocabulary");
          in.sparse.add(static_cast<std::size_t>(*tok.word), T(1));
        }
        for (auto [id, count] : tok.ngrams) {
          if (static_cast<std::size_t>(id) >= config.vocab_ngrams)
            throw std::invalid_argument("n-gram id outside model vocabulary");
          in.sparse.add(ngram_offset + static_cast<std::size_t>(id), static_cast<T>(count));
        }
        if (config.use_lexical)
          for (std::size_t f = 0; f < kLexicalWidth; ++f)
            if (tok.lexical[f]) in.sparse.add(lexical_offset + f, T(1));
        for (std::size_t j = 0; j < config.dense_dim; ++j)
          in.dense[(b * in.length + i) * config.dense_dim + j] = static_cast<T>(seq.dense.values[i * seq.dense.dim + j]);
      }
      in.sparse.end_row();
    }
  }
  return in;
}

template <typename T>
BoundParams bind_params(ad::Graph<T>& g, const ModelParams<T>& p) {
  BoundParams b;
  b.sparse_weight = g.param(p.sparse_weight);
  b.sparse_bias = g.param(p.sparse_bias);
  b.fuse_weight = g.param(p.fuse_weight);
  b.fuse_bias = g.param(p.fuse_bias);
  for (const auto& l : p.layers) {
    BoundLayer bl;
    bl.ln1_gain = g.param(l.ln1_gain);
    bl.ln1_bias = g.param(l.ln1_bias);
    bl.query = g.param(l.query);
    bl.key = g.param(l.key);
    bl.value = g.param(l.value);
    bl.output = g.param(l.output);
    bl.relative = g.param(l.relative);
    bl.ln2_gain = g.param(l.ln2_gain);
    bl.ln2_bias = g.param(l.ln2_bias);
    bl.ff1_weight = g.param(l.ff1_weight);
    bl.ff1_bias = g.param(l.ff1_bias);
    bl.ff2_weight = g.param(l.ff2_weight);
    bl.ff2_bias = g.param(l.ff2_bias);
    b.layers.push_back(bl);
  }
  b.emit_weight = g.param(p.emit_weight);
  b.emit_bias = g.param(p.emit_bias);
  b.transitions = g.param(p.transitions);
  b.start = g.param(p.start);
  b.end = g.param(p.end);
  return b;
}

template <typename T>
Var sparse_projection(ad::Graph<T>& g, const BoundParams& bound, const ad::SparseRows<T>& rows) {
  return g.relu(g.add(g.sparse_matmul(rows, bound.sparse_weight), bound.sparse_bias));
}

template <typename T>
Var fuse(ad::Graph<T>& g, const BoundParams& bound, Var sparse_out, std::optional<Var> dense) {
  Var joined = sparse_out;
  if (dense) {
    if (g.value(*dense).shape.at(0) != g.value(sparse_out).shape.at(0))
      throw std::invalid_argument("fuse: sparse rows " + ad::shape_str(g.value(sparse_out).shape) +
                                  " vs dense rows " + ad::shape_str(g.value(*dense).shape));
    joined = g.concat(sparse_out, *dense);
  }
  return g.add(g.matmul(joined, bound.fuse_weight), bound.fuse_bias);
}

std::size_t relative_index(std::size_t query, std::size_t key, std::size_t clip) {
  const auto c = static_cast<std::ptrdiff_t>(clip);
  const std::ptrdiff_t rel = static_cast<std::ptrdiff_t>(key) - static_cast<std::ptrdiff_t>(query);
  return static_cast<std::size_t>(std::clamp(rel, -c, c) + c);
}

template <typename T>
Var relative_attention(ad::Graph<T>& g, const BoundLayer& layer, Var x, std::span<const std::uint8_t> key_mask,
                       const ModelConfig& config, Var* weights_out) {
  const std::size_t heads = config.n_heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(config.head_dim())));
  Var q = g.split_heads(g.matmul(x, layer.query), heads);
  Var k = g.split_heads(g.matmul(x, layer.key), heads);
  Var v = g.split_heads(g.matmul(x, layer.value), heads);
  Var content = g.matmul(q, k, /*transpose_b=*/true);
  Var relative = g.relative_select(g.matmul(q, layer.relative, /*transpose_b=*/true), config.rel_clip);
  Var logits = g.scale(g.add(content, relative), inv_sqrt);
  Var weights = g.softmax(logits, key_mask);
  if (weights_out) *weights_out = weights;
  Var context = g.matmul(g.dropout(weights, config.dropout), v);
  return g.matmul(g.merge_heads(context), layer.output);
}

template <typename T>
Var encoder_layer(ad::Graph<T>& g, const BoundLayer& layer, Var x, std::span<const std::uint8_t> key_mask,
                  const ModelConfig& config) {
  Var attended = relative_attention(g, layer, g.layer_norm(x, layer.ln1_gain, layer.ln1_bias), key_mask, config);
  x = g.add(x, g.dropout(attended, config.dropout));
  Var h = g.layer_norm(x, layer.ln2_gain, layer.ln2_bias);
  Var ff = g.add(g.matmul(g.relu(g.add(g.matmul(h, layer.ff1_weight), layer.ff1_bias)), layer.ff2_weight),
                 layer.ff2_bias);
  return g.add(x, g.dropout(ff, config.dropout));
}

template <typename T>
Encoded encode(ad::Graph<T>& g, const BoundParams& bound, const EncoderInput<T>& input, const ModelConfig& config) {
  const std::size_t rows = input.batch * input.length;
  Var sparse_out = sparse_projection(g, bound, input.sparse);
  std::optional<Var> dense;
  if (config.dense_dim > 0) dense = g.constant(Tensor<T>(Shape{rows, config.dense_dim}, input.dense));
  Var x = g.reshape(fuse(g, bound, sparse_out, dense), Shape{input.batch, input.length, config.d_model});
  for (const auto& layer : bound.layers) x = encoder_layer(g, layer, x, input.mask, config);
  Var emissions = g.add(g.matmul(x, bound.emit_weight), bound.emit_bias);
  return {x, emissions};
}

template <typename T>
Var model_loss(ad::Graph<T>& g, const BoundParams& bound, const EncoderInput<T>& input, std::span<const int> gold,
               const ModelConfig& config) {
  const Encoded enc = encode(g, bound, input, config);
  return crf_nll_node(g, enc.emissions, bound.transitions, bound.start, bound.end, gold, input.lengths);
}

template <typename T>
std::vector<TagSequence> predict_tags(const ModelParams<T>& params, const EncoderInput<T>& input, bool constrained) {
  std::vector<TagSequence> out(input.batch);
  if (input.batch == 0 || input.length == 0) return out;
  ad::Graph<T> g(/*training=*/false);
  const BoundParams bound = bind_params(g, params);
  const Encoded enc = encode(g, bound, input, params.config);
  const auto& em = g.value(enc.emissions);
  const std::size_t K = params.config.n_tags;
  const ConstraintMask mask = bilou_constraints(K);
  for (std::size_t b = 0; b < input.batch; ++b) {
    const std::size_t n = input.lengths[b];
    if (n == 0) continue;
    out[b] = viterbi_decode(em.data.data() + b * input.length * K, n, K, params.transitions.data.data(),
                            params.start.data.data(), params.end.data.data(), constrained ? &mask : nullptr)
                 .tags;
  }
  return out;
}

#define MPNER_INSTANTIATE(T)                                                                                    \
  template struct ModelParams<T>;                                                                               \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                                    \
  template EncoderInput<T> pack_batch<T>(std::span<const SequenceFeatures* const>, const ModelConfig&,         \
                                         std::size_t);                                                         \
  template BoundParams bind_params<T>(ad::Graph<T>&, const ModelParams<T>&);                                    \
  template Var sparse_projection<T>(ad::Graph<T>&, const BoundParams&, const ad::SparseRows<T>&);               \
  template Var fuse<T>(ad::Graph<T>&, const BoundParams&, Var, std::optional<Var>);                             \
  template Var relative_attention<T>(ad::Graph<T>&, const BoundLayer&, Var, std::span<const std::uint8_t>,      \
                                     const ModelConfig&, Var*);                                                 \
  template Var encoder_layer<T>(ad::Graph<T>&, const BoundLayer&, Var, std::span<const std::uint8_t>,           \
                                const ModelConfig&);                                                            \
  template Encoded encode<T>(ad::Graph<T>&, const BoundParams&, const EncoderInput<T>&, const ModelConfig&);    \
  template Var model_loss<T>(ad::Graph<T>&, const BoundParams&, const EncoderInput<T>&, std::span<const int>,   \
                             const ModelConfig&);                                                               \
  template std::vector<TagSequence> predict_tags<T>(const ModelParams<T>&, const EncoderInput<T>&, bool);

MPNER_INSTANTIATE(float)
MPNER_INSTANTIATE(double)
#undef MPNER_INSTANTIATE

template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);
template ModelParams<double> cast_params<double, double>(const ModelParams<double>&);

}  // namespace mpner
