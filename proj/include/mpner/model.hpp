#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mpner/autodiff.hpp"
#include "mpner/embed.hpp"
#include "mpner/text.hpp"

namespace mpner {

inline constexpr std::size_t kMaxLayers = 6;

struct ModelConfig {
  std::size_t d_model = 256;
  std::size_t n_heads = 4;
  std::size_t ff_units = 256;
  std::size_t n_layers = 2;
  std::size_t sparse_proj_dim = 128;
  std::size_t rel_clip = 5;
  double dropout = 0.1;
  std::size_t n_tags = kNumTags;
  // Input widths, fixed once the vocabulary and provider are known.
  std::size_t vocab_words = 0;
  std::size_t vocab_ngrams = 0;
  bool use_lexical = false;
  std::size_t dense_dim = 0;

  std::size_t sparse_input_dim() const {
    return vocab_words + vocab_ngrams + (use_lexical ? kLexicalWidth : 0);
  }
  std::size_t head_dim() const { return d_model / n_heads; }
  void validate() const;
};

template <typename T>
struct LayerParams {
  ad::Tensor<T> ln1_gain, ln1_bias;
  ad::Tensor<T> query, key, value, output;  // d_model x d_model; head h owns columns [h*D, (h+1)*D)
  ad::Tensor<T> relative;                   // (2*rel_clip+1) x head_dim, shared by heads
  ad::Tensor<T> ln2_gain, ln2_bias;
  ad::Tensor<T> ff1_weight, ff1_bias, ff2_weight, ff2_bias;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  ad::Tensor<T> sparse_weight, sparse_bias;
  ad::Tensor<T> fuse_weight, fuse_bias;
  std::vector<LayerParams<T>> layers;
  ad::Tensor<T> emit_weight, emit_bias;
  ad::Tensor<T> transitions, start, end;

  // Every tensor with its checkpoint name, in a fixed order.
  std::vector<std::pair<std::string, ad::Tensor<T>*>> named();
  std::vector<std::pair<std::string, const ad::Tensor<T>*>> named() const;
};

std::vector<std::pair<std::string, ad::Shape>> expected_shapes(const ModelConfig& config);

// Weight matrices: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn in named()
// order from Rng(seed); relative tables uniform(-0.1, 0.1); layer-norm gains
// one; biases and CRF scores zero.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

template <typename U, typename T>
ModelParams<U> cast_params(const ModelParams<T>& params);

// Per-token inputs for one sequence.
struct SequenceFeatures {
  std::vector<SparseTokenFeatures> sparse;
  DenseSequence dense;
  std::size_t size() const { return sparse.size(); }
};

SequenceFeatures extract_features(const TokenSequence& tokens, const Vocabulary& vocab, bool use_lexical,
                                  const EmbeddingProvider* provider);

// Padded batch. mask[b * length + i] is 1 for real tokens.
template <typename T>
struct EncoderInput {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> lengths;
  ad::SparseRows<T> sparse;  // batch * length rows
  std::vector<T> dense;      // batch * length * dense_dim
};

template <typename T>
EncoderInput<T> pack_batch(std::span<const SequenceFeatures* const> sequences, const ModelConfig& config,
                           std::size_t min_length = 0);

struct BoundLayer {
  ad::Var ln1_gain, ln1_bias, query, key, value, output, relative, ln2_gain, ln2_bias;
  ad::Var ff1_weight, ff1_bias, ff2_weight, ff2_bias;
};

struct BoundParams {
  ad::Var sparse_weight, sparse_bias, fuse_weight, fuse_bias;
  std::vector<BoundLayer> layers;
  ad::Var emit_weight, emit_bias, transitions, start, end;
};

template <typename T>
BoundParams bind_params(ad::Graph<T>& graph, const ModelParams<T>& params);

// Shared per-token affine map + relu over the flattened sparse input: [N, sparse_proj_dim].
template <typename T>
ad::Var sparse_projection(ad::Graph<T>& graph, const BoundParams& bound, const ad::SparseRows<T>& rows);

// Concatenate sparse output with dense vectors ([N, dense_dim], may be absent
// when dense_dim is 0) and project to d_model.
template <typename T>
ad::Var fuse(ad::Graph<T>& graph, const BoundParams& bound, ad::Var sparse_out, std::optional<ad::Var> dense);

// Index into a layer's relative table for query i and key j.
std::size_t relative_index(std::size_t query, std::size_t key, std::size_t clip);

/// Multi-head self-attention over x [B, S, d_model] with relative-key terms.
///
/// logits[h][i][j] = (q_i . k_j + q_i . r[clip(j - i)]) / sqrt(head_dim). Keys
/// with key_mask == 0 get zero weight. If `weights_out` is given it receives
/// the attention weights node, shape [B, H, S, S].
template <typename T>
ad::Var relative_attention(ad::Graph<T>& graph, const BoundLayer& layer, ad::Var x,
                           std::span<const std::uint8_t> key_mask, const ModelConfig& config,
                           ad::Var* weights_out = nullptr);

// Pre-norm block: x + drop(attn(LN(x))), then + drop(FFN(LN(.))).
template <typename T>
ad::Var encoder_layer(ad::Graph<T>& graph, const BoundLayer& layer, ad::Var x,
                      std::span<const std::uint8_t> key_mask, const ModelConfig& config);

struct Encoded {
  ad::Var encoded;    // [B, S, d_model]
  ad::Var emissions;  // [B, S, n_tags]
};

template <typename T>
Encoded encode(ad::Graph<T>& graph, const BoundParams& bound, const EncoderInput<T>& input,
                  const ModelConfig& config);

// Batch-mean CRF negative log-likelihood of gold tags (B * length ids).
template <typename T>
ad::Var model_loss(ad::Graph<T>& graph, const BoundParams& bound, const EncoderInput<T>& input,
                   std::span<const int> gold, const ModelConfig& config);

// Eval-mode Viterbi decode of each sequence in the batch.
template <typename T>
std::vector<TagSequence> predict_tags(const ModelParams<T>& params, const EncoderInput<T>& input,
                                      bool constrained);

}  // namespace mpner
