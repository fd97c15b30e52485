#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mpner/text.hpp"

namespace mpner {

// n x dim row-major; all values finite.
struct DenseSequence {
  std::size_t dim = 0;
  std::size_t length = 0;
  std::vector<double> values;

  const double* row(std::size_t i) const { return values.data() + i * dim; }
};

/// Deterministic stand-in for a pre-trained token embedding.
///
/// Component i starts as a uniform value in [-1, 1] taken from the top 53
/// bits of splitmix64(fnv1a64(token) ^ splitmix64(seed) ^ (i * 0x9e3779b97f4a7c15)),
/// then the whole vector is scaled to unit Euclidean norm.
std::vector<double> hash_embed(std::string_view token, std::size_t dim, std::uint64_t seed);

std::uint64_t fnv1a64(std::string_view bytes);

enum class ProviderKind { kHash, kFile };

class EmbeddingProvider {
 public:
  static EmbeddingProvider hash(std::size_t dim, std::uint64_t seed);
  // Token, then space-separated decimal floats, one row per line.
  static EmbeddingProvider from_file(const std::string& path);
  static EmbeddingProvider from_text(std::string_view contents);

  ProviderKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t table_size() const { return table_.size(); }

  // Zero vector for tokens absent from a file table.
  std::vector<double> lookup(const std::string& token) const;

 private:
  EmbeddingProvider(ProviderKind kind, std::size_t dim, std::uint64_t seed)
      : kind_(kind), dim_(dim), seed_(seed) {}

  ProviderKind kind_;
  std::size_t dim_;
  std::uint64_t seed_;
  std::unordered_map<std::string, std::vector<double>> table_;
};

EmbeddingProvider load_embeddings(const std::string& path);

DenseSequence embed_sequence(const EmbeddingProvider& provider, const TokenSequence& tokens);

}  // namespace mpner
