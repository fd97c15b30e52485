#include "mpner/embed.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mpner/rng.hpp"

namespace mpner {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<double> hash_embed(std::string_view token, std::size_t dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("embedding dim must be >= 1");
  const std::uint64_t base = fnv1a64(token) ^ splitmix64(seed);
  std::vector<double> v(dim);
  double norm2 = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const std::uint64_t h = splitmix64(base ^ (static_cast<std::uint64_t>(i) * 0x9e3779b97f4a7c15ULL));
    v[i] = static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    norm2 += v[i] * v[i];
  }
  const double norm = std::sqrt(norm2);
  if (norm > 0.0)
    for (auto& x : v) x /= norm;
  return v;
}

EmbeddingProvider EmbeddingProvider::hash(std::size_t dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("embedding dim must be >= 1");
  return EmbeddingProvider(ProviderKind::kHash, dim, seed);
}

EmbeddingProvider EmbeddingProvider::from_text(std::string_view contents) {
  EmbeddingProvider provider(ProviderKind::kFile, 0, 0);
  std::istringstream in{std::string(contents)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(' ') == std::string::npos) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos || space == 0)
      throw std::invalid_argument("malformed embedding row line " + std::to_string(line_no));
    std::string token = line.substr(0, space);
    std::vector<double> row;
    const char* p = line.data() + space;
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double x = 0.0;
      auto [next, ec] = std::from_chars(p, end, x);
      if (ec != std::errc() || !std::isfinite(x))
        throw std::invalid_argument("bad number line " + std::to_string(line_no));
      row.push_back(x);
      p = next;
    }
    if (row.empty()) throw std::invalid_argument("empty vector line " + std::to_string(line_no));
    if (provider.dim_ == 0) provider.dim_ = row.size();
    if (row.size() != provider.dim_)
      throw std::invalid_argument("dim mismatch line " + std::to_string(line_no));
    provider.table_[std::move(token)] = std::move(row);
  }
  if (provider.table_.empty()) throw std::invalid_argument("empty embedding file");
  return provider;
}

EmbeddingProvider EmbeddingProvider::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read embeddings: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

EmbeddingProvider load_embeddings(const std::string& path) { return EmbeddingProvider::from_file(path); }

std::vector<double> EmbeddingProvider::lookup(const std::string& token) const {
  if (kind_ == ProviderKind::kHash) return hash_embed(token, dim_, seed_);
  auto it = table_.find(token);
  if (it == table_.end()) return std::vector<double>(dim_, 0.0);
  return it->second;
}

DenseSequence embed_sequence(const EmbeddingProvider& provider, const TokenSequence& tokens) {
  DenseSequence seq;
  seq.dim = provider.dim();
  seq.length = tokens.size();
  seq.values.reserve(seq.dim * seq.length);
  for (const auto& tok : tokens) {
    const auto v = provider.lookup(tok);
    seq.values.insert(seq.values.end(), v.begin(), v.end());
  }
  return seq;
}

}  // namespace mpner
