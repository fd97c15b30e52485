#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mpner {

// Characters that never survive tokenization.
inline constexpr std::string_view kPunctuation = ",.;:!?";

using TokenSequence = std::vector<std::string>;

struct EntitySpan {
  int start = 0;  // inclusive token index
  int end = 0;    // exclusive token index
  std::string label = "product";

  friend bool operator==(const EntitySpan&, const EntitySpan&) = default;
  friend auto operator<=>(const EntitySpan&, const EntitySpan&) = default;
};

// BILOU tag ids for the single "product" entity type.
enum Tag : int { kOutside = 0, kBegin = 1, kInside = 2, kLast = 3, kUnit = 4 };
inline constexpr int kNumTags = 5;
inline constexpr std::array<std::string_view, kNumTags> kTagNames = {
    "O", "B-product", "I-product", "L-product", "U-product"};

using TagSequence = std::vector<int>;

TokenSequence tokenize(std::string_view text);
std::string join_tokens(const TokenSequence& tokens, std::size_t begin = 0,
                        std::size_t end = static_cast<std::size_t>(-1));

// Character n-grams of length 1..n_max with multiplicity. Lengths count
// UTF-8 code points.
std::map<std::string, int> char_ngrams(std::string_view token, int n_max);

struct Vocabulary {
  std::unordered_map<std::string, int> word_index;
  std::unordered_map<std::string, int> ngram_index;
  std::vector<std::string> words;   // id -> surface
  std::vector<std::string> ngrams;  // id -> surface
  int min_freq = 1;
  int n_max = 4;

  std::size_t word_count() const { return words.size(); }
  std::size_t ngram_count() const { return ngrams.size(); }
  std::optional<int> word_id(const std::string& w) const;
  std::optional<int> ngram_id(const std::string& g) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words == b.words && a.ngrams == b.ngrams && a.min_freq == b.min_freq &&
           a.n_max == b.n_max;
  }
};

Vocabulary build_vocab(const std::vector<TokenSequence>& corpus, int min_freq, int n_max = 4);

// Tab-separated "kind surface id" lines, words first, each kind sorted by id.
// A leading comment line records n_max and min_freq.
void save_vocab(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocab(const std::string& path);

inline constexpr int kLexicalWidth = 6;
enum LexicalFlag : int {
  kIsDigit = 0,
  kIsNumberWord = 1,
  kIsUnitWord = 2,
  kLengthShort = 3,   // <= 3 code points
  kLengthMedium = 4,  // 4..6
  kLengthLong = 5,    // >= 7
};
std::array<std::uint8_t, kLexicalWidth> lexical_flags(std::string_view token);
bool is_number_word(std::string_view token);
bool is_unit_word(std::string_view token);

struct SparseTokenFeatures {
  std::optional<int> word;                       // one-hot, value 1
  std::vector<std::pair<int, int>> ngrams;       // (ngram id, count), sorted by id
  std::array<std::uint8_t, kLexicalWidth> lexical{};
};

std::vector<SparseTokenFeatures> featurize(const TokenSequence& tokens, const Vocabulary& vocab,
                                           bool use_lexical);

// Width of the flattened sparse input: words, then n-grams, then lexical flags.
std::size_t sparse_width(const Vocabulary& vocab, bool use_lexical);

TagSequence bilou_encode(const std::vector<EntitySpan>& spans, int length);
std::vector<EntitySpan> bilou_decode(const TagSequence& tags, bool strict);

bool spans_valid(const std::vector<EntitySpan>& spans, int length);

}  // namespace mpner
