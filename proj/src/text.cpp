#include "mpner/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mpner {

namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(char c) { return kPunctuation.find(c) != std::string_view::npos; }

// Byte offsets of UTF-8 code point starts, plus the end offset.
std::vector<std::size_t> code_point_offsets(std::string_view s) {
  std::vector<std::size_t> offsets;
  offsets.reserve(s.size() + 1);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) offsets.push_back(i);
  }
  offsets.push_back(s.size());
  return offsets;
}

std::size_t code_point_length(std::string_view s) { return code_point_offsets(s).size() - 1; }

constexpr std::array<std::string_view, 24> kNumberWords = {
    "one",     "two",      "three",    "four",    "five",    "six",
    "seven",   "eight",    "nine",     "ten",     "eleven",  "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen", "twenty",  "thirty",   "forty",   "fifty",   "hundred"};

constexpr std::array<std::string_view, 10> kUnitWords = {
    "gallon", "gallons", "bag", "bags", "pound", "pounds", "oz", "pack", "packs", "dozen"};

template <typename Map>
std::vector<std::string> rank_by_frequency(const Map& counts, int min_freq) {
  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [surface, count] : counts)
    if (count >= min_freq) kept.emplace_back(surface, count);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  out.reserve(kept.size());
  for (auto& [surface, count] : kept) out.push_back(std::move(surface));
  return out;
}

std::unordered_map<std::string, int> index_of(const std::vector<std::string>& surfaces) {
  std::unordered_map<std::string, int> index;
  index.reserve(surfaces.size());
  for (std::size_t i = 0; i < surfaces.size(); ++i) index.emplace(surfaces[i], static_cast<int>(i));
  return index;
}

// Decodes a well-formed BILOU run; returns false if ill-formed.
bool decode_strict(const TagSequence& tags, std::size_t begin, std::size_t end,
                   std::vector<EntitySpan>& out) {
  std::size_t i = begin;
  while (i < end) {
    switch (tags[i]) {
      case kOutside:
        ++i;
        break;
      case kUnit:
        out.push_back({static_cast<int>(i), static_cast<int>(i + 1)});
        ++i;
        break;
      case kBegin: {
        std::size_t j = i + 1;
        while (j < end && tags[j] == kInside) ++j;
        if (j >= end || tags[j] != kLast) return false;
        out.push_back({static_cast<int>(i), static_cast<int>(j + 1)});
        i = j + 1;
        break;
      }
      default:
        return false;
    }
  }
  return true;
}

}  // namespace

TokenSequence tokenize(std::string_view text) {
  TokenSequence tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c) || is_punct(ch)) {
      flush();
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return tokens;
}

std::string join_tokens(const TokenSequence& tokens, std::size_t begin, std::size_t end) {
  end = std::min(end, tokens.size());
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::map<std::string, int> char_ngrams(std::string_view token, int n_max) {
  if (n_max < 1) throw std::invalid_argument("n_max must be >= 1");
  std::map<std::string, int> grams;
  const auto offsets = code_point_offsets(token);
  const std::size_t len = offsets.size() - 1;
  for (std::size_t n = 1; n <= std::min<std::size_t>(n_max, len); ++n)
    for (std::size_t i = 0; i + n <= len; ++i)
      ++grams[std::string(token.substr(offsets[i], offsets[i + n] - offsets[i]))];
  return grams;
}

std::optional<int> Vocabulary::word_id(const std::string& w) const {
  auto it = word_index.find(w);
  if (it == word_index.end()) return std::nullopt;
  return it->second;
}

std::optional<int> Vocabulary::ngram_id(const std::string& g) const {
  auto it = ngram_index.find(g);
  if (it == ngram_index.end()) return std::nullopt;
  return it->second;
}

Vocabulary build_vocab(const std::vector<TokenSequence>& corpus, int min_freq, int n_max) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  if (min_freq < 1) throw std::invalid_argument("min_freq must be >= 1");
  std::unordered_map<std::string, long> word_counts;
  std::unordered_map<std::string, long> ngram_counts;
  for (const auto& seq : corpus) {
    for (const auto& tok : seq) {
      ++word_counts[tok];
      for (const auto& [gram, count] : char_ngrams(tok, n_max)) ngram_counts[gram] += count;
    }
  }
  Vocabulary vocab;
  vocab.min_freq = min_freq;
  vocab.n_max = n_max;
  vocab.words = rank_by_frequency(word_counts, min_freq);
  vocab.ngrams = rank_by_frequency(ngram_counts, min_freq);
  vocab.word_index = index_of(vocab.words);
  vocab.ngram_index = index_of(vocab.ngrams);
  return vocab;
}

void save_vocab(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
  out << "# n_max=" << vocab.n_max << " min_freq=" << vocab.min_freq << '\n';
  for (std::size_t i = 0; i < vocab.words.size(); ++i)
    out << "word\t" << vocab.words[i] << '\t' << i << '\n';
  for (std::size_t i = 0; i < vocab.ngrams.size(); ++i)
    out << "ngram\t" << vocab.ngrams[i] << '\t' << i << '\n';
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocabulary: " + path);
  Vocabulary vocab;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream header(line.substr(1));
      std::string field;
      while (header >> field) {
        if (field.rfind("n_max=", 0) == 0) vocab.n_max = std::stoi(field.substr(6));
        if (field.rfind("min_freq=", 0) == 0) vocab.min_freq = std::stoi(field.substr(9));
      }
      continue;
    }
    const auto t1 = line.find('\t');
    const auto t2 = line.rfind('\t');
    if (t1 == std::string::npos || t1 == t2)
      throw std::runtime_error("malformed vocabulary line " + std::to_string(line_no));
    const std::string kind = line.substr(0, t1);
    std::string surface = line.substr(t1 + 1, t2 - t1 - 1);
    const std::size_t id = std::stoul(line.substr(t2 + 1));
    auto& list = kind == "word" ? vocab.words : vocab.ngrams;
    if ((kind != "word" && kind != "ngram") || id != list.size())
      throw std::runtime_error("malformed vocabulary line " + std::to_string(line_no));
    list.push_back(std::move(surface));
  }
  vocab.word_index = index_of(vocab.words);
  vocab.ngram_index = index_of(vocab.ngrams);
  return vocab;
}

bool is_number_word(std::string_view token) {
  return std::find(kNumberWords.begin(), kNumberWords.end(), token) != kNumberWords.end();
}

bool is_unit_word(std::string_view token) {
  return std::find(kUnitWords.begin(), kUnitWords.end(), token) != kUnitWords.end();
}

std::array<std::uint8_t, kLexicalWidth> lexical_flags(std::string_view token) {
  std::array<std::uint8_t, kLexicalWidth> flags{};
  flags[kIsDigit] = !token.empty() && std::all_of(token.begin(), token.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c)) != 0;
  });
  flags[kIsNumberWord] = is_number_word(token);
  flags[kIsUnitWord] = is_unit_word(token);
  const std::size_t len = code_point_length(token);
  flags[kLengthShort] = len <= 3;
  flags[kLengthMedium] = len >= 4 && len <= 6;
  flags[kLengthLong] = len >= 7;
  return flags;
}

std::vector<SparseTokenFeatures> featurize(const TokenSequence& tokens, const Vocabulary& vocab,
                                           bool use_lexical) {
  std::vector<SparseTokenFeatures> out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens) {
    SparseTokenFeatures f;
    f.word = vocab.word_id(tok);
    for (const auto& [gram, count] : char_ngrams(tok, vocab.n_max))
      if (auto id = vocab.ngram_id(gram)) f.ngrams.emplace_back(*id, count);
    std::sort(f.ngrams.begin(), f.ngrams.end());
    if (use_lexical) f.lexical = lexical_flags(tok);
    out.push_back(std::move(f));
  }
  return out;
}

std::size_t sparse_width(const Vocabulary& vocab, bool use_lexical) {
  return vocab.word_count() + vocab.ngram_count() + (use_lexical ? kLexicalWidth : 0);
}

bool spans_valid(const std::vector<EntitySpan>& spans, int length) {
  int prev_end = 0;
  for (const auto& s : spans) {
    if (s.start < prev_end || s.start >= s.end || s.end > length) return false;
    prev_end = s.end;
  }
  return true;
}

TagSequence bilou_encode(const std::vector<EntitySpan>& spans, int length) {
  if (length < 0 || !spans_valid(spans, length)) throw std::invalid_argument("invalid spans");
  TagSequence tags(static_cast<std::size_t>(length), kOutside);
  for (const auto& s : spans) {
    if (s.end - s.start == 1) {
      tags[s.start] = kUnit;
      continue;
    }
    tags[s.start] = kBegin;
    for (int i = s.start + 1; i < s.end - 1; ++i) tags[i] = kInside;
    tags[s.end - 1] = kLast;
  }
  return tags;
}

std::vector<EntitySpan> bilou_decode(const TagSequence& tags, bool strict) {
  for (int t : tags)
    if (t < 0 || t >= kNumTags) throw std::invalid_argument("tag out of range");
  std::vector<EntitySpan> spans;
  if (strict) {
    if (!decode_strict(tags, 0, tags.size(), spans)) throw std::invalid_argument("ill-formed BILOU");
    return spans;
  }
  // Lenient: decode each maximal non-O run on its own; a run that is not
  // well-formed becomes a single span.
  std::size_t i = 0;
  while (i < tags.size()) {
    if (tags[i] == kOutside) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < tags.size() && tags[j] != kOutside) ++j;
    std::vector<EntitySpan> run;
    if (decode_strict(tags, i, j, run)) {
      spans.insert(spans.end(), run.begin(), run.end());
    } else {
      spans.push_back({static_cast<int>(i), static_cast<int>(j)});
    }
    i = j;
  }
  return spans;
}

}  // namespace mpner
