#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <stdexcept>

#include "mpner/text.hpp"
#include "oracles.hpp"

using namespace mpner;

namespace {

const TokenSequence kExampleTokens = {"add",  "seven",     "apples", "one",   "gallon", "of",
                                      "milk", "two",       "bags",   "of",    "sunflower", "seeds",
                                      "fresh", "garlic",   "disposable", "wipes"};

// Substring multiset of an ASCII token, counted directly.
std::map<std::string, int> substrings(const std::string& s, int n_max) {
  std::map<std::string, int> out;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (int n = 1; n <= n_max && i + n <= s.size(); ++n) ++out[s.substr(i, n)];
  return out;
}

}  // namespace

TEST_CASE("tokenize lowercases and splits on whitespace and punctuation") {
  CHECK(tokenize("add seven apples one gallon of milk") ==
        TokenSequence{"add", "seven", "apples", "one", "gallon", "of", "milk"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("  Milk  ") == TokenSequence{"milk"});
  CHECK(tokenize("Milk, eggs; BREAD!") == TokenSequence{"milk", "eggs", "bread"});
  CHECK(tokenize(" \t\n ,.;:!? ").empty());
}

TEST_CASE("tokenize is idempotent on its joined output") {
  Rng rng(5);
  const std::string alphabet = "abcXYZ  ,.!?\t";
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    const auto len = rng.below(40);
    for (std::uint64_t i = 0; i < len; ++i) text.push_back(alphabet[rng.below(alphabet.size())]);
    const auto once = tokenize(text);
    CHECK(tokenize(join_tokens(once)) == once);
    for (const auto& tok : once) {
      CHECK(!tok.empty());
      CHECK(tok.find_first_of(std::string(kPunctuation) + " \t\n") == std::string::npos);
    }
  }
}

TEST_CASE("char_ngrams") {
  const auto milk = char_ngrams("milk", 4);
  CHECK(milk.size() == 10);
  for (const char* g : {"m", "i", "l", "k", "mi", "il", "lk", "mil", "ilk", "milk"}) CHECK(milk.at(g) == 1);
  CHECK(char_ngrams("a", 4) == std::map<std::string, int>{{"a", 1}});
  CHECK(char_ngrams("aa", 2) == std::map<std::string, int>{{"a", 2}, {"aa", 1}});
  CHECK_THROWS_AS(char_ngrams("a", 0), std::invalid_argument);

  for (const std::string tok : {"banana", "mississippi", "x", "sunflower"})
    for (int n = 1; n <= 5; ++n) CHECK(char_ngrams(tok, n) == substrings(tok, n));
}

TEST_CASE("char_ngrams count code points, not bytes") {
  const auto g = char_ngrams("caf\xc3\xa9", 4);  // 4 code points
  CHECK(g.at("caf\xc3\xa9") == 1);
  CHECK(g.at("\xc3\xa9") == 1);
  CHECK(g.size() == 10);
}

TEST_CASE("build_vocab thresholds and ordering") {
  auto v = build_vocab({{"milk"}, {"milk"}, {"apples"}}, 2, 4);
  CHECK(v.words == std::vector<std::string>{"milk"});
  CHECK(v.word_id("milk") == 0);
  CHECK(!v.word_id("apples"));

  v = build_vocab({{"a"}}, 1, 4);
  CHECK(v.words == std::vector<std::string>{"a"});
  CHECK(v.ngrams == std::vector<std::string>{"a"});

  v = build_vocab({{"ab", "aa"}, {"ab", "aa"}}, 1, 1);
  CHECK(v.word_id("aa") == 0);
  CHECK(v.word_id("ab") == 1);

  CHECK_THROWS_WITH_AS(build_vocab({}, 1, 4), "empty corpus", std::invalid_argument);
}

TEST_CASE("build_vocab ignores corpus order") {
  std::vector<TokenSequence> corpus = {{"add", "milk"}, {"two", "bags", "of", "apples"}, {"milk", "and", "eggs"}};
  const auto base = build_vocab(corpus, 1, 4);
  Rng rng(9);
  for (int i = 0; i < 10; ++i) {
    rng.shuffle(corpus);
    for (auto& seq : corpus) rng.shuffle(seq);
    CHECK(build_vocab(corpus, 1, 4) == base);
  }
}

TEST_CASE("vocabulary save and load round-trip") {
  const auto v = build_vocab({kExampleTokens}, 1, 3);
  const auto path = (std::filesystem::temp_directory_path() / "mpner_vocab_test.txt").string();
  save_vocab(v, path);
  const auto back = load_vocab(path);
  CHECK(back == v);
  CHECK(back.word_id("milk") == v.word_id("milk"));
  std::filesystem::remove(path);
}

TEST_CASE("featurize") {
  const auto v = build_vocab({{"milk", "seven"}}, 1, 4);
  auto f = featurize({"milk"}, v, false);
  REQUIRE(f.size() == 1);
  CHECK(f[0].word == v.word_id("milk"));

  f = featurize({"zzz"}, v, true);
  CHECK(!f[0].word);
  CHECK(f[0].ngrams.empty());

  f = featurize({"seven"}, v, true);
  CHECK(f[0].lexical[kIsNumberWord] == 1);
  CHECK(f[0].lexical[kIsUnitWord] == 0);
  CHECK(f[0].lexical[kLengthMedium] == 1);

  f = featurize({"seven"}, v, false);
  CHECK(std::all_of(f[0].lexical.begin(), f[0].lexical.end(), [](auto x) { return x == 0; }));
}

TEST_CASE("featurize n-gram counts match direct substring counts restricted to the vocabulary") {
  const auto v = build_vocab({{"banana", "nab", "milk"}}, 1, 3);
  for (const std::string tok : {"banana", "bandana", "kiln", "zzz"}) {
    const auto f = featurize({tok}, v, false);
    std::map<int, int> expected;
    for (const auto& [g, c] : substrings(tok, 3))
      if (auto id = v.ngram_id(g)) expected[*id] = c;
    std::map<int, int> got(f[0].ngrams.begin(), f[0].ngrams.end());
    CHECK(got == expected);
    CHECK(std::is_sorted(f[0].ngrams.begin(), f[0].ngrams.end()));
  }
}

TEST_CASE("lexical flags") {
  CHECK(lexical_flags("42")[kIsDigit] == 1);
  CHECK(lexical_flags("4a")[kIsDigit] == 0);
  CHECK(is_number_word("hundred"));
  CHECK(!is_number_word("thousand"));
  CHECK(is_unit_word("gallon"));
  CHECK(is_unit_word("dozen"));
  CHECK(!is_unit_word("box"));
  CHECK(lexical_flags("oz")[kLengthShort] == 1);
  CHECK(lexical_flags("garlic")[kLengthMedium] == 1);
  CHECK(lexical_flags("sunflower")[kLengthLong] == 1);
}

TEST_CASE("bilou_encode") {
  const std::vector<EntitySpan> spans = {{2, 3}, {6, 7}, {10, 12}, {12, 14}, {14, 16}};
  const TagSequence expected = {kOutside, kOutside, kUnit,  kOutside, kOutside, kOutside, kUnit,  kOutside,
                                kOutside, kOutside, kBegin, kLast,    kBegin,   kLast,    kBegin, kLast};
  CHECK(bilou_encode(spans, 16) == expected);
  CHECK(bilou_encode({}, 3) == TagSequence{kOutside, kOutside, kOutside});
  CHECK(bilou_encode({{0, 3}}, 3) == TagSequence{kBegin, kInside, kLast});
  CHECK_THROWS_AS(bilou_encode({{1, 3}, {2, 4}}, 5), std::invalid_argument);
  CHECK_THROWS_AS(bilou_encode({{0, 4}}, 3), std::invalid_argument);
  CHECK_THROWS_AS(bilou_encode({{2, 2}}, 3), std::invalid_argument);
}

TEST_CASE("bilou_decode") {
  using V = std::vector<EntitySpan>;
  CHECK(bilou_decode({kOutside, kOutside, kUnit}, true) == V{{2, 3}});
  CHECK(bilou_decode({kBegin, kLast, kUnit}, true) == V{{0, 2}, {2, 3}});
  CHECK(bilou_decode({kInside, kLast, kOutside}, false) == V{{0, 2}});
  CHECK_THROWS_WITH_AS(bilou_decode({kInside, kLast, kOutside}, true), "ill-formed BILOU", std::invalid_argument);
  CHECK_THROWS_AS(bilou_decode({kBegin, kOutside}, true), std::invalid_argument);
  CHECK(bilou_decode({kBegin, kOutside}, false) == V{{0, 1}});
  CHECK(bilou_decode({kUnit, kBegin, kInside}, false) == V{{0, 3}});
  CHECK_THROWS_AS(bilou_decode({7}, false), std::invalid_argument);
  CHECK(bilou_decode({}, true).empty());
}

TEST_CASE("bilou round-trip over random span sets") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.below(21));
    const auto spans = oracle::random_spans(rng, n);
    REQUIRE(spans_valid(spans, n));
    const auto tags = bilou_encode(spans, n);
    CHECK(bilou_decode(tags, true) == spans);
    CHECK(bilou_decode(tags, false) == spans);
  }
}

TEST_CASE("lenient decode always yields valid spans") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.below(15));
    TagSequence tags(n);
    for (auto& t : tags) t = static_cast<int>(rng.below(kNumTags));
    CHECK(spans_valid(bilou_decode(tags, false), n));
  }
}
