#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mpner/rng.hpp"
#include "mpner/text.hpp"

namespace mpner {

struct Product {
  std::string canonical_name;
  std::vector<std::string> synonyms;
  std::string department;

  // canonical name followed by synonyms
  std::vector<std::string> surfaces() const;
};

struct ProductCatalog {
  std::vector<Product> entries;
  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

// Catalog file: "canonical<TAB>department<TAB>syn1,syn2,..." per line.
// Blank lines and lines starting with '#' are skipped.
ProductCatalog load_catalog(const std::string& path);
ProductCatalog parse_catalog(std::string_view contents);
void validate_catalog(const ProductCatalog& catalog);

// Stratified by department. The held-out side gets round(n * fraction)
// products; every department with two or more products lands on both sides.
std::pair<ProductCatalog, ProductCatalog> split_catalog(const ProductCatalog& catalog,
                                                        double holdout_fraction,
                                                        std::uint64_t seed);

struct TemplateSet {
  std::vector<std::string> templates;         // each with exactly one "{items}"
  std::vector<std::string> quantity_phrases;  // always includes ""
};

inline constexpr std::string_view kItemsPlaceholder = "{items}";

TemplateSet load_templates(const std::string& template_path, const std::string& quantity_path);
TemplateSet make_templates(std::vector<std::string> templates,
                           std::vector<std::string> quantity_phrases);

struct UtteranceRecord {
  std::string id;
  TokenSequence tokens;
  std::vector<EntitySpan> entities;

  friend bool operator==(const UtteranceRecord&, const UtteranceRecord&) = default;
};

struct Item {
  std::string quantity;  // may be empty
  std::string product;
};

inline constexpr int kMaxItems = 10;

UtteranceRecord render_utterance(std::string_view tmpl, const std::vector<Item>& items);

UtteranceRecord sample_record(Rng& rng, const TemplateSet& templates,
                              const ProductCatalog& catalog, int min_items, int max_items);

struct GenerationSummary {
  std::size_t records = 0;
  std::map<int, std::size_t> entity_histogram;  // entity count -> records
};

struct GenerationOptions {
  std::uint64_t seed = 0;
  std::size_t count = 1;
  int min_items = 1;
  int max_items = kMaxItems;
  std::size_t shards = 1;
  std::string id_prefix = "utt";
};

// Records are split into `shards` contiguous blocks; block k draws from
// Rng(derive_seed(seed, k)).
std::vector<UtteranceRecord> generate_records(const TemplateSet& templates,
                                              const ProductCatalog& catalog,
                                              const GenerationOptions& options);

GenerationSummary generate_dataset(const TemplateSet& templates, const ProductCatalog& catalog,
                                   const GenerationOptions& options, const std::string& out_path);

GenerationSummary summarize(const std::vector<UtteranceRecord>& records);

// JSON Lines dataset I/O: {"id", "text", "entities": [{"start","end","label"}]}.
std::string record_to_json(const UtteranceRecord& record);
UtteranceRecord record_from_json(std::string_view line);
void write_dataset(const std::vector<UtteranceRecord>& records, const std::string& path);
std::vector<UtteranceRecord> read_dataset(const std::string& path);

// Throws std::invalid_argument describing the first violated invariant.
// With a catalog, every entity text must be one of its surface forms.
void validate_record(const UtteranceRecord& record, const ProductCatalog* catalog = nullptr);

std::vector<std::string> entity_texts(const UtteranceRecord& record);

}  // namespace mpner
