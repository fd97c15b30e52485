#include "mpner/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace mpner {

namespace {

bool is_normalized(const std::string& s) { return !s.empty() && join_tokens(tokenize(s)) == s; }

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t begin = 0;
  for (;;) {
    const auto pos = s.find(sep, begin);
    parts.emplace_back(s.substr(begin, pos - begin));
    if (pos == std::string_view::npos) break;
    begin = pos + 1;
  }
  return parts;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(strip_cr(std::move(line)));
  return lines;
}

bool skippable(const std::string& line) {
  return line.find_first_not_of(" \t") == std::string::npos || line[0] == '#';
}

}  // namespace

std::vector<std::string> Product::surfaces() const {
  std::vector<std::string> out{canonical_name};
  out.insert(out.end(), synonyms.begin(), synonyms.end());
  return out;
}

ProductCatalog parse_catalog(std::string_view contents) {
  ProductCatalog catalog;
  std::unordered_set<std::string> names;
  std::unordered_set<std::string> surfaces;
  int line_no = 0;
  std::istringstream in{std::string(contents)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = strip_cr(raw);
    if (skippable(line)) continue;
    const std::string where = " line " + std::to_string(line_no);
    const auto fields = split(line, '\t');
    if (fields.size() < 2 || fields.size() > 3)
      throw std::invalid_argument("expected 2 or 3 tab-separated fields:" + where);
    Product p;
    p.canonical_name = fields[0];
    p.department = fields[1];
    if (!is_normalized(p.canonical_name))
      throw std::invalid_argument("product name not normalized: '" + p.canonical_name + "'" + where);
    if (p.department.empty()) throw std::invalid_argument("empty department:" + where);
    if (!names.insert(p.canonical_name).second)
      throw std::invalid_argument("duplicate product: " + p.canonical_name + where);
    if (fields.size() == 3 && !fields[2].empty()) {
      for (auto& syn : split(fields[2], ',')) {
        if (syn.empty()) throw std::invalid_argument("empty synonym:" + where);
        if (!is_normalized(syn))
          throw std::invalid_argument("synonym not normalized: '" + syn + "'" + where);
        p.synonyms.push_back(std::move(syn));
      }
    }
    for (const auto& s : p.surfaces())
      if (!surfaces.insert(s).second)
        throw std::invalid_argument("duplicate surface form: " + s + where);
    catalog.entries.push_back(std::move(p));
  }
  if (catalog.empty()) throw std::invalid_argument("empty catalog");
  return catalog;
}

ProductCatalog load_catalog(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read catalog: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_catalog(buf.str());
}

void validate_catalog(const ProductCatalog& catalog) {
  if (catalog.empty()) throw std::invalid_argument("empty catalog");
  std::unordered_set<std::string> names;
  std::unordered_set<std::string> surfaces;
  for (const auto& p : catalog.entries) {
    if (!names.insert(p.canonical_name).second)
      throw std::invalid_argument("duplicate product: " + p.canonical_name);
    for (const auto& s : p.surfaces()) {
      if (s.empty()) throw std::invalid_argument("empty synonym for " + p.canonical_name);
      if (!is_normalized(s)) throw std::invalid_argument("surface not normalized: '" + s + "'");
      if (!surfaces.insert(s).second) throw std::invalid_argument("duplicate surface form: " + s);
    }
  }
}

std::pair<ProductCatalog, ProductCatalog> split_catalog(const ProductCatalog& catalog,
                                                        double holdout_fraction,
                                                        std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    throw std::invalid_argument("holdout_fraction must be in (0, 1)");
  if (catalog.size() < 2) throw std::invalid_argument("catalog needs at least 2 products to split");

  std::map<std::string, std::vector<std::size_t>> by_department;
  for (std::size_t i = 0; i < catalog.size(); ++i)
    by_department[catalog.entries[i].department].push_back(i);

  const std::size_t n = catalog.size();
  const auto target = static_cast<long>(
      std::clamp<double>(std::round(static_cast<double>(n) * holdout_fraction), 1.0,
                         static_cast<double>(n - 1)));

  struct Quota {
    std::string department;
    long size;
    long take;
    double remainder;
  };
  std::vector<Quota> quotas;
  long assigned = 0;
  for (const auto& [dept, members] : by_department) {
    const double exact = static_cast<double>(members.size()) * holdout_fraction;
    const long take = static_cast<long>(std::floor(exact));
    quotas.push_back({dept, static_cast<long>(members.size()), take, exact - std::floor(exact)});
    assigned += take;
  }
  // Largest remainder, ties by department name (map order, stable sort).
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  for (std::size_t k = 0; assigned < target && k < order.size(); ++k) {
    auto& q = quotas[order[k]];
    if (q.take < q.size) {
      ++q.take;
      ++assigned;
    }
  }
  // Both sides of every department with >= 2 products.
  for (auto& q : quotas) {
    if (q.size < 2) continue;
    if (q.take == 0) {
      q.take = 1;
      ++assigned;
    }
    if (q.take == q.size) {
      q.take = q.size - 1;
      --assigned;
    }
  }
  // Rebalance toward the global target where department bounds allow.
  while (assigned > target) {
    Quota* best = nullptr;
    for (auto& q : quotas) {
      const long floor_take = q.size >= 2 ? 1 : 0;
      if (q.take > floor_take && (!best || q.take > best->take)) best = &q;
    }
    if (!best) break;
    --best->take;
    --assigned;
  }
  while (assigned < target) {
    Quota* best = nullptr;
    for (auto& q : quotas) {
      const long cap = q.size >= 2 ? q.size - 1 : q.size;
      if (q.take < cap && (!best || q.size - q.take > best->size - best->take)) best = &q;
    }
    if (!best) break;
    ++best->take;
    ++assigned;
  }

  Rng rng(seed);
  std::vector<bool> held_out(n, false);
  for (const auto& q : quotas) {
    auto members = by_department.at(q.department);
    rng.shuffle(members);
    for (long k = 0; k < q.take; ++k) held_out[members[k]] = true;
  }
  ProductCatalog train, test;
  for (std::size_t i = 0; i < n; ++i)
    (held_out[i] ? test : train).entries.push_back(catalog.entries[i]);
  return {std::move(train), std::move(test)};
}

TemplateSet make_templates(std::vector<std::string> templates,
                           std::vector<std::string> quantity_phrases) {
  TemplateSet set;
  for (auto& t : templates) {
    const auto first = t.find(kItemsPlaceholder);
    if (first == std::string::npos || t.find(kItemsPlaceholder, first + 1) != std::string::npos)
      throw std::invalid_argument("template must contain {items} exactly once: '" + t + "'");
    if (t.find_first_of(kPunctuation) != std::string::npos)
      throw std::invalid_argument("template contains punctuation: '" + t + "'");
    set.templates.push_back(std::move(t));
  }
  if (set.templates.empty()) throw std::invalid_argument("no templates");
  bool has_empty = false;
  for (auto& q : quantity_phrases) {
    std::string normalized = join_tokens(tokenize(q));
    has_empty = has_empty || normalized.empty();
    set.quantity_phrases.push_back(std::move(normalized));
  }
  if (!has_empty) set.quantity_phrases.insert(set.quantity_phrases.begin(), std::string());
  return set;
}

TemplateSet load_templates(const std::string& template_path, const std::string& quantity_path) {
  std::vector<std::string> templates, quantities;
  for (auto& line : read_lines(template_path))
    if (!skippable(line)) templates.push_back(std::move(line));
  for (auto& line : read_lines(quantity_path))
    if (!skippable(line)) quantities.push_back(std::move(line));
  return make_templates(std::move(templates), std::move(quantities));
}

UtteranceRecord render_utterance(std::string_view tmpl, const std::vector<Item>& items) {
  if (items.empty() || items.size() > static_cast<std::size_t>(kMaxItems))
    throw std::invalid_argument("item count out of range");
  const auto pos = tmpl.find(kItemsPlaceholder);
  if (pos == std::string_view::npos) throw std::invalid_argument("template lacks {items}");

  UtteranceRecord record;
  record.tokens = tokenize(tmpl.substr(0, pos));
  for (const auto& item : items) {
    for (auto& tok : tokenize(item.quantity)) record.tokens.push_back(std::move(tok));
    auto product = tokenize(item.product);
    if (product.empty()) throw std::invalid_argument("empty product surface");
    const int start = static_cast<int>(record.tokens.size());
    for (auto& tok : product) record.tokens.push_back(std::move(tok));
    record.entities.push_back({start, static_cast<int>(record.tokens.size())});
  }
  for (auto& tok : tokenize(tmpl.substr(pos + kItemsPlaceholder.size())))
    record.tokens.push_back(std::move(tok));
  return record;
}

UtteranceRecord sample_record(Rng& rng, const TemplateSet& templates,
                              const ProductCatalog& catalog, int min_items, int max_items) {
  if (min_items < 1 || min_items > max_items || max_items > kMaxItems)
    throw std::invalid_argument("item bounds must satisfy 1 <= min <= max <= 10");
  if (catalog.empty() || catalog.size() < static_cast<std::size_t>(min_items))
    throw std::invalid_argument("catalog smaller than min_items");
  if (templates.templates.empty()) throw std::invalid_argument("no templates");

  const auto count = static_cast<std::size_t>(rng.between(min_items, max_items));
  const std::string& tmpl = templates.templates[rng.below(templates.templates.size())];

  std::vector<std::size_t> chosen;
  if (count <= catalog.size()) {
    // Partial Fisher-Yates: without replacement.
    std::vector<std::size_t> pool(catalog.size());
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t j = k + rng.below(pool.size() - k);
      std::swap(pool[k], pool[j]);
      chosen.push_back(pool[k]);
    }
  } else {
    for (std::size_t k = 0; k < count; ++k) chosen.push_back(rng.below(catalog.size()));
  }

  std::vector<Item> items;
  for (std::size_t idx : chosen) {
    const Product& p = catalog.entries[idx];
    const std::size_t which = rng.below(p.synonyms.size() + 1);
    const std::string& surface = which == 0 ? p.canonical_name : p.synonyms[which - 1];
    const std::string& qty = templates.quantity_phrases.empty()
                                 ? std::string()
                                 : templates.quantity_phrases[rng.below(templates.quantity_phrases.size())];
    items.push_back({qty, surface});
  }
  return render_utterance(tmpl, items);
}

std::vector<UtteranceRecord> generate_records(const TemplateSet& templates,
                                              const ProductCatalog& catalog,
                                              const GenerationOptions& options) {
  if (options.count < 1) throw std::invalid_argument("count must be >= 1");
  const std::size_t shards = std::max<std::size_t>(1, options.shards);
  std::vector<UtteranceRecord> records;
  records.reserve(options.count);
  const std::size_t per_shard = (options.count + shards - 1) / shards;
  for (std::size_t shard = 0; shard < shards; ++shard) {
    Rng rng(derive_seed(options.seed, shard));
    const std::size_t begin = shard * per_shard;
    const std::size_t end = std::min(options.count, begin + per_shard);
    for (std::size_t i = begin; i < end; ++i) {
      auto record = sample_record(rng, templates, catalog, options.min_items, options.max_items);
      std::ostringstream id;
      id << options.id_prefix << '-' << i;
      record.id = id.str();
      records.push_back(std::move(record));
    }
  }
  return records;
}

GenerationSummary summarize(const std::vector<UtteranceRecord>& records) {
  GenerationSummary summary;
  summary.records = records.size();
  for (const auto& r : records) ++summary.entity_histogram[static_cast<int>(r.entities.size())];
  return summary;
}

GenerationSummary generate_dataset(const TemplateSet& templates, const ProductCatalog& catalog,
                                   const GenerationOptions& options, const std::string& out_path) {
  const auto records = generate_records(templates, catalog, options);
  write_dataset(records, out_path);
  return summarize(records);
}

std::string record_to_json(const UtteranceRecord& record) {
  nlohmann::ordered_json j;
  j["id"] = record.id;
  j["text"] = join_tokens(record.tokens);
  j["entities"] = nlohmann::ordered_json::array();
  for (const auto& e : record.entities)
    j["entities"].push_back({{"start", e.start}, {"end", e.end}, {"label", e.label}});
  return j.dump();
}

UtteranceRecord record_from_json(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  UtteranceRecord record;
  record.id = j.at("id").get<std::string>();
  const auto text = j.at("text").get<std::string>();
  for (auto& tok : split(text, ' '))
    if (!tok.empty()) record.tokens.push_back(std::move(tok));
  for (const auto& e : j.at("entities"))
    record.entities.push_back(
        {e.at("start").get<int>(), e.at("end").get<int>(), e.at("label").get<std::string>()});
  if (!spans_valid(record.entities, static_cast<int>(record.tokens.size())))
    throw std::invalid_argument("invalid spans in record " + record.id);
  return record;
}

void write_dataset(const std::vector<UtteranceRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  for (const auto& r : records) out << record_to_json(r) << '\n';
  out.flush();
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
}

std::vector<UtteranceRecord> read_dataset(const std::string& path) {
  std::vector<UtteranceRecord> records;
  int line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      records.push_back(record_from_json(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void validate_record(const UtteranceRecord& record, const ProductCatalog* catalog) {
  const auto n = static_cast<int>(record.tokens.size());
  if (record.entities.empty() || record.entities.size() > static_cast<std::size_t>(kMaxItems))
    throw std::invalid_argument("entity count out of range in " + record.id);
  if (!spans_valid(record.entities, n)) throw std::invalid_argument("invalid spans in " + record.id);
  for (const auto& tok : record.tokens) {
    if (tok.empty() || tok.find_first_of(kPunctuation) != std::string::npos ||
        tok.find_first_of(" \t\r\n") != std::string::npos)
      throw std::invalid_argument("bad token '" + tok + "' in " + record.id);
  }
  if (catalog) {
    std::unordered_set<std::string> surfaces;
    for (const auto& p : catalog->entries)
      for (auto& s : p.surfaces()) surfaces.insert(std::move(s));
    for (const auto& text : entity_texts(record))
      if (!surfaces.count(text))
        throw std::invalid_argument("entity '" + text + "' is not a catalog surface in " + record.id);
  }
}

std::vector<std::string> entity_texts(const UtteranceRecord& record) {
  std::vector<std::string> out;
  for (const auto& e : record.entities) out.push_back(join_tokens(record.tokens, e.start, e.end));
  return out;
}

}  // namespace mpner
