#include "mpner/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "mpner/config.hpp"
#include "mpner/crf.hpp"

namespace mpner {

namespace fs = std::filesystem;

std::string ProviderSpec::describe() const {
  if (kind == "none") return "Not Present";
  if (kind == "file") return "file(" + fs::path(path).filename().string() + ")";
  return "hash(dim=" + std::to_string(dim) + ")";
}

std::optional<EmbeddingProvider> make_provider(const ProviderSpec& spec) {
  if (spec.kind == "none") return std::nullopt;
  if (spec.kind == "hash") return EmbeddingProvider::hash(spec.dim, spec.seed);
  if (spec.kind == "file") return load_embeddings(spec.path);
  throw std::invalid_argument("unknown provider kind: " + spec.kind);
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (batch_start < 1 || batch_start > batch_end)
    throw std::invalid_argument("batch sizes must satisfy 1 <= batch_start <= batch_end");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (min_freq < 1) throw std::invalid_argument("min_freq must be >= 1");
  if (n_max < 1) throw std::invalid_argument("n_max must be >= 1");
  if (provider.kind != "hash" && provider.kind != "file" && provider.kind != "none")
    throw std::invalid_argument("provider must be one of hash, file, none");
  if (provider.kind == "hash" && provider.dim < 1) throw std::invalid_argument("provider_dim must be >= 1");
  if (provider.kind == "file" && provider.path.empty())
    throw std::invalid_argument("provider_path is required for the file provider");
  model.validate();
}

std::size_t batch_schedule(std::size_t epoch, std::size_t total_epochs, std::size_t batch_start,
                           std::size_t batch_end) {
  if (total_epochs == 0 || epoch >= total_epochs) throw std::invalid_argument("epoch out of range");
  if (batch_start < 1 || batch_start > batch_end) throw std::invalid_argument("invalid batch size range");
  std::vector<std::size_t> sizes{batch_start};
  while (sizes.back() < batch_end) sizes.push_back(std::min(sizes.back() * 2, batch_end));
  const std::size_t segment = epoch * sizes.size() / total_epochs;
  return sizes[std::min(segment, sizes.size() - 1)];
}

std::vector<Batch> make_batches(const std::vector<std::size_t>& lengths, std::size_t batch_size, Rng& rng) {
  if (lengths.empty()) throw std::invalid_argument("no records to batch");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    Batch b;
    b.records.assign(order.begin() + begin, order.begin() + std::min(order.size(), begin + batch_size));
    for (auto r : b.records) b.length = std::max(b.length, lengths[r]);
    b.mask.assign(b.records.size() * b.length, 0);
    for (std::size_t k = 0; k < b.records.size(); ++k)
      std::fill_n(b.mask.begin() + k * b.length, lengths[b.records[k]], 1);
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<Batch> make_batches(const std::vector<UtteranceRecord>& records, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> lengths;
  for (const auto& r : records) lengths.push_back(r.tokens.size());
  return make_batches(lengths, batch_size, rng);
}

EvalReport entity_f1(const std::vector<std::vector<EntitySpan>>& predicted,
                     const std::vector<std::vector<EntitySpan>>& gold) {
  if (predicted.size() != gold.size())
    throw std::invalid_argument("prediction count " + std::to_string(predicted.size()) + " != gold count " +
                                std::to_string(gold.size()));
  EvalReport report;
  for (std::size_t r = 0; r < gold.size(); ++r) {
    const std::set<EntitySpan> g(gold[r].begin(), gold[r].end());
    const std::set<EntitySpan> p(predicted[r].begin(), predicted[r].end());
    for (const auto& s : p) {
      if (g.count(s)) {
        ++report.tp;
        ++report.per_label[s.label].tp;
      } else {
        ++report.fp;
        ++report.per_label[s.label].fp;
      }
    }
    for (const auto& s : g) {
      if (!p.count(s)) {
        ++report.fn;
        ++report.per_label[s.label].fn;
      }
    }
    report.support += g.size();
  }
  const double tp = static_cast<double>(report.tp);
  report.precision = report.tp + report.fp ? tp / static_cast<double>(report.tp + report.fp) : 0.0;
  report.recall = report.tp + report.fn ? tp / static_cast<double>(report.tp + report.fn) : 0.0;
  const double pr = report.precision + report.recall;
  report.f1 = pr > 0.0 ? 2.0 * report.precision * report.recall / pr : 0.0;
  return report;
}

SequenceFeatures NerModel::features(const TokenSequence& tokens) const {
  return extract_features(tokens, vocab, params.config.use_lexical, provider ? &*provider : nullptr);
}

std::vector<TagSequence> NerModel::predict_tags(const std::vector<const SequenceFeatures*>& batch,
                                                bool constrained) const {
  const auto input = pack_batch<float>(batch, params.config);
  return mpner::predict_tags(params, input, constrained);
}

std::vector<EntitySpan> NerModel::predict(const TokenSequence& tokens, bool strict) const {
  if (tokens.empty()) return {};
  const SequenceFeatures f = features(tokens);
  const auto tags = predict_tags({&f}, /*constrained=*/true);
  return bilou_decode(tags.front(), strict);
}

namespace {

constexpr std::size_t kEvalBatch = 64;

std::vector<std::vector<EntitySpan>> predict_all(const NerModel& model, const std::vector<SequenceFeatures>& feats,
                                                 bool strict) {
  std::vector<std::vector<EntitySpan>> out;
  out.reserve(feats.size());
  for (std::size_t begin = 0; begin < feats.size(); begin += kEvalBatch) {
    std::vector<const SequenceFeatures*> batch;
    for (std::size_t i = begin; i < std::min(feats.size(), begin + kEvalBatch); ++i) batch.push_back(&feats[i]);
    for (const auto& tags : model.predict_tags(batch, true)) out.push_back(bilou_decode(tags, strict));
  }
  return out;
}

std::vector<std::vector<EntitySpan>> gold_spans(const std::vector<UtteranceRecord>& records) {
  std::vector<std::vector<EntitySpan>> out;
  for (const auto& r : records) out.push_back(r.entities);
  return out;
}

EvalReport evaluate_features(const NerModel& model, const std::vector<SequenceFeatures>& feats,
                             const std::vector<UtteranceRecord>& records, bool strict) {
  return entity_f1(predict_all(model, feats, strict), gold_spans(records));
}

std::vector<SequenceFeatures> all_features(const NerModel& model, const std::vector<UtteranceRecord>& records) {
  std::vector<SequenceFeatures> feats;
  feats.reserve(records.size());
  for (const auto& r : records) feats.push_back(model.features(r.tokens));
  return feats;
}

}  // namespace

EvalReport evaluate(const NerModel& model, const std::vector<UtteranceRecord>& records, bool strict) {
  return evaluate_features(model, all_features(model, records), records, strict);
}

std::string format_log_line(const EpochLog& e) {
  char buf[128];
  if (e.dev_f1)
    std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.6f\t%.6f", e.epoch, e.batch_size, e.mean_loss, *e.dev_f1);
  else
    std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.6f", e.epoch, e.batch_size, e.mean_loss);
  return buf;
}

TrainResult train(const TrainConfig& config, const std::vector<UtteranceRecord>& train_records,
                  const std::vector<UtteranceRecord>& dev_records, const EpochCallback& on_epoch) {
  config.validate();
  if (train_records.empty()) throw std::invalid_argument("no training records");

  TrainResult result;
  NerModel& model = result.model;
  model.config = config;
  std::vector<TokenSequence> corpus;
  for (const auto& r : train_records) corpus.push_back(r.tokens);
  model.vocab = build_vocab(corpus, config.min_freq, config.n_max);
  model.provider = make_provider(config.provider);

  ModelConfig mc = config.model;
  mc.vocab_words = model.vocab.word_count();
  mc.vocab_ngrams = model.vocab.ngram_count();
  mc.dense_dim = model.provider ? model.provider->dim() : 0;
  model.config.model = mc;
  model.params = init_params<float>(mc, derive_seed(config.seed, 1));

  const auto train_feats = all_features(model, train_records);
  const auto dev_feats = all_features(model, dev_records);
  std::vector<TagSequence> gold_tags;
  std::vector<std::size_t> lengths;
  for (const auto& r : train_records) {
    gold_tags.push_back(bilou_encode(r.entities, static_cast<int>(r.tokens.size())));
    lengths.push_back(r.tokens.size());
  }

  ad::AdamState<float> adam;
  adam.lr = config.lr;
  auto named = model.params.named();
  std::vector<ad::Tensor<float>*> tensors;
  for (auto& [name, t] : named) tensors.push_back(t);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    entry.batch_size = batch_schedule(epoch, config.epochs, config.batch_start, config.batch_end);
    Rng shuffle_rng(derive_seed(config.seed, 2 + 2 * epoch));
    const auto batches = make_batches(lengths, entry.batch_size, shuffle_rng);
    const std::uint64_t dropout_root = derive_seed(config.seed, 3 + 2 * epoch);

    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& batch = batches[bi];
      std::vector<const SequenceFeatures*> seqs;
      for (auto r : batch.records) seqs.push_back(&train_feats[r]);
      const auto input = pack_batch<float>(seqs, mc);
      std::vector<int> gold(input.batch * input.length, kOutside);
      for (std::size_t k = 0; k < batch.records.size(); ++k) {
        const auto& tags = gold_tags[batch.records[k]];
        std::copy(tags.begin(), tags.end(), gold.begin() + k * input.length);
      }

      ad::Graph<float> graph(/*training=*/true, derive_seed(dropout_root, bi));
      float loss_value = 0.0f;
      try {
        const BoundParams bound = bind_params(graph, model.params);
        const ad::Var loss = model_loss(graph, bound, input, gold, mc);
        loss_value = graph.value(loss).item();
        graph.backward(loss);
      } catch (const std::domain_error& e) {
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                 std::to_string(bi) + ": " + e.what());
      }
      std::vector<ad::Tensor<float>> grads;
      grads.reserve(tensors.size());
      for (auto* t : tensors) grads.push_back(graph.grad_of(*t));
      ad::adam_step<float>(tensors, grads, adam);
      loss_sum += static_cast<double>(loss_value) * static_cast<double>(batch.records.size());
    }
    entry.mean_loss = loss_sum / static_cast<double>(train_records.size());
    if (!std::isfinite(entry.mean_loss))
      throw std::runtime_error("non-finite mean loss at epoch " + std::to_string(epoch));

    const bool last = epoch + 1 == config.epochs;
    if (!dev_records.empty() && ((epoch + 1) % config.eval_every == 0 || last))
      entry.dev_f1 = evaluate_features(model, dev_feats, dev_records, /*strict=*/true).f1;
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

namespace {

std::string shape_text(const ad::Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s.empty() ? "scalar" : s;
}

void put_f32_le(std::string& out, float x) {
  std::uint32_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  float x;
  std::memcpy(&x, &bits, sizeof x);
  return x;
}

constexpr const char* kManifestHeader = "# mpner checkpoint v1";

}  // namespace

void save_checkpoint(const NerModel& model, const std::string& dir) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << kManifestHeader << '\n';
  for (const auto& [key, value] : config_entries(model.config)) manifest << '@' << key << '=' << value << '\n';
  const ModelConfig& mc = model.params.config;
  manifest << "@vocab_words=" << mc.vocab_words << '\n'
           << "@vocab_ngrams=" << mc.vocab_ngrams << '\n'
           << "@dense_dim=" << mc.dense_dim << '\n'
           << "@n_tags=" << mc.n_tags << '\n';
  std::string blob;
  for (const auto& [name, tensor] : model.params.named()) {
    manifest << name << '\t' << shape_text(tensor->shape) << "\tf32\t" << blob.size() << '\n';
    for (float x : tensor->data) put_f32_le(blob, x);
  }
  {
    std::ofstream out(fs::path(dir) / "manifest.txt", std::ios::binary);
    out << manifest.str();
    if (!out) throw std::runtime_error("cannot write manifest in " + dir);
  }
  {
    std::ofstream out(fs::path(dir) / "params.bin", std::ios::binary);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("cannot write params.bin in " + dir);
  }
  save_vocab(model.vocab, (fs::path(dir) / "vocab.txt").string());
}

NerModel load_checkpoint(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.txt", std::ios::binary);
  if (!mf) throw std::runtime_error("cannot read manifest.txt in " + dir);
  NerModel model;
  ModelConfig derived;
  struct Entry {
    std::string name;
    std::string shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(mf, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line[0] == '@') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::runtime_error("manifest line " + std::to_string(line_no) + ": bad config");
      const std::string key = line.substr(1, eq - 1), value = line.substr(eq + 1);
      if (key == "vocab_words") derived.vocab_words = std::stoul(value);
      else if (key == "vocab_ngrams") derived.vocab_ngrams = std::stoul(value);
      else if (key == "dense_dim") derived.dense_dim = std::stoul(value);
      else if (key == "n_tags") derived.n_tags = std::stoul(value);
      else if (!apply_config_entry(model.config, key, value))
        throw std::runtime_error("manifest line " + std::to_string(line_no) + ": unknown config key " + key);
      continue;
    }
    std::istringstream fields(line);
    Entry e;
    std::string dtype;
    if (!(fields >> e.name >> e.shape >> dtype >> e.offset) || dtype != "f32")
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": expected name, shape, f32, offset");
    entries.push_back(std::move(e));
  }
  model.config.validate();

  ModelConfig mc = model.config.model;
  mc.vocab_words = derived.vocab_words;
  mc.vocab_ngrams = derived.vocab_ngrams;
  mc.dense_dim = derived.dense_dim;
  mc.n_tags = derived.n_tags;
  mc.validate();
  model.config.model = mc;

  model.vocab = load_vocab((fs::path(dir) / "vocab.txt").string());
  if (model.vocab.word_count() != mc.vocab_words || model.vocab.ngram_count() != mc.vocab_ngrams)
    throw std::runtime_error("vocab.txt does not match manifest vocabulary sizes");
  model.provider = make_provider(model.config.provider);
  if ((model.provider ? model.provider->dim() : 0) != mc.dense_dim)
    throw std::runtime_error("embedding provider width does not match manifest dense_dim");

  std::ifstream bf(fs::path(dir) / "params.bin", std::ios::binary);
  if (!bf) throw std::runtime_error("cannot read params.bin in " + dir);
  const std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  const auto expected = expected_shapes(mc);
  model.params.config = mc;
  model.params.layers.resize(mc.n_layers);
  auto named = model.params.named();
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [name, shape] = expected[i];
    if (i >= entries.size()) throw std::runtime_error("manifest is missing tensor " + name);
    const Entry& e = entries[i];
    if (e.name != name) throw std::runtime_error("manifest tensor " + std::to_string(i) + " is " + e.name + ", expected " + name);
    if (e.shape != shape_text(shape))
      throw std::runtime_error("shape mismatch for tensor " + name + ": manifest " + e.shape + ", expected " +
                               shape_text(shape));
    if (e.offset != cursor) throw std::runtime_error("tensor " + name + " offset is not contiguous");
    const std::size_t bytes = ad::numel(shape) * 4;
    if (e.offset + bytes > blob.size()) throw std::runtime_error("blob shorter than manifest extent");
    ad::Tensor<float> t(shape);
    const auto* p = reinterpret_cast<const unsigned char*>(blob.data()) + e.offset;
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = get_f32_le(p + 4 * k);
    *named[i].second = std::move(t);
    cursor += bytes;
  }
  if (entries.size() != expected.size())
    throw std::runtime_error("manifest has unexpected tensor " + entries[expected.size()].name);
  if (cursor != blob.size()) throw std::runtime_error("blob longer than manifest extent");
  return model;
}

std::vector<AblationRow> ablation_run(const TrainConfig& base, const AblationGrid& grid,
                                      const std::vector<UtteranceRecord>& train_records,
                                      const std::vector<UtteranceRecord>& test_records) {
  std::vector<AblationRow> rows;
  for (bool lexical : grid.lexical) {
    for (const auto& dense : grid.dense) {
      TrainConfig config = base;
      config.model.use_lexical = lexical;
      config.provider = dense;
      const auto result = train(config, train_records, {});
      AblationRow row;
      row.sparse_features = std::string("count vectors (word + char n-grams(n<=") + std::to_string(config.n_max) +
                            "))" + (lexical ? " + lexical" : "");
      row.dense_features = dense.describe();
      row.train_f1 = evaluate(result.model, train_records, /*strict=*/true).f1;
      row.test_f1 = test_records.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : evaluate(result.model, test_records, /*strict=*/false).f1;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string render_table(const std::vector<AblationRow>& rows) {
  auto pct = [](double x) {
    if (std::isnan(x)) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * x);
    return std::string(buf);
  };
  std::vector<std::array<std::string, 4>> cells = {{"Sparse Features", "Dense Features", "Training F1", "Test F1"}};
  for (const auto& r : rows) cells.push_back({r.sparse_features, r.dense_features, pct(r.train_f1), pct(r.test_f1)});
  std::array<std::size_t, 4> width{};
  for (const auto& c : cells)
    for (std::size_t i = 0; i < 4; ++i) width[i] = std::max(width[i], c[i].size());
  std::ostringstream out;
  auto emit = [&](const std::array<std::string, 4>& c) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (i) out << " | ";
      out << c[i];
      if (i < 3) out << std::string(width[i] - c[i].size(), ' ');
    }
    out << '\n';
  };
  emit(cells[0]);
  out << std::string(width[0], '-') << "-+-" << std::string(width[1], '-') << "-+-" << std::string(width[2], '-')
      << "-+-" << std::string(width[3], '-') << '\n';
  for (std::size_t r = 1; r < cells.size(); ++r) emit(cells[r]);
  return out.str();
}

}  // namespace mpner
