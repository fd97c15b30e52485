#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpner/datagen.hpp"
#include "mpner/embed.hpp"
#include "mpner/model.hpp"
#include "mpner/rng.hpp"
#include "mpner/text.hpp"

namespace mpner {

struct ProviderSpec {
  std::string kind = "hash";  // hash | file | none
  std::size_t dim = 32;
  std::uint64_t seed = 0;
  std::string path;

  std::string describe() const;
};

std::optional<EmbeddingProvider> make_provider(const ProviderSpec& spec);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_start = 64;
  std::size_t batch_end = 256;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  int min_freq = 1;
  int n_max = 4;
  ModelConfig model;  // dropout and use_lexical live here
  ProviderSpec provider;

  void validate() const;
};

/// Batch size for `epoch` out of `total_epochs`.
///
/// The epoch range is cut into equal segments, one per doubling step from
/// batch_start up to batch_end (64, 128, 256 by default); batch_end is
/// reached on the last segment.
std::size_t batch_schedule(std::size_t epoch, std::size_t total_epochs, std::size_t batch_start = 64,
                           std::size_t batch_end = 256);

struct Batch {
  std::vector<std::size_t> records;  // indices into the record list
  std::size_t length = 0;            // padded width
  std::vector<std::uint8_t> mask;    // records.size() * length
};

std::vector<Batch> make_batches(const std::vector<std::size_t>& lengths, std::size_t batch_size, Rng& rng);
std::vector<Batch> make_batches(const std::vector<UtteranceRecord>& records, std::size_t batch_size, Rng& rng);

struct TagCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
  std::size_t support = 0;  // gold entities
  std::map<std::string, TagCounts> per_label;
  std::string description;
};

EvalReport entity_f1(const std::vector<std::vector<EntitySpan>>& predicted,
                     const std::vector<std::vector<EntitySpan>>& gold);

// Trained tagger: configuration, vocabulary, embedding provider and weights.
struct NerModel {
  TrainConfig config;
  Vocabulary vocab;
  std::optional<EmbeddingProvider> provider;
  ModelParams<float> params;

  SequenceFeatures features(const TokenSequence& tokens) const;
  std::vector<TagSequence> predict_tags(const std::vector<const SequenceFeatures*>& batch,
                                        bool constrained = true) const;
  std::vector<EntitySpan> predict(const TokenSequence& tokens, bool strict = false) const;
};

// Constrained Viterbi, then strict (dev) or lenient (test) BILOU decoding.
EvalReport evaluate(const NerModel& model, const std::vector<UtteranceRecord>& records, bool strict = true);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t batch_size = 0;
  double mean_loss = 0.0;
  std::optional<double> dev_f1;
};

std::string format_log_line(const EpochLog& entry);

struct TrainResult {
  NerModel model;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Vocabulary comes from the training records. Dev F1 is logged every
// eval_every epochs and after the final epoch when dev data is given.
TrainResult train(const TrainConfig& config, const std::vector<UtteranceRecord>& train_records,
                  const std::vector<UtteranceRecord>& dev_records, const EpochCallback& on_epoch = {});

// Directory with manifest.txt, params.bin (little-endian f32) and vocab.txt.
void save_checkpoint(const NerModel& model, const std::string& dir);
NerModel load_checkpoint(const std::string& dir);

struct AblationGrid {
  std::vector<bool> lexical;             // sparse options
  std::vector<ProviderSpec> dense;       // dense options ("none" allowed)
};

struct AblationRow {
  std::string sparse_features;
  std::string dense_features;
  double train_f1 = 0.0;
  double test_f1 = 0.0;
};

// One model per (lexical, dense) pair, lexical-major in declaration order.
std::vector<AblationRow> ablation_run(const TrainConfig& base, const AblationGrid& grid,
                                      const std::vector<UtteranceRecord>& train_records,
                                      const std::vector<UtteranceRecord>& test_records);

std::string render_table(const std::vector<AblationRow>& rows);

}  // namespace mpner
