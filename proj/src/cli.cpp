#include "mpner/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include "mpner/config.hpp"
#include "mpner/datagen.hpp"

namespace mpner {

namespace fs = std::filesystem;

namespace {

std::string fixed(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<UtteranceRecord> read_nonempty(const std::string& path) {
  auto records = read_dataset(path);
  if (records.empty()) throw std::runtime_error("no records in " + path);
  return records;
}

// Maps every surface form to its canonical product name.
std::unordered_map<std::string, std::string> surface_index(const ProductCatalog& catalog) {
  std::unordered_map<std::string, std::string> index;
  for (const auto& p : catalog.entries)
    for (const auto& s : p.surfaces()) index.emplace(s, p.canonical_name);
  return index;
}

std::set<std::string> products_used(const std::vector<UtteranceRecord>& records,
                                    const std::unordered_map<std::string, std::string>& index) {
  std::set<std::string> used;
  for (const auto& r : records)
    for (const auto& text : entity_texts(r)) used.insert(index.at(text));
  return used;
}

std::string histogram_text(const GenerationSummary& s) {
  std::string out;
  for (int k = 1; k <= kMaxItems; ++k) {
    const auto it = s.entity_histogram.find(k);
    out += "  " + std::to_string(k) + "\t" + std::to_string(it == s.entity_histogram.end() ? 0 : it->second) + "\n";
  }
  return out;
}

struct DatagenArgs {
  std::string catalog, templates, quantities, out_dir;
  std::size_t count = 5000;
  std::size_t test_count = 0;
  int min_items = 1, max_items = kMaxItems;
  double holdout = 0.2;
  std::uint64_t seed = 0;
};

int cmd_datagen(const DatagenArgs& a, std::ostream& out) {
  const ProductCatalog catalog = load_catalog(a.catalog);
  const TemplateSet templates = load_templates(a.templates, a.quantities);
  const auto [train_catalog, test_catalog] = split_catalog(catalog, a.holdout, a.seed);

  GenerationOptions opts;
  opts.seed = derive_seed(a.seed, 1);
  opts.count = a.count;
  opts.min_items = a.min_items;
  opts.max_items = a.max_items;
  opts.id_prefix = "train";
  const auto train_records = generate_records(templates, train_catalog, opts);
  opts.seed = derive_seed(a.seed, 2);
  opts.count = a.test_count ? a.test_count : std::max<std::size_t>(1, a.count / 5);
  opts.id_prefix = "test";
  const auto test_records = generate_records(templates, test_catalog, opts);

  const auto index = surface_index(catalog);
  const auto train_used = products_used(train_records, index);
  const auto test_used = products_used(test_records, index);
  std::size_t overlap = 0;
  for (const auto& p : test_used) overlap += train_used.count(p);

  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  write_dataset(train_records, (dir / "train.jsonl").string());
  write_dataset(test_records, (dir / "test.jsonl").string());

  std::ostringstream stats;
  stats << "seed\t" << a.seed << "\n"
        << "catalog_products\t" << catalog.size() << "\n"
        << "train_products\t" << train_catalog.size() << "\n"
        << "test_products\t" << test_catalog.size() << "\n"
        << "train_records\t" << train_records.size() << "\n"
        << "test_records\t" << test_records.size() << "\n"
        << "product_overlap\t" << overlap << "\n"
        << "train_entity_histogram\n"
        << histogram_text(summarize(train_records)) << "test_entity_histogram\n"
        << histogram_text(summarize(test_records));
  write_text(dir / "stats.txt", stats.str());
  out << "wrote " << train_records.size() << " train and " << test_records.size() << " test records to "
      << dir.string() << " (product overlap " << overlap << ")\n";
  return overlap == 0 ? 0 : 1;
}

struct TrainArgs {
  std::string config, train, dev, out, log;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = load_run_config(a.config);
  if (!a.train.empty()) rc.train_path = a.train;
  if (!a.dev.empty()) rc.dev_path = a.dev;
  if (rc.train_path.empty()) throw std::invalid_argument("no training data: pass --train or set train_path");
  const auto train_records = read_nonempty(rc.train_path);
  const auto dev_records = rc.dev_path.empty() ? std::vector<UtteranceRecord>{} : read_nonempty(rc.dev_path);

  const fs::path log_path = a.log.empty() ? fs::path(a.out) / "train.log" : fs::path(a.log);
  if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());

  const auto result = train(rc.train, train_records, dev_records, [&](const EpochLog& e) {
    const std::string line = format_log_line(e);
    log << line << '\n';
    log.flush();
    out << line << '\n';
    out.flush();
  });
  save_checkpoint(result.model, a.out);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());

  const double train_f1 = evaluate(result.model, train_records, true).f1;
  out << "train_f1\t" << fixed(train_f1) << '\n';
  if (result.log.back().dev_f1) out << "dev_f1\t" << fixed(*result.log.back().dev_f1) << '\n';
  return 0;
}

struct EvalArgs {
  std::string model, data, report;
  bool lenient = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const NerModel model = load_checkpoint(a.model);
  const auto records = read_nonempty(a.data);
  const EvalReport r = evaluate(model, records, !a.lenient);
  AblationRow row;
  row.sparse_features = std::string("count vectors (word + char n-grams(n<=") + std::to_string(model.config.n_max) +
                        "))" + (model.config.model.use_lexical ? " + lexical" : "");
  row.dense_features = model.config.provider.describe();
  row.train_f1 = std::numeric_limits<double>::quiet_NaN();
  row.test_f1 = r.f1;
  std::ostringstream report;
  report << render_table({row}) << "\n"
         << "records\t" << records.size() << "\n"
         << "decode\t" << (a.lenient ? "lenient" : "strict") << "\n"
         << "precision\t" << fixed(r.precision) << "\n"
         << "recall\t" << fixed(r.recall) << "\n"
         << "f1\t" << fixed(r.f1) << "\n"
         << "tp\t" << r.tp << "\nfp\t" << r.fp << "\nfn\t" << r.fn << "\nsupport\t" << r.support << "\n";
  if (!a.report.empty()) write_text(a.report, report.str());
  out << "f1\t" << fixed(r.f1) << '\n';
  return 0;
}

struct PredictArgs {
  std::string model;
  std::vector<std::string> text;
  PredictOptions options;
};

int cmd_predict(const PredictArgs& a, std::istream& in, std::ostream& out, std::ostream& err) {
  const NerModel model = load_checkpoint(a.model);
  if (a.text.empty()) {
    predict_stream(model, in, out, err, a.options);
  } else {
    std::string joined;
    for (const auto& t : a.text) joined += t + "\n";
    std::istringstream lines(joined);
    predict_stream(model, lines, out, err, a.options);
  }
  return 0;
}

struct AblationArgs {
  std::string config, train, test, out;
  std::vector<std::string> lexical{"on", "off"};
  std::vector<std::string> dense{"hash", "none"};
};

ProviderSpec parse_dense_option(const std::string& option, const ProviderSpec& base) {
  ProviderSpec spec = base;
  if (option == "none" || option == "hash") {
    spec.kind = option;
  } else if (option.rfind("file:", 0) == 0) {
    spec.kind = "file";
    spec.path = option.substr(5);
  } else {
    throw std::invalid_argument("dense option must be hash, none or file:PATH, got '" + option + "'");
  }
  return spec;
}

int cmd_ablation(const AblationArgs& a, std::ostream& out) {
  RunConfig rc = load_run_config(a.config);
  if (!a.train.empty()) rc.train_path = a.train;
  if (rc.train_path.empty()) throw std::invalid_argument("no training data: pass --train or set train_path");
  const auto train_records = read_nonempty(rc.train_path);
  const auto test_records = a.test.empty() ? std::vector<UtteranceRecord>{} : read_nonempty(a.test);
  AblationGrid grid;
  for (const auto& l : a.lexical) {
    if (l == "on") grid.lexical.push_back(true);
    else if (l == "off") grid.lexical.push_back(false);
    else throw std::invalid_argument("lexical option must be on or off, got '" + l + "'");
  }
  for (const auto& d : a.dense) grid.dense.push_back(parse_dense_option(d, rc.train.provider));
  const std::string table = render_table(ablation_run(rc.train, grid, train_records, test_records));
  if (!a.out.empty()) write_text(a.out, table);
  out << table;
  return 0;
}

}  // namespace

std::vector<double> predict_stream(const NerModel& model, std::istream& in, std::ostream& out, std::ostream& err,
                                   const PredictOptions& options) {
  using Clock = std::chrono::steady_clock;
  std::vector<double> times;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto t0 = Clock::now();
    const TokenSequence tokens = tokenize(line);
    const auto spans = model.predict(tokens, /*strict=*/false);
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    times.push_back(ms);
    for (std::size_t i = 0; i < spans.size(); ++i) {
      if (i) out << '\t';
      if (options.spans)
        out << spans[i].start << ':' << spans[i].end << ':' << spans[i].label;
      else
        out << join_tokens(tokens, spans[i].start, spans[i].end);
    }
    out << '\n';
    if (options.timing) err << "time_ms\t" << fixed(ms, 3) << '\n';
  }
  out.flush();
  return times;
}

int run_cli(int argc, char** argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multiple product name entity recognition"};
  app.require_subcommand(1);

  DatagenArgs dg;
  auto* datagen = app.add_subcommand("datagen", "Generate train/test datasets from a catalog");
  datagen->add_option("--catalog", dg.catalog, "Catalog TSV")->required();
  datagen->add_option("--templates", dg.templates, "Template file")->required();
  datagen->add_option("--quantities", dg.quantities, "Quantity phrase file")->required();
  datagen->add_option("--count", dg.count, "Training records")->capture_default_str();
  datagen->add_option("--test-count", dg.test_count, "Test records (default count/5)");
  datagen->add_option("--min-items", dg.min_items, "Fewest entities per record")->capture_default_str();
  datagen->add_option("--max-items", dg.max_items, "Most entities per record")->capture_default_str();
  datagen->add_option("--holdout-fraction", dg.holdout, "Share of products held out for test")
      ->capture_default_str();
  datagen->add_option("--seed", dg.seed, "Root seed")->capture_default_str();
  datagen->add_option("--out-dir", dg.out_dir, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", tr.config, "Run config (key=value)")->required();
  train_cmd->add_option("--train", tr.train, "Training JSONL (overrides train_path)");
  train_cmd->add_option("--dev", tr.dev, "Dev JSONL (overrides dev_path)");
  train_cmd->add_option("--out", tr.out, "Checkpoint directory")->required();
  train_cmd->add_option("--log", tr.log, "Training log (default OUT/train.log)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--model", ev.model, "Checkpoint directory")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset JSONL")->required();
  eval_cmd->add_option("--report", ev.report, "Report file");
  eval_cmd->add_flag("--lenient", ev.lenient, "Lenient BILOU decoding (default strict)");

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Extract product entities from utterances");
  predict_cmd->add_option("--model", pr.model, "Checkpoint directory")->required();
  predict_cmd->add_option("--text", pr.text, "Utterance (repeatable); stdin lines otherwise");
  predict_cmd->add_flag("--spans", pr.options.spans, "Print start:end:label triples");
  predict_cmd->add_flag("--timing", pr.options.timing, "Print per-utterance milliseconds to stderr");

  AblationArgs ab;
  auto* ablation_cmd = app.add_subcommand("ablation", "Train one model per feature combination");
  ablation_cmd->add_option("--config", ab.config, "Base run config")->required();
  ablation_cmd->add_option("--train", ab.train, "Training JSONL (overrides train_path)");
  ablation_cmd->add_option("--test", ab.test, "Test JSONL");
  ablation_cmd->add_option("--lexical", ab.lexical, "Lexical options: on, off")->delimiter(',')->capture_default_str();
  ablation_cmd->add_option("--dense", ab.dense, "Dense options: hash, none, file:PATH")
      ->delimiter(',')
      ->capture_default_str();
  ablation_cmd->add_option("--out", ab.out, "Table file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*datagen) return cmd_datagen(dg, out);
    if (*train_cmd) return cmd_train(tr, out);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*predict_cmd) return cmd_predict(pr, in, out, err);
    if (*ablation_cmd) return cmd_ablation(ab, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace mpner
