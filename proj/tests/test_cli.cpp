#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mpner/cli.hpp"

using namespace mpner;
namespace fs = std::filesystem;

namespace {

const fs::path kData = MPNER_DATA_DIR;

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args, const std::string& input = "") {
  args.insert(args.begin(), "mpner");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), in, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path fresh(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

std::vector<std::string> datagen_args(const fs::path& out, const std::string& seed, const std::string& count) {
  return {"datagen",  "--catalog",  (kData / "catalog.tsv").string(),   "--templates", (kData / "templates.txt").string(),
          "--quantities", (kData / "quantities.txt").string(), "--count", count, "--seed", seed,
          "--holdout-fraction", "0.2", "--out-dir", out.string()};
}

const char* kConfig =
    "epochs=2\nseed=1\nd_model=8\nn_heads=2\nn_layers=1\nff_units=8\nsparse_proj_dim=8\nprovider=hash\n"
    "provider_dim=4\nbatch_start=16\nbatch_end=32\nlr=0.01\n";

}  // namespace

TEST_CASE("datagen is deterministic and reports no overlap") {
  const auto a = fresh("mpner_cli_dg_a"), b = fresh("mpner_cli_dg_b");
  REQUIRE(run(datagen_args(a, "7", "300")).code == 0);
  REQUIRE(run(datagen_args(b, "7", "300")).code == 0);
  for (const char* f : {"train.jsonl", "test.jsonl", "stats.txt"}) CHECK(slurp(a / f) == slurp(b / f));
  const auto train = slurp(a / "train.jsonl");
  CHECK(std::count(train.begin(), train.end(), '\n') == 300);
  const auto stats = slurp(a / "stats.txt");
  CHECK(stats.find("product_overlap\t0\n") != std::string::npos);
  CHECK(stats.find("train_entity_histogram") != std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);

  auto bad = datagen_args(a, "7", "10");
  bad.push_back("--max-items");
  bad.push_back("11");
  const auto r = run(bad);
  CHECK(r.code != 0);
  CHECK(r.err.find("error") != std::string::npos);
  CHECK(run({"datagen", "--catalog", "/nonexistent"}).code != 0);
}

TEST_CASE("train, eval and predict") {
  const auto dir = fresh("mpner_cli_flow");
  REQUIRE(run(datagen_args(dir / "data", "3", "60")).code == 0);
  std::ofstream(dir / "run.cfg") << kConfig;
  const auto t = run({"train", "--config", (dir / "run.cfg").string(), "--train", (dir / "data/train.jsonl").string(),
                      "--dev", (dir / "data/train.jsonl").string(), "--out", (dir / "model").string()});
  REQUIRE(t.code == 0);
  CHECK(fs::exists(dir / "model/manifest.txt"));
  CHECK(fs::exists(dir / "model/params.bin"));
  const auto log = slurp(dir / "model/train.log");
  CHECK(std::count(log.begin(), log.end(), '\n') == 2);
  const std::string last = log.substr(log.rfind('\t', log.size() - 2) + 1);
  const std::string dev_f1 = last.substr(0, last.size() - 1);

  const auto e = run({"eval", "--model", (dir / "model").string(), "--data", (dir / "data/train.jsonl").string(),
                      "--report", (dir / "report.txt").string()});
  REQUIRE(e.code == 0);
  const auto report = slurp(dir / "report.txt");
  for (const char* h : {"Sparse Features", "Dense Features", "Training F1", "Test F1"})
    CHECK(report.find(h) != std::string::npos);
  // The log prints six decimals, eval four.
  CHECK(std::stod(e.out.substr(3)) == doctest::Approx(std::stod(dev_f1)).epsilon(1e-4));

  std::ofstream(dir / "empty.jsonl") << "";
  const auto empty = run({"eval", "--model", (dir / "model").string(), "--data", (dir / "empty.jsonl").string()});
  CHECK(empty.code != 0);
  CHECK(empty.err.find("no records") != std::string::npos);

  const auto p = run({"predict", "--model", (dir / "model").string()}, "add milk\n\n\xff\xfe,,,\n");
  CHECK(p.code == 0);
  CHECK(std::count(p.out.begin(), p.out.end(), '\n') == 3);
  CHECK(p.out.find("\n\n") != std::string::npos);

  const auto s = run({"predict", "--model", (dir / "model").string(), "--spans", "--timing", "--text",
                      "add seven apples one gallon of milk"});
  CHECK(s.code == 0);
  CHECK(s.err.find("time_ms\t") == 0);
  fs::remove_all(dir);
}

TEST_CASE("config errors stop training before it starts") {
  const auto dir = fresh("mpner_cli_cfg");
  fs::create_directories(dir);
  std::ofstream(dir / "missing.cfg") << "epochs=1\nseed=1\nd_model=8\nn_heads=2\nprovider=hash\n";
  auto r = run({"train", "--config", (dir / "missing.cfg").string(), "--out", (dir / "m").string()});
  CHECK(r.code != 0);
  CHECK(r.err.find("n_layers") != std::string::npos);
  CHECK(!fs::exists(dir / "m"));

  std::ofstream(dir / "deep.cfg") << "epochs=1\nseed=1\nd_model=8\nn_heads=2\nn_layers=7\nprovider=hash\n";
  r = run({"train", "--config", (dir / "deep.cfg").string(), "--out", (dir / "m").string()});
  CHECK(r.code != 0);
  CHECK(r.err.find("6") != std::string::npos);
  fs::remove_all(dir);

  CHECK(run({}).code != 0);
  CHECK(run({"bogus"}).code != 0);
}

TEST_CASE("ablation subcommand") {
  const auto dir = fresh("mpner_cli_ablation");
  REQUIRE(run(datagen_args(dir / "data", "4", "30")).code == 0);
  std::ofstream(dir / "run.cfg") << "epochs=1\nseed=1\nd_model=8\nn_heads=2\nn_layers=1\nff_units=8\n"
                                    "sparse_proj_dim=8\nprovider=hash\nprovider_dim=4\n";
  const auto r = run({"ablation", "--config", (dir / "run.cfg").string(), "--train",
                      (dir / "data/train.jsonl").string(), "--test", (dir / "data/test.jsonl").string(), "--lexical",
                      "on,off", "--dense", "hash,none", "--out", (dir / "table.txt").string()});
  REQUIRE(r.code == 0);
  const auto table = slurp(dir / "table.txt");
  CHECK(std::count(table.begin(), table.end(), '\n') == 6);
  CHECK(table.find("Not Present") != std::string::npos);
  fs::remove_all(dir);
}
