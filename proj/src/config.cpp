#include "mpner/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mpner {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

unsigned long long parse_uint(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || value.empty())
    throw std::invalid_argument("config key " + key + ": expected a non-negative integer, got '" + value + "'");
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || value.empty())
    throw std::invalid_argument("config key " + key + ": expected a number, got '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  throw std::invalid_argument("config key " + key + ": expected a boolean, got '" + value + "'");
}

}  // namespace

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& c) {
  const ModelConfig& m = c.model;
  return {
      {"lr", fmt_double(c.lr)},
      {"batch_start", std::to_string(c.batch_start)},
      {"batch_end", std::to_string(c.batch_end)},
      {"epochs", std::to_string(c.epochs)},
      {"seed", std::to_string(c.seed)},
      {"eval_every", std::to_string(c.eval_every)},
      {"min_freq", std::to_string(c.min_freq)},
      {"n_max", std::to_string(c.n_max)},
      {"use_lexical", m.use_lexical ? "true" : "false"},
      {"dropout", fmt_double(m.dropout)},
      {"d_model", std::to_string(m.d_model)},
      {"n_heads", std::to_string(m.n_heads)},
      {"ff_units", std::to_string(m.ff_units)},
      {"n_layers", std::to_string(m.n_layers)},
      {"sparse_proj_dim", std::to_string(m.sparse_proj_dim)},
      {"rel_clip", std::to_string(m.rel_clip)},
      {"provider", c.provider.kind},
      {"provider_dim", std::to_string(c.provider.dim)},
      {"provider_seed", std::to_string(c.provider.seed)},
      {"provider_path", c.provider.path},
  };
}

bool apply_config_entry(TrainConfig& c, const std::string& key, const std::string& value) {
  ModelConfig& m = c.model;
  if (key == "lr") c.lr = parse_double(key, value);
  else if (key == "batch_start") c.batch_start = parse_uint(key, value);
  else if (key == "batch_end") c.batch_end = parse_uint(key, value);
  else if (key == "epochs") c.epochs = parse_uint(key, value);
  else if (key == "seed") c.seed = parse_uint(key, value);
  else if (key == "eval_every") c.eval_every = parse_uint(key, value);
  else if (key == "min_freq") c.min_freq = static_cast<int>(parse_uint(key, value));
  else if (key == "n_max") c.n_max = static_cast<int>(parse_uint(key, value));
  else if (key == "use_lexical") m.use_lexical = parse_bool(key, value);
  else if (key == "dropout") m.dropout = parse_double(key, value);
  else if (key == "d_model") m.d_model = parse_uint(key, value);
  else if (key == "n_heads") m.n_heads = parse_uint(key, value);
  else if (key == "ff_units") m.ff_units = parse_uint(key, value);
  else if (key == "n_layers") m.n_layers = parse_uint(key, value);
  else if (key == "sparse_proj_dim") m.sparse_proj_dim = parse_uint(key, value);
  else if (key == "rel_clip") m.rel_clip = parse_uint(key, value);
  else if (key == "provider") c.provider.kind = value;
  else if (key == "provider_dim") c.provider.dim = parse_uint(key, value);
  else if (key == "provider_seed") c.provider.seed = parse_uint(key, value);
  else if (key == "provider_path") c.provider.path = value;
  else return false;
  return true;
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig rc;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": duplicate key " + key);
    if (key == "train_path") rc.train_path = value;
    else if (key == "dev_path") rc.dev_path = value;
    else if (!apply_config_entry(rc.train, key, value))
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key " + key);
  }
  std::string missing;
  for (const char* key : kRequiredKeys)
    if (!seen.count(key)) missing += (missing.empty() ? "" : ", ") + std::string(key);
  if (!missing.empty()) throw std::invalid_argument("config is missing required keys: " + missing);
  rc.train.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

}  // namespace mpner
