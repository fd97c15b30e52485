#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mpner/train.hpp"

namespace mpner {

// Flat "key=value" run configuration; '#' starts a comment line.
struct RunConfig {
  TrainConfig train;
  std::string train_path;
  std::string dev_path;
};

inline constexpr const char* kRequiredKeys[] = {"epochs", "seed", "d_model", "n_heads", "n_layers", "provider"};

// Unknown keys and missing required keys are errors; the result is validated.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);

// Every TrainConfig field as (key, value) in a fixed order. Doubles are
// printed with round-trip precision.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& config);

// Sets one field; returns false for keys it does not know.
bool apply_config_entry(TrainConfig& config, const std::string& key, const std::string& value);

}  // namespace mpner
