#pragma once

#include <string>
#include <vector>

#include "skim/checkpoint.hpp"
#include "skim/meetsim.hpp"
#include "skim/profile.hpp"
#include "skim/train.hpp"

namespace skim {

struct DataConfig {
  std::size_t train_sessions = 200;
  std::size_t test_sessions = 20;
};

struct EvalConfig {
  double window_seconds = 2.0;
  double overlap_threshold = 0.5;
};

struct BenchConfig {
  BenchOptions options;
  /// Nonzero exit when the measured RTF reaches this budget.
  double rtf_budget = 1.0;
};

struct TrainRunConfig {
  TrainConfig train;
  double max_seconds = 0.0;  // 0: no wall-clock budget
};

/// Every configurable knob of the command-line tool. Precedence:
/// --set flags > config file > these defaults.
struct AppConfig {
  std::uint64_t seed = 0;
  ModelSpec model;
  SimConfig sim;
  DataConfig data;
  TrainRunConfig train;
  EvalConfig eval;
  BenchConfig bench;
  unsigned profile_sample_rate = 16000;
  std::size_t stream_chunk = 160;
};

Json to_json(const SimConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const AppConfig& c);

SimConfig sim_config_from_json(const Json& j, SimConfig base = {}, const std::string& path = "sim");
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {}, const std::string& path = "train");
AppConfig app_config_from_json(const Json& j);

/// Applies "a.b.c=value" to `doc`; value is parsed as JSON when possible,
/// otherwise taken as a string.
void apply_override(Json& doc, const std::string& assignment);

/// Reads the optional JSON file, applies overrides in order, parses strictly.
AppConfig load_app_config(const std::string& file, const std::vector<std::string>& overrides);

}  // namespace skim
