#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "skim/app_config.hpp"

namespace skim {

/// Offline separation without recording a tape.
std::vector<std::vector<double>> separate_waveform(const SeparationModel& model, std::span<const double> mixture);

struct SessionScore {
  double sdri = 0.0;
  std::optional<double> sdri50;
};

struct EvalSummary {
  std::vector<SessionScore> sessions;
  double sdri = 0.0;             // mean over sessions
  std::optional<double> sdri50;  // mean over sessions that have a qualifying window

  Json to_json() const;
};

EvalSummary evaluate(const SeparationModel& model, std::span<const MeetingSession> sessions, const EvalConfig& cfg);
/// Scores given estimates (one entry per session, Q channels each).
EvalSummary evaluate_estimates(std::span<const std::vector<std::vector<double>>> estimates,
                               std::span<const MeetingSession> sessions, const EvalConfig& cfg);

struct AblationRow {
  MemMode mode = MemMode::hc;
  std::uint64_t params = 0;
  std::size_t steps = 0;
  double final_loss = 0.0;
  bool finite = true;
  EvalSummary eval;
};

/// Trains one causal-or-not SkiM per mem mode (hc, h, c, none, id) from the
/// same seed on the same data and evaluates each on `test`.
std::vector<AblationRow> run_ablation(const AppConfig& cfg, std::span<const MeetingSession> train_set,
                                      std::span<const MeetingSession> test_set,
                                      const std::function<void(const std::string&)>& log = {});

Json ablation_json(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace skim
