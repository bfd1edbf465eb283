#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "skim/checkpoint.hpp"
#include "skim/graph_pit.hpp"
#include "skim/meetsim.hpp"

namespace skim {

struct TrainConfig {
  double lr0 = 1e-3;
  double decay = 0.97;
  double clip_norm = 5.0;
  std::size_t epochs = 100;
  /// Steps per epoch; 0 means one pass over the dataset.
  std::size_t steps_per_epoch = 0;
  double clip_seconds = 30.0;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  TsdrParams tsdr;

  void validate() const;
};

/// lr0 * decay^epoch
double lr_at(const TrainConfig& cfg, long epoch);

double global_l2_norm(std::span<const std::vector<double>> grads);
/// Scales every gradient by clip_norm / g when the global norm g exceeds
/// clip_norm. Returns g.
double clip_grad_l2(std::span<std::vector<double>> grads, double clip_norm);
/// Same, acting on the accumulated gradients of `params`.
double clip_grad_l2(const ParamList& params, double clip_norm);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;

  static AdamState zeros(const ParamList& params);
};

/// One bias-corrected Adam update of a single tensor at step t >= 1.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::uint64_t t, double lr, const TrainConfig& cfg);
/// Advances state.t and updates every parameter from its gradient.
void adam_step(const ParamList& params, AdamState& state, double lr, const TrainConfig& cfg);

/// Uniformly placed window of clip_seconds; utterances are truncated to the
/// window and re-offset, those outside it are dropped.
MeetingSession random_clip(const MeetingSession& session, double clip_seconds, std::mt19937_64& rng);

struct StepMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no checkpoints or metrics on disk
  bool resume = false;
  std::function<void(const StepMetrics&)> on_step;
  /// Stops after the epoch during which this wall-clock budget ran out.
  double max_seconds = std::numeric_limits<double>::infinity();
};

struct TrainResult {
  std::size_t epochs_completed = 0;
  std::size_t steps = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<double> epoch_losses;
  std::filesystem::path last_checkpoint;
};

/// Mean Graph-PIT loss of `sessions` through `model`, batched as a training step.
Tensor batch_loss(const SeparationModel& model, std::span<const MeetingSession> sessions, const TrainConfig& cfg);

/// Training state carried across epochs and checkpoints.
struct TrainerState {
  AdamState adam;
  std::mt19937_64 rng;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double best_loss = std::numeric_limits<double>::infinity();
};

TrainResult train(SeparationModel& model, const ModelSpec& spec, std::span<const MeetingSession> dataset,
                  const TrainConfig& cfg, const TrainOptions& options = {});

/// Checkpoint files written by train(): epoch_<n>.ckpt and best.ckpt.
std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, std::size_t epoch);
std::filesystem::path latest_checkpoint(const std::filesystem::path& dir);

}  // namespace skim
