#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skim/checkpoint.hpp"

namespace skim {

struct CostRow {
  std::string layer;
  std::uint64_t params = 0;
  double macs_per_frame = 0.0;  // Mem-LSTM rows amortized over the segment
};

struct CostReport {
  std::string model;
  std::vector<CostRow> rows;
  std::uint64_t params = 0;
  double macs_per_frame = 0.0;
  unsigned sample_rate = 0;
  double frames_per_second = 0.0;
  double macs_per_second = 0.0;

  Json to_json() const;
  std::string to_table() const;
};

/// Closed-form parameter counts per layer. MAC fields are left at zero.
CostReport count_params(const ModelSpec& spec);
/// Parameters plus per-frame and per-second MACs (multiply-accumulates;
/// biases and nonlinearities excluded) at `sample_rate`.
CostReport count_macs(const ModelSpec& spec, unsigned sample_rate);

/// Exact multiply count of one offline forward pass over `samples` input
/// samples, including padded segment/chunk frames.
std::uint64_t offline_forward_macs(const ModelSpec& spec, std::size_t samples);

/// Encoder, head and decoder only: the sequence model is the identity.
class PassthroughModel : public SeparationModel {
 public:
  PassthroughModel(const EncoderConfig& encoder, std::size_t output_channels, std::uint64_t seed);
  Tensor forward_features(const Tensor& features) const override { return features; }
  ParamList parameters() const override;
  bool causal() const override { return true; }
};

enum class BenchMode { offline, streaming };
std::string to_string(BenchMode mode);
BenchMode parse_bench_mode(const std::string& name);

struct BenchOptions {
  BenchMode mode = BenchMode::streaming;
  double audio_seconds = 30.0;
  unsigned sample_rate = 16000;
  std::size_t runs = 3;
  std::size_t warmup = 1;
  std::uint64_t seed = 0;
};

struct LatencyReport {
  std::string mode;
  std::size_t runs = 0;
  double audio_seconds = 0.0;
  double ideal_latency_ms = 0.0;  // stride / sample_rate
  double rtf = 0.0;               // mean over runs
  double rtf_std = 0.0;
  double frame_mean_ms = 0.0;
  double frame_p99_ms = 0.0;
  double measured_latency_ms = 0.0;      // ideal + mean per-frame compute
  double measured_latency_p99_ms = 0.0;  // ideal + p99 per-frame compute

  Json to_json() const;
  std::string to_table() const;
};

/// True when the dense kernels run on a single thread.
bool single_threaded();

/// Streaming mode runs the 32-bit streaming engine one stride at a time and
/// requires a causal SkimModel; offline mode times separate() in 64-bit.
LatencyReport bench_rtf(const SeparationModel& model, const BenchOptions& options);

}  // namespace skim
