#pragma once

#include <optional>
#include <string>
#include <vector>

#include "skim/model.hpp"

namespace skim {

/// How per-segment states travel between blocks. `none` zeroes them and
/// `id` forwards them untouched; both carry no Mem-LSTM weights.
enum class MemMode { hc, h, c, none, id };

std::string to_string(MemMode mode);
MemMode parse_mem_mode(const std::string& name);
inline constexpr MemMode kAllMemModes[] = {MemMode::hc, MemMode::h, MemMode::c, MemMode::none,
                                           MemMode::id};

struct SkimConfig {
  std::size_t num_blocks = 2;
  std::size_t hidden = 32;
  std::size_t segment_len = 20;
  std::size_t output_channels = 2;
  bool causal = true;
  MemMode mem_mode = MemMode::hc;
  EncoderConfig encoder{16, 8, 16, Nonlinearity::relu};

  void validate() const;
  std::size_t feature_dim() const { return encoder.feature_dim; }
  Direction direction() const { return causal ? Direction::forward : Direction::bidirectional; }
  std::size_t num_directions() const { return causal ? 1 : 2; }
  /// Width of a per-segment state vector (forward and backward halves when bidirectional).
  std::size_t state_dim() const { return hidden * num_directions(); }
  NormMode norm_mode() const { return causal ? NormMode::feature : NormMode::global; }
  bool has_mem_c() const { return mem_mode == MemMode::hc || mem_mode == MemMode::c; }
  bool has_mem_h() const { return mem_mode == MemMode::hc || mem_mode == MemMode::h; }

  /// 4 blocks, H = 256, K = 150, N = 256, kernel = 2 * stride.
  static SkimConfig full_size(bool causal, std::size_t stride);
};

struct SegmentBatch {
  Tensor segments;  // [S, K, N]
  std::size_t pad_len = 0;
  std::size_t num_segments() const { return segments.dim(0); }
};

/// [T, N] -> S = ceil(T / K) non-overlapping segments, zero-padded tail.
SegmentBatch segment(const Tensor& features, std::size_t segment_len);
/// Inverse of segment(); drops the padded tail.
Tensor merge(const SegmentBatch& batch, std::size_t frames);

/// Seg-LSTM with its projection back to N and residual norm.
struct SegBlock {
  LstmParams lstm;
  LinearParams proj;
  LayerNormParams norm;
};

/// One cross-segment LSTM (for either the cell or the hidden stream).
struct MemLstm {
  LstmParams lstm;
  LinearParams proj;
  LayerNormParams norm;
};

struct MemStage {
  std::optional<MemLstm> c;
  std::optional<MemLstm> h;
};

struct BlockStates {
  Tensor c;  // [S, state_dim]
  Tensor h;  // [S, state_dim]
};

/// Cross-segment processing of per-segment final states. `stage` must carry
/// the Mem-LSTMs that `mode` uses.
BlockStates mem_lstm_update(const BlockStates& states, MemMode mode, bool causal, const MemStage& stage);

class SkimModel : public SeparationModel {
 public:
  SkimModel(const SkimConfig& cfg, std::uint64_t seed);

  const SkimConfig& config() const { return cfg_; }
  Tensor forward_features(const Tensor& features) const override;
  ParamList parameters() const override;
  bool causal() const override { return cfg_.causal; }

  const std::vector<SegBlock>& blocks() const { return blocks_; }
  const std::vector<MemStage>& mem_stages() const { return mem_; }

 private:
  SkimConfig cfg_;
  std::vector<SegBlock> blocks_;
  std::vector<MemStage> mem_;  // between consecutive blocks: num_blocks - 1
};

/// Alias for the separator forward pass on encoded features.
Tensor skim_forward(const Tensor& features, const SkimModel& model);
std::vector<Tensor> skim_separate_offline(const Tensor& mixture, const SkimModel& model);

}  // namespace skim
