#pragma once

#include <vector>

#include "skim/model.hpp"

namespace skim {

struct DprnnConfig {
  std::size_t num_blocks = 2;
  std::size_t hidden = 32;
  std::size_t chunk_len = 20;
  double chunk_overlap = 0.5;
  std::size_t output_channels = 2;
  bool causal = true;
  /// The intra-chunk pass sees a fully buffered chunk, so it stays
  /// bidirectional in the causal recipe unless switched off.
  bool intra_bidirectional = true;
  EncoderConfig encoder{16, 8, 16, Nonlinearity::relu};

  void validate() const;
  std::size_t feature_dim() const { return encoder.feature_dim; }
  std::size_t hop() const;
  Direction intra_direction() const {
    return intra_bidirectional ? Direction::bidirectional : Direction::forward;
  }
  Direction inter_direction() const { return causal ? Direction::forward : Direction::bidirectional; }
  NormMode norm_mode() const { return causal ? NormMode::feature : NormMode::global; }

  /// Width-matched counterpart of SkimConfig::full_size: 4 blocks, H = 256,
  /// chunk 150, N = 256.
  static DprnnConfig full_size(bool causal, std::size_t stride);
};

/// Number of chunks covering T frames: ceil(T / hop).
std::size_t dprnn_num_chunks(std::size_t frames, std::size_t hop);

/// [T, N] -> [S, chunk, N]; chunk s covers frames [s*hop, s*hop + chunk), zero beyond T.
Tensor fold_chunks(const Tensor& features, std::size_t chunk_len, std::size_t hop);
/// Overlap-add back to [T, N], averaging each frame over the chunks covering it.
Tensor unfold_chunks(const Tensor& chunks, std::size_t hop, std::size_t frames);

struct DprnnBlock {
  LstmParams intra;
  LinearParams intra_proj;
  LayerNormParams intra_norm;
  LstmParams inter;
  LinearParams inter_proj;
  LayerNormParams inter_norm;
};

class DprnnModel : public SeparationModel {
 public:
  DprnnModel(const DprnnConfig& cfg, std::uint64_t seed);

  const DprnnConfig& config() const { return cfg_; }
  Tensor forward_features(const Tensor& features) const override;
  ParamList parameters() const override;
  bool causal() const override { return cfg_.causal; }

 private:
  DprnnConfig cfg_;
  std::vector<DprnnBlock> blocks_;
};

std::vector<Tensor> dprnn_separate(const Tensor& mixture, const DprnnModel& model);

}  // namespace skim
