#pragma once

#include <memory>
#include <vector>

#include "skim/layers.hpp"

namespace skim {

/// Encoder, per-channel FC head and shared transposed-conv decoder around a
/// sequence separator.
struct SeparatorHead {
  EncoderConfig encoder;
  std::size_t output_channels = 2;
  Tensor encoder_weight;  // [N, kernel]
  LinearParams head;      // N -> Q*N
  Tensor decoder_weight;  // [N, kernel]

  static SeparatorHead init(const EncoderConfig& encoder, std::size_t output_channels, Rng& rng);
  void collect(ParamList& out) const;

  Tensor encode(const Tensor& mixture) const;
  /// features [T, N] -> Q waveforms of `length` samples.
  std::vector<Tensor> decode(const Tensor& features, std::size_t length) const;

  std::size_t param_count() const;
};

class SeparationModel {
 public:
  virtual ~SeparationModel() = default;

  /// mixture [L] -> Q waveforms, each of length L.
  std::vector<Tensor> separate(const Tensor& mixture) const;
  /// The sequence model between encoder and head: [T, N] -> [T, N].
  virtual Tensor forward_features(const Tensor& features) const = 0;

  virtual ParamList parameters() const = 0;
  virtual bool causal() const = 0;
  const SeparatorHead& head() const { return head_; }
  const EncoderConfig& encoder() const { return head_.encoder; }
  std::size_t output_channels() const { return head_.output_channels; }

 protected:
  SeparatorHead head_;
};

}  // namespace skim
