#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "skim/tensor.hpp"

namespace skim {

using Rng = std::mt19937_64;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

std::size_t count_scalars(const ParamList& params);

// ---- encoder / decoder ---------------------------------------------------------

enum class Nonlinearity { relu, none };

struct EncoderConfig {
  std::size_t kernel_size = 16;
  std::size_t stride = 8;
  std::size_t feature_dim = 16;
  Nonlinearity nonlinearity = Nonlinearity::relu;

  void validate() const;
  /// floor((L - kernel) / stride) + 1; zero when L < kernel.
  std::size_t num_frames(std::size_t samples) const;
};

/// [L] -> [T, kernel]; row t holds samples [t*stride, t*stride + kernel).
Tensor frame_signal(const Tensor& signal, std::size_t kernel, std::size_t stride);
/// [T, kernel] -> [(T-1)*stride + kernel]
Tensor overlap_add(const Tensor& frames, std::size_t stride);
/// Truncates or zero-pads a 1-D signal to `length`.
Tensor fit_length(const Tensor& signal, std::size_t length);

/// weight: [N, kernel]. Returns [T, N].
Tensor conv1d_encode(const Tensor& signal, const EncoderConfig& cfg, const Tensor& weight);
/// features [T, N], weight [N, kernel]. Output has exactly `length` samples.
Tensor conv1d_decode(const Tensor& features, const EncoderConfig& cfg, const Tensor& weight,
                     std::size_t length);

// ---- linear -----------------------------------------------------------------------

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static LinearParams init(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Affine map over the last axis: [..., in] -> [..., out].
Tensor linear(const Tensor& x, const LinearParams& p);

// ---- layer normalization ------------------------------------------------------------

enum class NormMode { global, feature };

inline constexpr double kLayerNormEps = 1e-8;

struct LayerNormParams {
  Tensor gain;  // [N]
  Tensor bias;  // [N]

  static LayerNormParams init(std::size_t dim);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Normalizes consecutive groups of `group_size` values (population
/// variance), then applies gain/bias over the last axis.
Tensor layer_norm_groups(const Tensor& x, const LayerNormParams& p, std::size_t group_size);

/// feature: each last-axis vector separately. global: each trailing
/// [rows, N] matrix jointly (the whole tensor for rank 2).
Tensor layer_norm(const Tensor& x, const LayerNormParams& p, NormMode mode);

// ---- LSTM -------------------------------------------------------------------------

enum class Direction { forward, bidirectional };

/// One direction's weights; gate order (input, forget, cell, output).
/// A single combined bias per gate block.
struct LstmWeights {
  Tensor w_ih;  // [4H, I]
  Tensor w_hh;  // [4H, H]
  Tensor bias;  // [4H]
};

struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Direction direction = Direction::forward;
  std::vector<LstmWeights> dirs;

  static LstmParams init(std::size_t input_dim, std::size_t hidden_dim, Direction direction,
                         Rng& rng);
  std::size_t num_directions() const { return direction == Direction::bidirectional ? 2 : 1; }
  std::size_t output_dim() const { return hidden_dim * num_directions(); }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// 4(H(I+H) + H) per direction.
std::size_t lstm_param_count(std::size_t input_dim, std::size_t hidden_dim, Direction direction);
/// 4H(I+H) per direction per time step.
std::size_t lstm_step_macs(std::size_t input_dim, std::size_t hidden_dim, Direction direction);

struct LstmState {
  Tensor c;  // [B, H]
  Tensor h;  // [B, H]
};

struct LstmOutput {
  Tensor y;                   // [B, T, H * directions]
  std::vector<LstmState> final;  // one per direction; backward = state after t = 0
};

/// Fused single-direction recurrence. x [B, T, I]; returns [B, T + 2, H]
/// packing per-step outputs, then final h, then final c.
Tensor lstm_direction(const Tensor& x, const LstmState& initial, const LstmWeights& w,
                      bool reverse);

/// x [B, T, I]. `initial` holds one state per direction (zeros if empty).
LstmOutput lstm_sequence(const Tensor& x, const LstmParams& p,
                         const std::vector<LstmState>& initial = {});

struct LstmStep {
  Tensor y, c, h;  // [H] each
};

/// Single forward step on vectors x [I], c [H], h [H].
LstmStep lstm_step(const Tensor& x, const Tensor& c, const Tensor& h, const LstmParams& p);

LstmState zero_state(std::size_t batch, std::size_t hidden);

}  // namespace skim
