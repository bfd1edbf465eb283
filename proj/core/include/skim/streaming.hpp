#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "skim/separator.hpp"

namespace skim {

/// Frame-by-frame inference weights compiled from a causal SkimModel.
/// Immutable after construction; share one engine across sessions.
template <class Real>
class StreamingEngine {
 public:
  explicit StreamingEngine(const SkimModel& model);

  struct Lstm {
    std::size_t in = 0, hidden = 0;
    std::vector<Real> w_ih, w_hh, bias;  // [4H,I], [4H,H], [4H]
  };
  struct Affine {
    std::size_t in = 0, out = 0;
    std::vector<Real> weight, bias;  // [in,out], [out]
  };
  struct Norm {
    std::vector<Real> gain, bias;
  };
  struct Block {
    Lstm lstm;
    Affine proj;
    Norm norm;
  };
  struct Mem {
    bool present = false;
    Lstm lstm;
    Affine proj;
    Norm norm;
  };
  struct Stage {
    Mem c, h;
  };

  const SkimConfig& config() const { return cfg_; }
  const std::vector<Real>& encoder() const { return encoder_; }
  const std::vector<Real>& decoder() const { return decoder_; }
  const Affine& head() const { return head_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const std::vector<Stage>& stages() const { return stages_; }

 private:
  SkimConfig cfg_;
  std::vector<Real> encoder_;  // [N, kernel]
  std::vector<Real> decoder_;  // [N, kernel]
  Affine head_;
  std::vector<Block> blocks_;
  std::vector<Stage> stages_;
};

/// Per-session carried state for causal streaming inference.
template <class Real>
struct StreamState {
  std::shared_ptr<const StreamingEngine<Real>> engine;
  std::vector<Real> pending;  // samples not yet consumed by a full frame
  struct Rnn {
    std::vector<Real> c, h;
  };
  std::vector<Rnn> seg;      // per block, state of the in-progress segment
  std::vector<Rnn> latched;  // per block, initial state for the next segment
  std::vector<Rnn> mem_c, mem_h;  // per stage, running Mem-LSTM states
  std::vector<std::vector<Real>> overlap;  // per channel, decoder tail [kernel]
  std::size_t frame_in_segment = 0;
  std::uint64_t frames = 0;
  std::uint64_t samples_in = 0;
  std::uint64_t samples_out = 0;
  bool finalized = false;
  struct Scratch {
    std::vector<Real> x, y, gates, head, frame, mem_in, mem_out;
  } scratch;
};

template <class Real>
StreamState<Real> stream_init(std::shared_ptr<const StreamingEngine<Real>> engine);

/// Consumes `samples`; returns the Q output chunks that became final. Each
/// chunk holds stride samples per encoder frame completed by this call.
template <class Real>
std::vector<std::vector<Real>> stream_push(StreamState<Real>& state, std::span<const Real> samples);

/// Flushes the decoder tail and pads each channel to the total input length.
template <class Real>
std::vector<std::vector<Real>> stream_finalize(StreamState<Real>& state);

/// Convenience: init + push(all) + finalize, per-channel concatenation.
template <class Real>
std::vector<std::vector<Real>> stream_separate(std::shared_ptr<const StreamingEngine<Real>> engine,
                                               std::span<const Real> samples, std::size_t chunk);

}  // namespace skim
