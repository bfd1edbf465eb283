#include "skim/separator.hpp"

namespace skim {

namespace {

MemLstm make_mem_lstm(const SkimConfig& cfg, Rng& rng) {
  const std::size_t w = cfg.state_dim();
  return {LstmParams::init(w, cfg.hidden, cfg.direction(), rng), LinearParams::init(w, w, rng),
          LayerNormParams::init(w)};
}

Tensor apply_mem_lstm(const Tensor& states, const MemLstm& m, bool causal) {
  const std::size_t S = states.dim(0), W = states.dim(1);
  Tensor y = lstm_sequence(reshape(states, {1, S, W}), m.lstm).y;
  Tensor n = layer_norm(linear(y, m.proj), m.norm, causal ? NormMode::feature : NormMode::global);
  return add(reshape(n, {S, W}), states);
}

// Row s of the result is row s-1 of `states`; row 0 is zero.
Tensor shift_segments(const Tensor& states) {
  const std::size_t S = states.dim(0), W = states.dim(1);
  Tensor zero({1, W}, 0.0);
  if (S == 1) return zero;
  return concat({zero, slice(states, 0, 0, S - 1)}, 0);
}

}  // namespace

std::string to_string(MemMode mode) {
  switch (mode) {
    case MemMode::hc: return "hc";
    case MemMode::h: return "h";
    case MemMode::c: return "c";
    case MemMode::none: return "none";
    case MemMode::id: return "id";
  }
  return "?";
}

MemMode parse_mem_mode(const std::string& name) {
  for (MemMode m : kAllMemModes)
    if (to_string(m) == name) return m;
  throw Error("unknown mem_mode '" + name + "' (expected hc, h, c, none or id)");
}

void SkimConfig::validate() const {
  encoder.validate();
  if (num_blocks < 1) throw Error("skim: num_blocks must be >= 1");
  if (segment_len < 1) throw Error("skim: segment_len must be >= 1");
  if (hidden < 1) throw Error("skim: hidden must be >= 1");
  if (output_channels < 2) throw Error("skim: output_channels must be >= 2");
}

SkimConfig SkimConfig::full_size(bool causal, std::size_t stride) {
  SkimConfig c;
  c.num_blocks = 4;
  c.hidden = 256;
  c.segment_len = 150;
  c.output_channels = 2;
  c.causal = causal;
  c.mem_mode = MemMode::hc;
  c.encoder = EncoderConfig{2 * stride, stride, 256, Nonlinearity::relu};
  return c;
}

SegmentBatch segment(const Tensor& features, std::size_t segment_len) {
  if (features.rank() != 2 || features.dim(0) == 0)
    throw ShapeError("segment: expected [T>=1, N], got " + to_string(features.shape()));
  if (segment_len == 0) throw Error("segment: segment_len must be >= 1");
  const std::size_t T = features.dim(0), N = features.dim(1);
  const std::size_t S = (T + segment_len - 1) / segment_len;
  const std::size_t pad = S * segment_len - T;
  return {reshape(pad_rows(features, pad), {S, segment_len, N}), pad};
}

Tensor merge(const SegmentBatch& batch, std::size_t frames) {
  const Tensor& seg = batch.segments;
  if (seg.rank() != 3) throw ShapeError("merge: expected [S,K,N], got " + to_string(seg.shape()));
  const std::size_t S = seg.dim(0), K = seg.dim(1), N = seg.dim(2);
  if (frames + batch.pad_len != S * K || batch.pad_len >= K)
    throw ShapeError("merge: T=" + std::to_string(frames) + " inconsistent with " + std::to_string(S) +
                     " segments of " + std::to_string(K) + " frames and pad " + std::to_string(batch.pad_len));
  Tensor flat = reshape(seg, {S * K, N});
  return batch.pad_len == 0 ? flat : slice(flat, 0, 0, frames);
}

BlockStates mem_lstm_update(const BlockStates& states, MemMode mode, bool causal, const MemStage& stage) {
  if (states.c.rank() != 2 || states.c.shape() != states.h.shape() || states.c.dim(0) == 0)
    throw ShapeError("mem_lstm_update: state shapes " + to_string(states.c.shape()) + " / " +
                     to_string(states.h.shape()));
  const Shape shape = states.c.shape();
  switch (mode) {
    case MemMode::id:
      return states;
    case MemMode::none:
      return {Tensor(shape, 0.0), Tensor(shape, 0.0)};
    case MemMode::hc:
    case MemMode::h:
    case MemMode::c: {
      const bool want_c = mode != MemMode::h, want_h = mode != MemMode::c;
      if ((want_c && !stage.c) || (want_h && !stage.h))
        throw Error("mem_lstm_update: stage lacks the Mem-LSTM required by mode " + to_string(mode));
      return {want_c ? apply_mem_lstm(states.c, *stage.c, causal) : Tensor(shape, 0.0),
              want_h ? apply_mem_lstm(states.h, *stage.h, causal) : Tensor(shape, 0.0)};
    }
  }
  throw Error("mem_lstm_update: unknown mode");
}

SkimModel::SkimModel(const SkimConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  head_ = SeparatorHead::init(cfg_.encoder, cfg_.output_channels, rng);
  const std::size_t N = cfg_.feature_dim();
  for (std::size_t l = 0; l < cfg_.num_blocks; ++l) {
    SegBlock b{LstmParams::init(N, cfg_.hidden, cfg_.direction(), rng),
               LinearParams::init(cfg_.state_dim(), N, rng), LayerNormParams::init(N)};
    blocks_.push_back(std::move(b));
  }
  for (std::size_t l = 0; l + 1 < cfg_.num_blocks; ++l) {
    MemStage stage;
    if (cfg_.has_mem_c()) stage.c = make_mem_lstm(cfg_, rng);
    if (cfg_.has_mem_h()) stage.h = make_mem_lstm(cfg_, rng);
    mem_.push_back(std::move(stage));
  }
}

ParamList SkimModel::parameters() const {
  ParamList out;
  head_.collect(out);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".seg";
    blocks_[l].lstm.collect(p + ".lstm", out);
    blocks_[l].proj.collect(p + ".proj", out);
    blocks_[l].norm.collect(p + ".norm", out);
  }
  for (std::size_t l = 0; l < mem_.size(); ++l) {
    const std::string p = "mem." + std::to_string(l);
    for (auto [name, m] : {std::pair{".c", &mem_[l].c}, std::pair{".h", &mem_[l].h}}) {
      if (!*m) continue;
      (*m)->lstm.collect(p + name + ".lstm", out);
      (*m)->proj.collect(p + name + ".proj", out);
      (*m)->norm.collect(p + name + ".norm", out);
    }
  }
  return out;
}

Tensor SkimModel::forward_features(const Tensor& features) const {
  const std::size_t N = cfg_.feature_dim(), H = cfg_.hidden, dirs = cfg_.num_directions();
  if (features.rank() != 2 || features.dim(1) != N)
    throw ShapeError("skim_forward: features " + to_string(features.shape()) + " expect N=" + std::to_string(N));
  const std::size_t T = features.dim(0);
  SegmentBatch batch = segment(features, cfg_.segment_len);
  Tensor x = batch.segments;
  std::optional<BlockStates> carried;  // Mem-LSTM output feeding the next block

  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const SegBlock& blk = blocks_[l];
    std::vector<LstmState> init;
    if (carried) {
      Tensor c = cfg_.causal ? shift_segments(carried->c) : carried->c;
      Tensor h = cfg_.causal ? shift_segments(carried->h) : carried->h;
      for (std::size_t d = 0; d < dirs; ++d)
        init.push_back({dirs == 1 ? c : slice(c, 1, d * H, (d + 1) * H),
                        dirs == 1 ? h : slice(h, 1, d * H, (d + 1) * H)});
    }
    LstmOutput out = lstm_sequence(x, blk.lstm, init);
    x = add(layer_norm(linear(out.y, blk.proj), blk.norm, cfg_.norm_mode()), x);

    if (l + 1 < blocks_.size()) {
      std::vector<Tensor> cs, hs;
      for (const auto& f : out.final) {
        cs.push_back(f.c);
        hs.push_back(f.h);
      }
      BlockStates finals{dirs == 1 ? cs[0] : concat(cs, 1), dirs == 1 ? hs[0] : concat(hs, 1)};
      carried = mem_lstm_update(finals, cfg_.mem_mode, cfg_.causal, mem_[l]);
    }
  }
  return merge({x, batch.pad_len}, T);
}

Tensor skim_forward(const Tensor& features, const SkimModel& model) {
  return model.forward_features(features);
}

std::vector<Tensor> skim_separate_offline(const Tensor& mixture, const SkimModel& model) {
  return model.separate(mixture);
}

}  // namespace skim
