#include "skim/streaming.hpp"

#include <algorithm>
#include <cmath>

namespace skim {

namespace {

template <class Real>
std::vector<Real> to_real(const Tensor& t) {
  auto d = t.data();
  return std::vector<Real>(d.begin(), d.end());
}

template <class Real>
typename StreamingEngine<Real>::Lstm compile_lstm(const LstmParams& p) {
  return {p.input_dim, p.hidden_dim, to_real<Real>(p.dirs[0].w_ih), to_real<Real>(p.dirs[0].w_hh),
          to_real<Real>(p.dirs[0].bias)};
}

template <class Real>
typename StreamingEngine<Real>::Affine compile_affine(const LinearParams& p) {
  return {p.in_dim(), p.out_dim(), to_real<Real>(p.weight), to_real<Real>(p.bias)};
}

template <class Real>
typename StreamingEngine<Real>::Norm compile_norm(const LayerNormParams& p) {
  return {to_real<Real>(p.gain), to_real<Real>(p.bias)};
}

template <class Real>
inline Real sigm(Real v) {
  return Real(1) / (Real(1) + std::exp(-v));
}

// One LSTM step in place on (c, h); gates is scratch of size 4H.
template <class Real>
void lstm_step(const typename StreamingEngine<Real>::Lstm& w, const Real* x, std::vector<Real>& c,
               std::vector<Real>& h, std::vector<Real>& gates) {
  const std::size_t H = w.hidden, G = 4 * H;
  gates.resize(G);
  gemm(false, true, 1, G, w.in, x, w.w_ih.data(), gates.data(), false);
  gemm(false, true, 1, G, H, h.data(), w.w_hh.data(), gates.data(), true);
  for (std::size_t j = 0; j < H; ++j) {
    const Real ig = sigm(gates[j] + w.bias[j]);
    const Real fg = sigm(gates[H + j] + w.bias[H + j]);
    const Real gg = std::tanh(gates[2 * H + j] + w.bias[2 * H + j]);
    const Real og = sigm(gates[3 * H + j] + w.bias[3 * H + j]);
    c[j] = fg * c[j] + ig * gg;
    h[j] = og * std::tanh(c[j]);
  }
}

template <class Real>
void affine(const typename StreamingEngine<Real>::Affine& a, const Real* x, std::vector<Real>& y) {
  y.resize(a.out);
  std::copy(a.bias.begin(), a.bias.end(), y.begin());
  gemm(false, false, 1, a.out, a.in, x, a.weight.data(), y.data(), true);
}

// y <- LN(y) + residual, per-vector (feature mode).
template <class Real>
void norm_residual(const typename StreamingEngine<Real>::Norm& n, std::vector<Real>& y, const Real* residual) {
  const std::size_t N = y.size();
  Real mu = 0;
  for (Real v : y) mu += v;
  mu /= Real(N);
  Real var = 0;
  for (Real v : y) var += (v - mu) * (v - mu);
  var /= Real(N);
  const Real inv = Real(1) / std::sqrt(var + Real(kLayerNormEps));
  for (std::size_t i = 0; i < N; ++i) y[i] = (y[i] - mu) * inv * n.gain[i] + n.bias[i] + residual[i];
}

template <class Real>
void mem_step(const typename StreamingEngine<Real>::Mem& m, const std::vector<Real>& input,
              typename StreamState<Real>::Rnn& run, std::vector<Real>& out,
              typename StreamState<Real>::Scratch& s) {
  lstm_step<Real>(m.lstm, input.data(), run.c, run.h, s.gates);
  affine<Real>(m.proj, run.h.data(), out);
  norm_residual<Real>(m.norm, out, input.data());
}

template <class Real>
void segment_boundary(StreamState<Real>& st) {
  const auto& eng = *st.engine;
  const auto& cfg = eng.config();
  const std::size_t H = cfg.hidden;
  for (std::size_t l = 0; l + 1 < eng.blocks().size(); ++l) {
    const auto& stage = eng.stages()[l];
    auto& next = st.latched[l + 1];
    const auto& fin = st.seg[l];
    switch (cfg.mem_mode) {
      case MemMode::id:
        next.c = fin.c;
        next.h = fin.h;
        break;
      case MemMode::none:
        std::fill(next.c.begin(), next.c.end(), Real(0));
        std::fill(next.h.begin(), next.h.end(), Real(0));
        break;
      default:
        if (stage.c.present)
          mem_step<Real>(stage.c, fin.c, st.mem_c[l], next.c, st.scratch);
        else
          next.c.assign(H, Real(0));
        if (stage.h.present)
          mem_step<Real>(stage.h, fin.h, st.mem_h[l], next.h, st.scratch);
        else
          next.h.assign(H, Real(0));
    }
  }
  for (std::size_t l = 0; l < st.seg.size(); ++l) st.seg[l] = st.latched[l];
  st.frame_in_segment = 0;
}

template <class Real>
void process_frame(StreamState<Real>& st, const Real* frame, std::vector<std::vector<Real>>& out) {
  const auto& eng = *st.engine;
  const auto& cfg = eng.config();
  const std::size_t N = cfg.feature_dim(), k = cfg.encoder.kernel_size, stride = cfg.encoder.stride;
  auto& s = st.scratch;

  s.x.resize(N);
  gemm(false, true, 1, N, k, frame, eng.encoder().data(), s.x.data(), false);
  if (cfg.encoder.nonlinearity == Nonlinearity::relu)
    for (Real& v : s.x) v = std::max(v, Real(0));

  for (std::size_t l = 0; l < eng.blocks().size(); ++l) {
    const auto& b = eng.blocks()[l];
    lstm_step<Real>(b.lstm, s.x.data(), st.seg[l].c, st.seg[l].h, s.gates);
    affine<Real>(b.proj, st.seg[l].h.data(), s.y);
    norm_residual<Real>(b.norm, s.y, s.x.data());
    std::swap(s.x, s.y);
  }

  affine<Real>(eng.head(), s.x.data(), s.head);
  s.frame.resize(k);
  for (std::size_t q = 0; q < cfg.output_channels; ++q) {
    gemm(false, false, 1, k, N, s.head.data() + q * N, eng.decoder().data(), s.frame.data(), false);
    auto& ov = st.overlap[q];
    for (std::size_t j = 0; j < k; ++j) ov[j] += s.frame[j];
    out[q].insert(out[q].end(), ov.begin(), ov.begin() + stride);
    std::copy(ov.begin() + stride, ov.end(), ov.begin());
    std::fill(ov.end() - stride, ov.end(), Real(0));
  }
  st.samples_out += stride;
  ++st.frames;
  if (++st.frame_in_segment == cfg.segment_len) segment_boundary(st);
}

}  // namespace

template <class Real>
StreamingEngine<Real>::StreamingEngine(const SkimModel& model) : cfg_(model.config()) {
  if (!cfg_.causal) throw Error("streaming requires causal model");
  const auto& head = model.head();
  encoder_ = to_real<Real>(head.encoder_weight);
  decoder_ = to_real<Real>(head.decoder_weight);
  head_ = compile_affine<Real>(head.head);
  for (const auto& b : model.blocks())
    blocks_.push_back({compile_lstm<Real>(b.lstm), compile_affine<Real>(b.proj), compile_norm<Real>(b.norm)});
  for (const auto& st : model.mem_stages()) {
    Stage out;
    auto fill = [](Mem& m, const std::optional<MemLstm>& src) {
      if (!src) return;
      m.present = true;
      m.lstm = compile_lstm<Real>(src->lstm);
      m.proj = compile_affine<Real>(src->proj);
      m.norm = compile_norm<Real>(src->norm);
    };
    fill(out.c, st.c);
    fill(out.h, st.h);
    stages_.push_back(std::move(out));
  }
}

template <class Real>
StreamState<Real> stream_init(std::shared_ptr<const StreamingEngine<Real>> engine) {
  if (!engine) throw Error("stream_init: null engine");
  if (!engine->config().causal) throw Error("streaming requires causal model");
  const auto& cfg = engine->config();
  const std::size_t H = cfg.hidden, L = cfg.num_blocks;
  StreamState<Real> st;
  st.engine = std::move(engine);
  typename StreamState<Real>::Rnn zero{std::vector<Real>(H, 0), std::vector<Real>(H, 0)};
  st.seg.assign(L, zero);
  st.latched.assign(L, zero);
  st.mem_c.assign(L > 0 ? L - 1 : 0, zero);
  st.mem_h.assign(L > 0 ? L - 1 : 0, zero);
  st.overlap.assign(cfg.output_channels, std::vector<Real>(cfg.encoder.kernel_size, 0));
  return st;
}

template <class Real>
std::vector<std::vector<Real>> stream_push(StreamState<Real>& st, std::span<const Real> samples) {
  if (!st.engine) throw Error("stream_push: state not initialized");
  if (st.finalized) throw Error("stream_push: push after finalize");
  const auto& cfg = st.engine->config();
  const std::size_t k = cfg.encoder.kernel_size, stride = cfg.encoder.stride;
  std::vector<std::vector<Real>> out(cfg.output_channels);
  st.pending.insert(st.pending.end(), samples.begin(), samples.end());
  st.samples_in += samples.size();
  std::size_t pos = 0;
  while (st.pending.size() - pos >= k) {
    process_frame(st, st.pending.data() + pos, out);
    pos += stride;
  }
  st.pending.erase(st.pending.begin(), st.pending.begin() + static_cast<std::ptrdiff_t>(pos));
  return out;
}

template <class Real>
std::vector<std::vector<Real>> stream_finalize(StreamState<Real>& st) {
  if (!st.engine) throw Error("stream_finalize: state not initialized");
  if (st.finalized) throw Error("stream_finalize: already finalized");
  st.finalized = true;
  const auto& cfg = st.engine->config();
  std::vector<std::vector<Real>> out(cfg.output_channels);
  const std::uint64_t remaining = st.samples_in - st.samples_out;
  const std::size_t tail = st.frames > 0 ? cfg.encoder.kernel_size - cfg.encoder.stride : 0;
  for (std::size_t q = 0; q < cfg.output_channels; ++q) {
    const auto& ov = st.overlap[q];
    const std::size_t from_tail = static_cast<std::size_t>(std::min<std::uint64_t>(tail, remaining));
    out[q].assign(ov.begin(), ov.begin() + from_tail);
    out[q].resize(remaining, Real(0));
  }
  st.samples_out += remaining;
  return out;
}

template <class Real>
std::vector<std::vector<Real>> stream_separate(std::shared_ptr<const StreamingEngine<Real>> engine,
                                               std::span<const Real> samples, std::size_t chunk) {
  if (chunk == 0) throw Error("stream_separate: chunk must be >= 1");
  StreamState<Real> st = stream_init(std::move(engine));
  std::vector<std::vector<Real>> result(st.engine->config().output_channels);
  auto append = [&](const std::vector<std::vector<Real>>& part) {
    for (std::size_t q = 0; q < part.size(); ++q) result[q].insert(result[q].end(), part[q].begin(), part[q].end());
  };
  for (std::size_t pos = 0; pos < samples.size(); pos += chunk)
    append(stream_push<Real>(st, samples.subspan(pos, std::min(chunk, samples.size() - pos))));
  append(stream_finalize(st));
  return result;
}

template class StreamingEngine<float>;
template class StreamingEngine<double>;

#define SKIM_INSTANTIATE(Real)                                                                        \
  template StreamState<Real> stream_init(std::shared_ptr<const StreamingEngine<Real>>);              \
  template std::vector<std::vector<Real>> stream_push(StreamState<Real>&, std::span<const Real>);    \
  template std::vector<std::vector<Real>> stream_finalize(StreamState<Real>&);                        \
  template std::vector<std::vector<Real>> stream_separate(std::shared_ptr<const StreamingEngine<Real>>, \
                                                          std::span<const Real>, std::size_t);
SKIM_INSTANTIATE(float)
SKIM_INSTANTIATE(double)
#undef SKIM_INSTANTIATE

}  // namespace skim
