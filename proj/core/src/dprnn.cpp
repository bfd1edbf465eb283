#include "skim/dprnn.hpp"

#include <algorithm>
#include <cmath>

namespace skim {

namespace {

Tensor norm_residual(const Tensor& y, const Tensor& x, const LayerNormParams& norm, NormMode mode) {
  Tensor n = mode == NormMode::feature ? layer_norm(y, norm, NormMode::feature)
                                       : layer_norm_groups(y, norm, y.size());
  return add(n, x);
}

}  // namespace

void DprnnConfig::validate() const {
  encoder.validate();
  if (num_blocks < 1) throw Error("dprnn: num_blocks must be >= 1");
  if (chunk_len < 1) throw Error("dprnn: chunk_len must be >= 1");
  if (hidden < 1) throw Error("dprnn: hidden must be >= 1");
  if (!(chunk_overlap >= 0.0 && chunk_overlap <= 0.9)) throw Error("dprnn: chunk_overlap must lie in [0, 0.9]");
  if (output_channels < 2) throw Error("dprnn: output_channels must be >= 2");
}

std::size_t DprnnConfig::hop() const {
  const auto h = static_cast<std::size_t>(std::lround(double(chunk_len) * (1.0 - chunk_overlap)));
  return std::max<std::size_t>(1, h);
}

DprnnConfig DprnnConfig::full_size(bool causal, std::size_t stride) {
  DprnnConfig c;
  c.num_blocks = 4;
  c.hidden = 256;
  c.chunk_len = 150;
  c.chunk_overlap = 0.5;
  c.output_channels = 2;
  c.causal = causal;
  c.encoder = EncoderConfig{2 * stride, stride, 256, Nonlinearity::relu};
  return c;
}

std::size_t dprnn_num_chunks(std::size_t frames, std::size_t hop) {
  return (frames + hop - 1) / hop;
}

Tensor fold_chunks(const Tensor& features, std::size_t chunk_len, std::size_t hop) {
  if (features.rank() != 2 || features.dim(0) == 0)
    throw ShapeError("fold_chunks: expected [T>=1, N], got " + to_string(features.shape()));
  const std::size_t T = features.dim(0), N = features.dim(1);
  const std::size_t S = dprnn_num_chunks(T, hop);
  std::vector<double> out(S * chunk_len * N, 0.0);
  auto v = features.data();
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t k = 0; k < chunk_len && s * hop + k < T; ++k)
      std::copy_n(v.data() + (s * hop + k) * N, N, out.data() + (s * chunk_len + k) * N);
  return make_result("fold_chunks", {S, chunk_len, N}, std::move(out), {features},
                     [S, chunk_len, hop, T, N](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t s = 0; s < S; ++s)
                         for (std::size_t k = 0; k < chunk_len && s * hop + k < T; ++k)
                           for (std::size_t n = 0; n < N; ++n)
                             g[(s * hop + k) * N + n] += self.grad[(s * chunk_len + k) * N + n];
                     });
}

Tensor unfold_chunks(const Tensor& chunks, std::size_t hop, std::size_t frames) {
  if (chunks.rank() != 3) throw ShapeError("unfold_chunks: expected [S,chunk,N], got " + to_string(chunks.shape()));
  const std::size_t S = chunks.dim(0), C = chunks.dim(1), N = chunks.dim(2);
  if (S != dprnn_num_chunks(frames, hop))
    throw ShapeError("unfold_chunks: " + std::to_string(S) + " chunks do not cover " + std::to_string(frames) + " frames");
  std::vector<double> count(frames, 0.0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t k = 0; k < C && s * hop + k < frames; ++k) count[s * hop + k] += 1.0;
  std::vector<double> out(frames * N, 0.0);
  auto v = chunks.data();
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t k = 0; k < C && s * hop + k < frames; ++k) {
      const std::size_t t = s * hop + k;
      for (std::size_t n = 0; n < N; ++n) out[t * N + n] += v[(s * C + k) * N + n] / count[t];
    }
  return make_result("unfold_chunks", {frames, N}, std::move(out), {chunks},
                     [S, C, N, hop, frames, count = std::move(count)](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t s = 0; s < S; ++s)
                         for (std::size_t k = 0; k < C && s * hop + k < frames; ++k) {
                           const std::size_t t = s * hop + k;
                           for (std::size_t n = 0; n < N; ++n)
                             g[(s * C + k) * N + n] += self.grad[t * N + n] / count[t];
                         }
                     });
}

DprnnModel::DprnnModel(const DprnnConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  head_ = SeparatorHead::init(cfg_.encoder, cfg_.output_channels, rng);
  const std::size_t N = cfg_.feature_dim(), H = cfg_.hidden;
  for (std::size_t l = 0; l < cfg_.num_blocks; ++l) {
    DprnnBlock b;
    b.intra = LstmParams::init(N, H, cfg_.intra_direction(), rng);
    b.intra_proj = LinearParams::init(b.intra.output_dim(), N, rng);
    b.intra_norm = LayerNormParams::init(N);
    b.inter = LstmParams::init(N, H, cfg_.inter_direction(), rng);
    b.inter_proj = LinearParams::init(b.inter.output_dim(), N, rng);
    b.inter_norm = LayerNormParams::init(N);
    blocks_.push_back(std::move(b));
  }
}

ParamList DprnnModel::parameters() const {
  ParamList out;
  head_.collect(out);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const std::string p = "blocks." + std::to_string(l);
    blocks_[l].intra.collect(p + ".intra.lstm", out);
    blocks_[l].intra_proj.collect(p + ".intra.proj", out);
    blocks_[l].intra_norm.collect(p + ".intra.norm", out);
    blocks_[l].inter.collect(p + ".inter.lstm", out);
    blocks_[l].inter_proj.collect(p + ".inter.proj", out);
    blocks_[l].inter_norm.collect(p + ".inter.norm", out);
  }
  return out;
}

Tensor DprnnModel::forward_features(const Tensor& features) const {
  const std::size_t N = cfg_.feature_dim();
  if (features.rank() != 2 || features.dim(1) != N)
    throw ShapeError("dprnn: features " + to_string(features.shape()) + " expect N=" + std::to_string(N));
  const std::size_t T = features.dim(0), hop = cfg_.hop();
  Tensor x = fold_chunks(features, cfg_.chunk_len, hop);  // [S, chunk, N]
  for (const auto& b : blocks_) {
    Tensor intra = linear(lstm_sequence(x, b.intra).y, b.intra_proj);
    x = norm_residual(intra, x, b.intra_norm, cfg_.norm_mode());
    Tensor across = swap_axes01(x);  // [chunk, S, N]: sequences over chunks
    Tensor inter = linear(lstm_sequence(across, b.inter).y, b.inter_proj);
    x = swap_axes01(norm_residual(inter, across, b.inter_norm, cfg_.norm_mode()));
  }
  return unfold_chunks(x, hop, T);
}

std::vector<Tensor> dprnn_separate(const Tensor& mixture, const DprnnModel& model) {
  return model.separate(mixture);
}

}  // namespace skim
