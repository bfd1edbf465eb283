#include "skim/layers.hpp"

#include <algorithm>
#include <cmath>

namespace skim {

namespace {

std::vector<double> uniform(std::size_t n, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), uniform(n, bound, rng), true);
}

inline double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

std::size_t count_scalars(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

// ---- encoder / decoder -------------------------------------------------------------

void EncoderConfig::validate() const {
  if (stride < 1) throw Error("encoder: stride must be >= 1");
  if (kernel_size != 2 * stride)
    throw Error("encoder: kernel_size must equal 2 * stride (got " + std::to_string(kernel_size) +
                " and " + std::to_string(stride) + ")");
  if (feature_dim < 1) throw Error("encoder: feature_dim must be >= 1");
}

std::size_t EncoderConfig::num_frames(std::size_t samples) const {
  if (samples < kernel_size) return 0;
  return (samples - kernel_size) / stride + 1;
}

Tensor frame_signal(const Tensor& signal, std::size_t kernel, std::size_t stride) {
  if (signal.rank() != 1) throw ShapeError("frame_signal: expected 1-D signal, got " + to_string(signal.shape()));
  const std::size_t len = signal.size();
  if (len < kernel) throw ShapeError("conv1d_encode: input shorter than one frame");
  const std::size_t frames = (len - kernel) / stride + 1;
  std::vector<double> out(frames * kernel);
  auto v = signal.data();
  for (std::size_t t = 0; t < frames; ++t)
    std::copy_n(v.data() + t * stride, kernel, out.data() + t * kernel);
  return make_result("frame_signal", {frames, kernel}, std::move(out), {signal},
                     [frames, kernel, stride](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t t = 0; t < frames; ++t)
                         for (std::size_t j = 0; j < kernel; ++j)
                           g[t * stride + j] += self.grad[t * kernel + j];
                     });
}

Tensor overlap_add(const Tensor& frames, std::size_t stride) {
  if (frames.rank() != 2 || frames.dim(0) == 0)
    throw ShapeError("overlap_add: expected [T>=1, kernel], got " + to_string(frames.shape()));
  const std::size_t T = frames.dim(0), kernel = frames.dim(1);
  const std::size_t len = (T - 1) * stride + kernel;
  std::vector<double> out(len, 0.0);
  auto v = frames.data();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < kernel; ++j) out[t * stride + j] += v[t * kernel + j];
  return make_result("overlap_add", {len}, std::move(out), {frames},
                     [T, kernel, stride](detail::Node& self) {
                       auto& g = self.parents[0]->grad_buffer();
                       for (std::size_t t = 0; t < T; ++t)
                         for (std::size_t j = 0; j < kernel; ++j)
                           g[t * kernel + j] += self.grad[t * stride + j];
                     });
}

Tensor fit_length(const Tensor& signal, std::size_t length) {
  if (signal.rank() != 1) throw ShapeError("fit_length: expected 1-D signal");
  if (signal.size() >= length) return signal.size() == length ? signal : slice(signal, 0, 0, length);
  return pad_rows(signal, length - signal.size());
}

Tensor conv1d_encode(const Tensor& signal, const EncoderConfig& cfg, const Tensor& weight) {
  if (weight.rank() != 2 || weight.dim(0) != cfg.feature_dim || weight.dim(1) != cfg.kernel_size)
    throw ShapeError("conv1d_encode: weight shape " + to_string(weight.shape()) + " does not match [" +
                     std::to_string(cfg.feature_dim) + "," + std::to_string(cfg.kernel_size) + "]");
  Tensor features = matmul_nt(frame_signal(signal, cfg.kernel_size, cfg.stride), weight);
  return cfg.nonlinearity == Nonlinearity::relu ? relu(features) : features;
}

Tensor conv1d_decode(const Tensor& features, const EncoderConfig& cfg, const Tensor& weight,
                     std::size_t length) {
  if (features.rank() != 2 || features.dim(1) != weight.dim(0) || weight.dim(1) != cfg.kernel_size)
    throw ShapeError("conv1d_decode: features " + to_string(features.shape()) + " vs weight " +
                     to_string(weight.shape()));
  return fit_length(overlap_add(matmul(features, weight), cfg.stride), length);
}

// ---- linear ------------------------------------------------------------------------

LinearParams LinearParams::init(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  LinearParams p;
  p.weight = uniform_param({in, out}, bound, rng);
  p.bias = uniform_param({out}, bound, rng);
  return p;
}

void LinearParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Tensor linear(const Tensor& x, const LinearParams& p) {
  if (x.rank() < 1 || x.shape().back() != p.in_dim())
    throw ShapeError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(p.weight.shape()));
  Shape out_shape = x.shape();
  out_shape.back() = p.out_dim();
  Tensor flat = x.rank() == 2 ? x : reshape(x, {x.size() / p.in_dim(), p.in_dim()});
  Tensor y = add(matmul(flat, p.weight), p.bias);
  return x.rank() == 2 ? y : reshape(y, out_shape);
}

// ---- layer normalization --------------------------------------------------------------

LayerNormParams LayerNormParams::init(std::size_t dim) {
  return {Tensor({dim}, 1.0, true), Tensor({dim}, 0.0, true)};
}

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

Tensor layer_norm_groups(const Tensor& x, const LayerNormParams& p, std::size_t group_size) {
  const std::size_t n = p.gain.size();
  if (x.rank() < 1 || x.shape().back() != n || group_size == 0 || group_size % n != 0 ||
      x.size() % group_size != 0)
    throw ShapeError("layer_norm: input " + to_string(x.shape()) + " with feature dim " +
                     std::to_string(n) + " and group " + std::to_string(group_size));
  const std::size_t groups = x.size() / group_size;
  auto v = x.data();
  auto gain = p.gain.data();
  auto bias = p.bias.data();
  std::vector<double> xhat(x.size()), inv_std(groups), out(x.size());
  for (std::size_t g = 0; g < groups; ++g) {
    const double* src = v.data() + g * group_size;
    double mu = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) mu += src[i];
    mu /= static_cast<double>(group_size);
    double var = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(group_size);
    inv_std[g] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t i = 0; i < group_size; ++i) {
      const std::size_t k = g * group_size + i;
      xhat[k] = (src[i] - mu) * inv_std[g];
      out[k] = xhat[k] * gain[i % n] + bias[i % n];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, p.gain, p.bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), groups, group_size, n](detail::Node& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const auto& dy = self.grad;
        if (pg->requires_grad) {
          auto& gg = pg->grad_buffer();
          for (std::size_t k = 0; k < dy.size(); ++k) gg[k % n] += dy[k] * xhat[k];
        }
        if (pb->requires_grad) {
          auto& gb = pb->grad_buffer();
          for (std::size_t k = 0; k < dy.size(); ++k) gb[k % n] += dy[k];
        }
        if (px->requires_grad) {
          auto& gx = px->grad_buffer();
          const auto& gain = pg->value;
          const double m = static_cast<double>(group_size);
          for (std::size_t g = 0; g < groups; ++g) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t i = 0; i < group_size; ++i) {
              const std::size_t k = g * group_size + i;
              const double d = dy[k] * gain[i % n];
              mean_d += d;
              mean_dx += d * xhat[k];
            }
            mean_d /= m;
            mean_dx /= m;
            for (std::size_t i = 0; i < group_size; ++i) {
              const std::size_t k = g * group_size + i;
              const double d = dy[k] * gain[i % n];
              gx[k] += inv_std[g] * (d - mean_d - xhat[k] * mean_dx);
            }
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p, NormMode mode) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const std::size_t n = x.shape().back();
  if (mode == NormMode::feature) return layer_norm_groups(x, p, n);
  const std::size_t rows = x.rank() >= 2 ? x.shape()[x.rank() - 2] : 1;
  return layer_norm_groups(x, p, rows * n);
}

// ---- LSTM ----------------------------------------------------------------------------

std::size_t lstm_param_count(std::size_t input_dim, std::size_t hidden_dim, Direction direction) {
  const std::size_t per = 4 * (hidden_dim * (input_dim + hidden_dim) + hidden_dim);
  return direction == Direction::bidirectional ? 2 * per : per;
}

std::size_t lstm_step_macs(std::size_t input_dim, std::size_t hidden_dim, Direction direction) {
  const std::size_t per = 4 * hidden_dim * (input_dim + hidden_dim);
  return direction == Direction::bidirectional ? 2 * per : per;
}

LstmParams LstmParams::init(std::size_t input_dim, std::size_t hidden_dim, Direction direction,
                            Rng& rng) {
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.direction = direction;
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (std::size_t d = 0; d < p.num_directions(); ++d) {
    LstmWeights w;
    w.w_ih = uniform_param({4 * hidden_dim, input_dim}, bound, rng);
    w.w_hh = uniform_param({4 * hidden_dim, hidden_dim}, bound, rng);
    w.bias = uniform_param({4 * hidden_dim}, bound, rng);
    p.dirs.push_back(std::move(w));
  }
  return p;
}

void LstmParams::collect(const std::string& prefix, ParamList& out) const {
  static const char* names[] = {"fwd", "bwd"};
  for (std::size_t d = 0; d < dirs.size(); ++d) {
    const std::string base = prefix + "." + names[d];
    out.push_back({base + ".w_ih", dirs[d].w_ih});
    out.push_back({base + ".w_hh", dirs[d].w_hh});
    out.push_back({base + ".bias", dirs[d].bias});
  }
}

LstmState zero_state(std::size_t batch, std::size_t hidden) {
  return {Tensor({batch, hidden}, 0.0), Tensor({batch, hidden}, 0.0)};
}

Tensor lstm_direction(const Tensor& x, const LstmState& initial, const LstmWeights& w, bool reverse) {
  if (x.rank() != 3) throw ShapeError("lstm: expected input [B,T,I], got " + to_string(x.shape()));
  const std::size_t B = x.dim(0), T = x.dim(1), I = x.dim(2);
  const std::size_t G = w.w_ih.dim(0), H = G / 4;
  if (T == 0) throw ShapeError("lstm: empty sequence");
  if (w.w_ih.shape() != Shape{G, I} || w.w_hh.shape() != Shape{G, H} || w.bias.shape() != Shape{G} ||
      G != 4 * H)
    throw ShapeError("lstm: weights " + to_string(w.w_ih.shape()) + "/" + to_string(w.w_hh.shape()) +
                     " do not match input " + to_string(x.shape()));
  if (initial.c.shape() != Shape{B, H} || initial.h.shape() != Shape{B, H})
    throw ShapeError("lstm: initial state " + to_string(initial.c.shape()) + "/" +
                     to_string(initial.h.shape()) + " expected [" + std::to_string(B) + "," +
                     std::to_string(H) + "]");

  // Input projection for every step at once: [B*T, 4H].
  std::vector<double> xw(B * T * G);
  gemm(false, true, B * T, G, I, x.data().data(), w.w_ih.data().data(), xw.data(), false);

  const auto bias = w.bias.data();
  const auto whh = w.w_hh.data();
  // acts[b,t,:] = (i, f, g, o) after nonlinearities; cells/hprev per step.
  std::vector<double> acts(B * T * G), cells(B * T * H), hprev(B * T * H), cprev(B * T * H);
  std::vector<double> out(B * (T + 2) * H);
  std::vector<double> h(initial.h.data().begin(), initial.h.data().end());
  std::vector<double> c(initial.c.data().begin(), initial.c.data().end());
  std::vector<double> gates(B * G);

  for (std::size_t step = 0; step < T; ++step) {
    const std::size_t t = reverse ? T - 1 - step : step;
    gemm(false, true, B, G, H, h.data(), whh.data(), gates.data(), false);
    for (std::size_t b = 0; b < B; ++b) {
      double* gr = gates.data() + b * G;
      const double* xr = xw.data() + (b * T + t) * G;
      double* ar = acts.data() + (b * T + t) * G;
      const std::size_t row = b * T + t;
      std::copy_n(h.data() + b * H, H, hprev.data() + row * H);
      std::copy_n(c.data() + b * H, H, cprev.data() + row * H);
      for (std::size_t j = 0; j < H; ++j) {
        const double ig = sigm(gr[j] + xr[j] + bias[j]);
        const double fg = sigm(gr[H + j] + xr[H + j] + bias[H + j]);
        const double gg = std::tanh(gr[2 * H + j] + xr[2 * H + j] + bias[2 * H + j]);
        const double og = sigm(gr[3 * H + j] + xr[3 * H + j] + bias[3 * H + j]);
        ar[j] = ig;
        ar[H + j] = fg;
        ar[2 * H + j] = gg;
        ar[3 * H + j] = og;
        const double cn = fg * c[b * H + j] + ig * gg;
        c[b * H + j] = cn;
        h[b * H + j] = og * std::tanh(cn);
        cells[row * H + j] = cn;
        out[(b * (T + 2) + t) * H + j] = h[b * H + j];
      }
    }
  }
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(h.data() + b * H, H, out.data() + (b * (T + 2) + T) * H);
    std::copy_n(c.data() + b * H, H, out.data() + (b * (T + 2) + T + 1) * H);
  }

  return make_result(
      "lstm", {B, T + 2, H}, std::move(out), {x, initial.c, initial.h, w.w_ih, w.w_hh, w.bias},
      [acts = std::move(acts), cells = std::move(cells), hprev = std::move(hprev),
       cprev = std::move(cprev), B, T, I, H, G, reverse](detail::Node& self) {
        auto& px = self.parents[0];
        auto& pc0 = self.parents[1];
        auto& ph0 = self.parents[2];
        auto& pwih = self.parents[3];
        auto& pwhh = self.parents[4];
        auto& pb = self.parents[5];
        const auto& dy = self.grad;
        std::vector<double> dgates(B * T * G);
        std::vector<double> dh(B * H), dc(B * H), dstep(B * G);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t j = 0; j < H; ++j) {
            dh[b * H + j] = dy[(b * (T + 2) + T) * H + j];
            dc[b * H + j] = dy[(b * (T + 2) + T + 1) * H + j];
          }
        for (std::size_t step = T; step-- > 0;) {
          const std::size_t t = reverse ? T - 1 - step : step;
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t row = b * T + t;
            const double* ar = acts.data() + row * G;
            double* dg = dstep.data() + b * G;
            for (std::size_t j = 0; j < H; ++j) {
              const double ig = ar[j], fg = ar[H + j], gg = ar[2 * H + j], og = ar[3 * H + j];
              const double tc = std::tanh(cells[row * H + j]);
              const double dhj = dh[b * H + j] + dy[(b * (T + 2) + t) * H + j];
              const double dcj = dc[b * H + j] + dhj * og * (1.0 - tc * tc);
              dg[j] = dcj * gg * ig * (1.0 - ig);
              dg[H + j] = dcj * cprev[row * H + j] * fg * (1.0 - fg);
              dg[2 * H + j] = dcj * ig * (1.0 - gg * gg);
              dg[3 * H + j] = dhj * tc * og * (1.0 - og);
              dc[b * H + j] = dcj * fg;
            }
            std::copy_n(dg, G, dgates.data() + row * G);
          }
          // dh_prev = dgates_t * W_hh
          gemm(false, false, B, H, G, dstep.data(), pwhh->value.data(), dh.data(), false);
        }
        if (ph0->requires_grad) {
          auto& g = ph0->grad_buffer();
          for (std::size_t i = 0; i < dh.size(); ++i) g[i] += dh[i];
        }
        if (pc0->requires_grad) {
          auto& g = pc0->grad_buffer();
          for (std::size_t i = 0; i < dc.size(); ++i) g[i] += dc[i];
        }
        if (px->requires_grad)
          gemm(false, false, B * T, I, G, dgates.data(), pwih->value.data(), px->grad_buffer().data(), true);
        if (pwih->requires_grad)
          gemm(true, false, G, I, B * T, dgates.data(), px->value.data(), pwih->grad_buffer().data(), true);
        if (pwhh->requires_grad)
          gemm(true, false, G, H, B * T, dgates.data(), hprev.data(), pwhh->grad_buffer().data(), true);
        if (pb->requires_grad) {
          auto& g = pb->grad_buffer();
          for (std::size_t r = 0; r < B * T; ++r)
            for (std::size_t j = 0; j < G; ++j) g[j] += dgates[r * G + j];
        }
      });
}

LstmOutput lstm_sequence(const Tensor& x, const LstmParams& p, const std::vector<LstmState>& initial) {
  if (x.rank() != 3 || x.dim(2) != p.input_dim)
    throw ShapeError("lstm_sequence: input " + to_string(x.shape()) + " expects feature dim " +
                     std::to_string(p.input_dim));
  if (x.dim(1) == 0) throw ShapeError("lstm_sequence: T = 0");
  const std::size_t dirs = p.num_directions();
  if (!initial.empty() && initial.size() != dirs)
    throw ShapeError("lstm_sequence: expected " + std::to_string(dirs) + " initial states");
  const std::size_t B = x.dim(0), T = x.dim(1), H = p.hidden_dim;
  LstmOutput result;
  std::vector<Tensor> ys;
  for (std::size_t d = 0; d < dirs; ++d) {
    const LstmState init = initial.empty() ? zero_state(B, H) : initial[d];
    Tensor packed = lstm_direction(x, init, p.dirs[d], d == 1);
    ys.push_back(slice(packed, 1, 0, T));
    result.final.push_back({reshape(slice(packed, 1, T + 1, T + 2), {B, H}),
                            reshape(slice(packed, 1, T, T + 1), {B, H})});
  }
  result.y = dirs == 1 ? ys[0] : concat(ys, 2);
  return result;
}

LstmStep lstm_step(const Tensor& x, const Tensor& c, const Tensor& h, const LstmParams& p) {
  const std::size_t I = p.input_dim, H = p.hidden_dim;
  if (x.shape() != Shape{I} || c.shape() != Shape{H} || h.shape() != Shape{H})
    throw ShapeError("lstm_step: x " + to_string(x.shape()) + ", c " + to_string(c.shape()) + ", h " +
                     to_string(h.shape()) + " vs I=" + std::to_string(I) + " H=" + std::to_string(H));
  if (p.direction != Direction::forward) throw Error("lstm_step: requires a unidirectional LSTM");
  Tensor packed = lstm_direction(reshape(x, {1, 1, I}), {reshape(c, {1, H}), reshape(h, {1, H})},
                                 p.dirs[0], false);
  Tensor hn = reshape(slice(packed, 1, 1, 2), {H});
  return {reshape(slice(packed, 1, 0, 1), {H}), reshape(slice(packed, 1, 2, 3), {H}), hn};
}

}  // namespace skim
