#include "skim/profile.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "skim/streaming.hpp"

namespace skim {

namespace {

using u64 = std::uint64_t;

struct Builder {
  CostReport r;
  void row(std::string name, u64 params, double macs) { r.rows.push_back({std::move(name), params, macs}); }
};

u64 linear_params(u64 in, u64 out) { return in * out + out; }

void head_rows(Builder& b, const EncoderConfig& enc, std::size_t Q) {
  const u64 N = enc.feature_dim, k = enc.kernel_size;
  b.row("encoder", N * k, double(N * k));
  b.row("head", linear_params(N, Q * N), double(N * Q * N));
  b.row("decoder", N * k, double(Q * N * k));
}

CostReport skim_costs(const SkimConfig& c) {
  Builder b;
  b.r.model = std::string("skim (") + (c.causal ? "causal" : "non-causal") + ", mem " + to_string(c.mem_mode) + ")";
  const u64 N = c.feature_dim(), H = c.hidden, D = c.state_dim(), K = c.segment_len;
  head_rows(b, c.encoder, c.output_channels);
  for (std::size_t l = 0; l < c.num_blocks; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".seg";
    b.row(p + ".lstm", lstm_param_count(N, H, c.direction()), double(lstm_step_macs(N, H, c.direction())));
    b.row(p + ".proj", linear_params(D, N), double(D * N));
    b.row(p + ".norm", 2 * N, 0.0);
  }
  for (std::size_t l = 0; l + 1 < c.num_blocks; ++l)
    for (auto [name, present] : {std::pair{"c", c.has_mem_c()}, std::pair{"h", c.has_mem_h()}}) {
      if (!present) continue;
      const std::string p = "mem." + std::to_string(l) + "." + name;
      b.row(p + ".lstm", lstm_param_count(D, H, c.direction()),
            double(lstm_step_macs(D, H, c.direction())) / double(K));
      b.row(p + ".proj", linear_params(D, D), double(D * D) / double(K));
      b.row(p + ".norm", 2 * D, 0.0);
    }
  return b.r;
}

CostReport dprnn_costs(const DprnnConfig& c) {
  Builder b;
  b.r.model = std::string("dprnn (") + (c.causal ? "causal" : "non-causal") + ")";
  const u64 N = c.feature_dim(), H = c.hidden;
  const double dup = double(c.chunk_len) / double(c.hop());
  head_rows(b, c.encoder, c.output_channels);
  for (std::size_t l = 0; l < c.num_blocks; ++l) {
    const std::string p = "blocks." + std::to_string(l);
    for (auto [name, dir] : {std::pair{".intra", c.intra_direction()}, std::pair{".inter", c.inter_direction()}}) {
      const u64 width = H * (dir == Direction::bidirectional ? 2 : 1);
      b.row(p + name + ".lstm", lstm_param_count(N, H, dir), dup * double(lstm_step_macs(N, H, dir)));
      b.row(p + name + ".proj", linear_params(width, N), dup * double(width * N));
      b.row(p + name + ".norm", 2 * N, 0.0);
    }
  }
  return b.r;
}

CostReport finalize(CostReport r, unsigned sample_rate, std::size_t stride) {
  r.params = 0;
  r.macs_per_frame = 0.0;
  for (const auto& row : r.rows) {
    r.params += row.params;
    r.macs_per_frame += row.macs_per_frame;
  }
  r.sample_rate = sample_rate;
  r.frames_per_second = sample_rate ? double(sample_rate) / double(stride) : 0.0;
  r.macs_per_second = r.macs_per_frame * r.frames_per_second;
  return r;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto idx = std::size_t(std::ceil(q * double(v.size()))) - 1;
  return v[std::min(idx, v.size() - 1)];
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

}  // namespace

CostReport count_params(const ModelSpec& spec) {
  spec.validate();
  CostReport r = spec.kind == ModelSpec::Kind::skim ? skim_costs(spec.skim) : dprnn_costs(spec.dprnn);
  for (auto& row : r.rows) row.macs_per_frame = 0.0;
  return finalize(std::move(r), 0, spec.encoder().stride);
}

CostReport count_macs(const ModelSpec& spec, unsigned sample_rate) {
  spec.validate();
  if (sample_rate == 0) throw Error("count_macs: sample_rate must be positive");
  CostReport r = spec.kind == ModelSpec::Kind::skim ? skim_costs(spec.skim) : dprnn_costs(spec.dprnn);
  return finalize(std::move(r), sample_rate, spec.encoder().stride);
}

std::uint64_t offline_forward_macs(const ModelSpec& spec, std::size_t samples) {
  spec.validate();
  const EncoderConfig& enc = spec.encoder();
  const u64 T = enc.num_frames(samples);
  if (T == 0) throw Error("offline_forward_macs: input shorter than one frame");
  const u64 N = enc.feature_dim, k = enc.kernel_size, Q = spec.output_channels();
  u64 total = T * k * N + T * N * Q * N + Q * T * N * k;
  if (spec.kind == ModelSpec::Kind::skim) {
    const auto& c = spec.skim;
    const u64 H = c.hidden, D = c.state_dim(), K = c.segment_len;
    const u64 S = (T + K - 1) / K, F = S * K;
    total += c.num_blocks * (F * lstm_step_macs(N, H, c.direction()) + F * D * N);
    const u64 mem_types = u64(c.has_mem_c()) + u64(c.has_mem_h());
    total += (c.num_blocks - 1) * mem_types * S * (lstm_step_macs(D, H, c.direction()) + D * D);
  } else {
    const auto& c = spec.dprnn;
    const u64 H = c.hidden;
    const u64 F = dprnn_num_chunks(T, c.hop()) * c.chunk_len;
    for (Direction dir : {c.intra_direction(), c.inter_direction()}) {
      const u64 width = H * (dir == Direction::bidirectional ? 2 : 1);
      total += c.num_blocks * F * (lstm_step_macs(N, H, dir) + width * N);
    }
  }
  return total;
}

Json CostReport::to_json() const {
  Json layers = Json::array();
  for (const auto& r : rows) layers.push_back({{"layer", r.layer}, {"params", r.params}, {"macs_per_frame", r.macs_per_frame}});
  return {{"model", model},
          {"params", params},
          {"macs_per_frame", macs_per_frame},
          {"sample_rate", sample_rate},
          {"frames_per_second", frames_per_second},
          {"macs_per_second", macs_per_second},
          {"layers", layers}};
}

std::string CostReport::to_table() const {
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.layer.size());
  std::ostringstream s;
  s << model << "\n";
  s << std::left << std::setw(int(w)) << "layer" << std::right << std::setw(14) << "params" << std::setw(18)
    << "MACs/frame" << "\n";
  for (const auto& r : rows)
    s << std::left << std::setw(int(w)) << r.layer << std::right << std::setw(14) << r.params << std::setw(18)
      << fmt(r.macs_per_frame, 1) << "\n";
  s << std::left << std::setw(int(w)) << "total" << std::right << std::setw(14) << params << std::setw(18)
    << fmt(macs_per_frame, 1) << "\n";
  s << "params: " << fmt(double(params) / 1e6, 3) << " M";
  if (sample_rate) s << "   MACs: " << fmt(macs_per_second / 1e9, 3) << " G/s at " << sample_rate << " Hz";
  s << "\n";
  return s.str();
}

PassthroughModel::PassthroughModel(const EncoderConfig& encoder, std::size_t output_channels, std::uint64_t seed) {
  encoder.validate();
  Rng rng(seed);
  head_ = SeparatorHead::init(encoder, output_channels, rng);
}

ParamList PassthroughModel::parameters() const {
  ParamList out;
  head_.collect(out);
  return out;
}

std::string to_string(BenchMode mode) { return mode == BenchMode::offline ? "offline" : "streaming"; }

BenchMode parse_bench_mode(const std::string& name) {
  if (name == "offline") return BenchMode::offline;
  if (name == "streaming") return BenchMode::streaming;
  throw Error("unknown bench mode '" + name + "' (expected offline or streaming)");
}

bool single_threaded() { return Eigen::nbThreads() == 1; }

LatencyReport bench_rtf(const SeparationModel& model, const BenchOptions& options) {
  if (!single_threaded()) throw Error("bench_rtf: dense kernels are not pinned to a single thread");
  if (options.runs < 1) throw Error("bench_rtf: runs must be >= 1");
  if (!(options.audio_seconds > 0.0) || options.sample_rate == 0) throw Error("bench_rtf: empty benchmark input");
  using Clock = std::chrono::steady_clock;
  const auto& enc = model.encoder();
  const std::size_t L = std::size_t(std::llround(options.audio_seconds * options.sample_rate));
  if (L < enc.kernel_size) throw Error("bench_rtf: input shorter than one frame");
  Rng rng(options.seed);
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  std::vector<double> audio(L);
  for (double& x : audio) x = dist(rng);

  LatencyReport rep;
  rep.mode = to_string(options.mode);
  rep.runs = options.runs;
  rep.audio_seconds = double(L) / options.sample_rate;
  rep.ideal_latency_ms = 1e3 * double(enc.stride) / options.sample_rate;

  std::vector<double> rtfs, frame_ms;
  auto ms_since = [](Clock::time_point t) { return std::chrono::duration<double, std::milli>(Clock::now() - t).count(); };

  if (options.mode == BenchMode::streaming) {
    const auto* skim_model = dynamic_cast<const SkimModel*>(&model);
    if (!skim_model || !skim_model->causal()) throw Error("bench_rtf: streaming requires causal model");
    auto engine = std::make_shared<const StreamingEngine<float>>(*skim_model);
    const std::vector<float> audio32(audio.begin(), audio.end());
    for (std::size_t run = 0; run < options.warmup + options.runs; ++run) {
      const bool measured = run >= options.warmup;
      auto st = stream_init(engine);
      const auto t0 = Clock::now();
      for (std::size_t pos = 0; pos < L; pos += enc.stride) {
        const std::size_t n = std::min(enc.stride, L - pos);
        const auto t = Clock::now();
        const auto out = stream_push<float>(st, std::span<const float>(audio32).subspan(pos, n));
        const double dt = ms_since(t);
        if (measured && !out[0].empty()) frame_ms.push_back(dt);
      }
      stream_finalize(st);
      if (measured) rtfs.push_back(ms_since(t0) / (1e3 * rep.audio_seconds));
    }
  } else {
    NoGradGuard no_grad;
    const Tensor x(Shape{L}, audio);
    const std::size_t frames = enc.num_frames(L);
    for (std::size_t run = 0; run < options.warmup + options.runs; ++run) {
      const auto t0 = Clock::now();
      const auto out = model.separate(x);
      const double ms = ms_since(t0);
      if (run < options.warmup) continue;
      rtfs.push_back(ms / (1e3 * rep.audio_seconds));
      frame_ms.push_back(ms / double(frames));
    }
  }

  const double n = double(rtfs.size());
  rep.rtf = std::accumulate(rtfs.begin(), rtfs.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rtfs) var += (r - rep.rtf) * (r - rep.rtf);
  rep.rtf_std = rtfs.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  rep.frame_mean_ms = std::accumulate(frame_ms.begin(), frame_ms.end(), 0.0) / double(frame_ms.size());
  rep.frame_p99_ms = percentile(frame_ms, 0.99);
  rep.measured_latency_ms = rep.ideal_latency_ms + rep.frame_mean_ms;
  rep.measured_latency_p99_ms = rep.ideal_latency_ms + rep.frame_p99_ms;
  return rep;
}

Json LatencyReport::to_json() const {
  return {{"mode", mode},
          {"runs", runs},
          {"audio_seconds", audio_seconds},
          {"ideal_latency_ms", ideal_latency_ms},
          {"rtf", rtf},
          {"rtf_std", rtf_std},
          {"frame_mean_ms", frame_mean_ms},
          {"frame_p99_ms", frame_p99_ms},
          {"measured_latency_ms", measured_latency_ms},
          {"measured_latency_p99_ms", measured_latency_p99_ms}};
}

std::string LatencyReport::to_table() const {
  std::ostringstream s;
  auto line = [&](const char* k, const std::string& v) { s << std::left << std::setw(26) << k << v << "\n"; };
  line("mode", mode);
  line("runs", std::to_string(runs));
  line("audio (s)", fmt(audio_seconds, 2));
  line("ideal latency (ms)", fmt(ideal_latency_ms, 4));
  line("RTF", fmt(rtf, 4) + " +/- " + fmt(rtf_std, 4));
  line("frame compute mean (ms)", fmt(frame_mean_ms, 5));
  line("frame compute p99 (ms)", fmt(frame_p99_ms, 5));
  line("latency mean (ms)", fmt(measured_latency_ms, 4));
  line("latency p99 (ms)", fmt(measured_latency_p99_ms, 4));
  return s.str();
}

}  // namespace skim
