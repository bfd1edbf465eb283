// Acceptance suite: one PASS/FAIL line per criterion.

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

#include "CLI11.hpp"
#include "skim/dprnn.hpp"
#include "skim/evaluate.hpp"
#include "skim/profile.hpp"
#include "skim/streaming.hpp"
#include "skim/train.hpp"

using namespace skim;

namespace {

using Clock = std::chrono::steady_clock;
using Rng64 = std::mt19937_64;

struct Outcome {
  bool pass = false;
  std::string detail;
  double budget_s = 0.0;  // 0: no runtime limit
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor randn(Shape shape, Rng64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v));
}

std::vector<double> randv(std::size_t n, Rng64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::size_t pick(Rng64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// ---- 1. gradients ------------------------------------------------------------------

// Weighted sum against a fixed random tensor so that every output element matters.
Tensor probe(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

struct GradCheck {
  std::map<std::string, double> worst;
  void run(const std::string& name, const std::function<Tensor(const Tensor&)>& f, const Tensor& at) {
    Tensor x = at.clone(true);
    f(x).backward();
    const auto fd = finite_difference_gradient(f, at.detach());
    const double e = relative_error(x.grad(), fd, 1e-8);
    worst[name] = std::max(worst[name], std::isfinite(e) ? e : INFINITY);
  }
};

template <class Params, class Member>
std::function<Tensor(const Tensor&)> with_param(const Params& base, Member member,
                                                std::function<Tensor(const Params&)> f) {
  return [=](const Tensor& x) {
    Params p = base;
    p.*member = x;
    return f(p);
  };
}

void layer_gradients(GradCheck& g, Rng64& rng) {
  Rng init(rng());
  {
    const auto p = LinearParams::init(5, 3, init);
    const Tensor x = randn({4, 5}, rng), w = randn({4, 3}, rng);
    auto f = [&](const LinearParams& q) { return probe(linear(x, q), w); };
    g.run("linear", [&](const Tensor& v) { return probe(linear(v, p), w); }, x);
    g.run("linear", with_param<LinearParams>(p, &LinearParams::weight, f), p.weight);
    g.run("linear", with_param<LinearParams>(p, &LinearParams::bias, f), p.bias);
  }
  for (NormMode mode : {NormMode::feature, NormMode::global}) {
    LayerNormParams p = LayerNormParams::init(4);
    p.gain = randn({4}, rng);
    p.bias = randn({4}, rng);
    const Tensor x = randn({3, 5, 4}, rng), w = randn({3, 5, 4}, rng);
    const std::string name = mode == NormMode::feature ? "layer_norm.feature" : "layer_norm.global";
    auto f = [&](const LayerNormParams& q) { return probe(layer_norm(x, q, mode), w); };
    g.run(name, [&](const Tensor& v) { return probe(layer_norm(v, p, mode), w); }, x);
    g.run(name, with_param<LayerNormParams>(p, &LayerNormParams::gain, f), p.gain);
    g.run(name, with_param<LayerNormParams>(p, &LayerNormParams::bias, f), p.bias);
  }
  for (Direction dir : {Direction::forward, Direction::bidirectional}) {
    const std::size_t B = 2, T = 6, I = 3, H = 4, D = dir == Direction::forward ? 1 : 2;
    const LstmParams p = LstmParams::init(I, H, dir, init);
    const Tensor x = randn({B, T, I}, rng), w = randn({B, T, D * H}, rng);
    std::vector<LstmState> s0;
    for (std::size_t d = 0; d < D; ++d) s0.push_back({randn({B, H}, rng), randn({B, H}, rng)});
    const Tensor wc = randn({B, H}, rng), wh = randn({B, H}, rng);
    const std::string name = D == 1 ? "lstm.forward" : "lstm.bidirectional";
    auto run = [&](const LstmParams& q, const Tensor& in, const std::vector<LstmState>& st) {
      const LstmOutput o = lstm_sequence(in, q, st);
      Tensor l = probe(o.y, w);
      for (const auto& f : o.final) l = add(l, add(probe(f.c, wc), probe(f.h, wh)));
      return l;
    };
    g.run(name, [&](const Tensor& v) { return run(p, v, s0); }, x);
    g.run(name, [&](const Tensor& v) { auto s = s0; s[0].c = v; return run(p, x, s); }, s0[0].c);
    g.run(name, [&](const Tensor& v) { auto s = s0; s[D - 1].h = v; return run(p, x, s); }, s0[D - 1].h);
    for (std::size_t d = 0; d < D; ++d)
      for (Tensor LstmWeights::*m : {&LstmWeights::w_ih, &LstmWeights::w_hh, &LstmWeights::bias})
        g.run(name, [&, d, m](const Tensor& v) { LstmParams q = p; q.dirs[d].*m = v; return run(q, x, s0); },
              p.dirs[d].*m);
  }
  {
    const EncoderConfig cfg{6, 3, 4, Nonlinearity::relu};
    const Tensor sig = randn({40}, rng), enc = randn({4, 6}, rng), w = randn({12, 4}, rng);
    g.run("conv1d_encode", [&](const Tensor& v) { return probe(conv1d_encode(v, cfg, enc), w); }, sig);
    g.run("conv1d_encode", [&](const Tensor& v) { return probe(conv1d_encode(sig, cfg, v), w); }, enc);
    const Tensor feats = randn({12, 4}, rng), wy = randn({41}, rng);
    g.run("conv1d_decode", [&](const Tensor& v) { return probe(conv1d_decode(v, cfg, enc, 41), wy); }, feats);
    g.run("conv1d_decode", [&](const Tensor& v) { return probe(conv1d_decode(feats, cfg, v, 41), wy); }, enc);
  }
  {
    const Tensor x = randn({11, 3}, rng), w = randn({11, 3}, rng);
    g.run("segment_merge", [&](const Tensor& v) { return probe(merge(segment(v, 4), 11), w); }, x);
    const Tensor wc = randn({6, 4, 3}, rng);
    g.run("fold_chunks", [&](const Tensor& v) { return probe(fold_chunks(v, 4, 2), wc); }, x);
    g.run("unfold_chunks", [&](const Tensor& v) { return probe(unfold_chunks(v, 2, 11), w); }, randn({6, 4, 3}, rng));
  }
  for (bool causal : {true, false}) {
    SkimConfig cfg;
    cfg.hidden = 3;
    cfg.causal = causal;
    cfg.encoder = {4, 2, 4, Nonlinearity::relu};
    const SkimModel m(cfg, rng());
    const std::size_t S = 5, W = cfg.state_dim();
    const BlockStates st{randn({S, W}, rng), randn({S, W}, rng)};
    const Tensor wc = randn({S, W}, rng), wh = randn({S, W}, rng);
    const std::string name = causal ? "mem_lstm.causal" : "mem_lstm.noncausal";
    auto f = [&](const BlockStates& s) {
      const BlockStates o = mem_lstm_update(s, MemMode::hc, causal, m.mem_stages()[0]);
      return add(probe(o.c, wc), probe(o.h, wh));
    };
    g.run(name, [&](const Tensor& v) { return f({v, st.h}); }, st.c);
    g.run(name, [&](const Tensor& v) { return f({st.c, v}); }, st.h);
  }
  {
    const std::vector<double> ref = randv(64, rng);
    g.run("tsdr", [&](const Tensor& v) { return tsdr(v, ref); }, randn({64}, rng));
  }
  {
    std::vector<Utterance> utts;
    for (auto [s, e] : {std::pair{0, 30}, {20, 50}, {45, 70}})
      utts.push_back({randv(std::size_t(e - s), rng),
                      std::size_t(s), ""});
    const Tensor other = randn({70}, rng, 0.5);
    g.run("graph_pit_loss", [&](const Tensor& v) { return graph_pit_loss({v, other}, utts).loss; },
          randn({70}, rng, 0.5));
  }
}

// Every parameter tensor of a tiny separator under the Graph-PIT loss.
double pipeline_gradient(const SeparationModel& model, Rng64& rng) {
  const std::size_t L = 2 * 20 + 2;
  const Tensor mix = randn({L}, rng);
  std::vector<Utterance> utts;
  for (auto [s, e] : {std::pair{0, 20}, {10, 35}, {30, 42}})
    utts.push_back({randv(std::size_t(e - s), rng),
                    std::size_t(s), ""});
  const ParamList params = model.parameters();
  auto loss = [&] { return graph_pit_loss(model.separate(mix), utts).loss; };
  for (const auto& p : params) Tensor(p.tensor).zero_grad();
  loss().backward();
  double worst = 0.0;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    const auto analytic = t.grad();
    std::vector<double> fd(t.size());
    auto data = t.mutable_data();
    const double h = 1e-5;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = loss().item();
      data[i] = keep - h;
      const double down = loss().item();
      data[i] = keep;
      fd[i] = (up - down) / (2 * h);
    }
    worst = std::max(worst, relative_error(analytic, fd, 1e-8));
  }
  return worst;
}

Outcome criterion_gradients() {
  constexpr std::size_t kSeeds = 20;
  GradCheck g;
  double e2e = 0.0;
  for (std::size_t seed = 0; seed < kSeeds; ++seed) {
    Rng64 rng(1000 + seed);
    layer_gradients(g, rng);
    SkimConfig sc;
    sc.hidden = 4;
    sc.segment_len = 5;
    sc.causal = seed % 2 == 0;
    sc.mem_mode = kAllMemModes[seed % 5];
    sc.encoder = {4, 2, 4, Nonlinearity::relu};
    e2e = std::max(e2e, pipeline_gradient(SkimModel(sc, seed), rng));
    DprnnConfig dc;
    dc.hidden = 3;
    dc.chunk_len = 4;
    dc.causal = seed % 2 == 1;
    dc.encoder = sc.encoder;
    e2e = std::max(e2e, pipeline_gradient(DprnnModel(dc, seed), rng));
  }
  double layers = 0.0;
  std::string worst_name;
  for (const auto& [name, e] : g.worst)
    if (e >= layers) {
      layers = e;
      worst_name = name;
    }
  return {layers < 1e-4 && e2e < 1e-3,
          fmt("%zu seeds, %zu layer checks: max rel-err %.2e (%s); end-to-end SkiM+DPRNN max rel-err %.2e", kSeeds,
              g.worst.size(), layers, worst_name.c_str(), e2e),
          120.0};
}

// ---- 2. causality ------------------------------------------------------------------

Outcome criterion_causality() {
  Rng64 rng(2024);
  std::size_t checked = 0, violations = 0;
  for (std::size_t trial = 0; trial < 50; ++trial) {
    SkimConfig c;
    c.num_blocks = pick(rng, 1, 3);
    c.hidden = pick(rng, 2, 6);
    c.segment_len = pick(rng, 2, 8);
    c.mem_mode = kAllMemModes[pick(rng, 0, 4)];
    c.output_channels = pick(rng, 2, 3);
    const std::size_t stride = pick(rng, 2, 6);
    c.encoder = {2 * stride, stride, pick(rng, 2, 8), Nonlinearity::relu};
    const SkimModel model(c, rng());
    const std::size_t L = pick(rng, 60, 300);
    const Tensor x = randn({L}, rng);
    const std::size_t t = pick(rng, c.encoder.kernel_size, L - 1);
    std::vector<double> y(x.data().begin(), x.data().end());
    for (std::size_t i = t; i < L; ++i) y[i] = 10.0 * std::normal_distribution<double>()(rng);
    NoGradGuard guard;
    const auto a = model.separate(x), b = model.separate(Tensor({L}, y));
    for (std::size_t q = 0; q < a.size(); ++q)
      for (std::size_t n = 0; n + c.encoder.kernel_size <= t; ++n) {
        ++checked;
        if (a[q].data()[n] != b[q].data()[n]) ++violations;
      }
  }
  return {violations == 0, fmt("50 random causal configs, %zu output samples compared, %zu differ", checked, violations),
          60.0};
}

// ---- 3. streaming equivalence ----------------------------------------------------------

Outcome criterion_streaming() {
  Rng64 rng(77);
  SimConfig sim;
  sim.session_seconds = 4.0;
  sim.num_speakers = {2, 2};
  sim.utterance_seconds = {0.5, 1.5};
  sim.seed = 31337;
  const MeetingSession s = simulate_meeting(sim);
  const std::vector<float> xf(s.mixture.begin(), s.mixture.end());
  std::vector<double> xd(xf.begin(), xf.end());
  double worst = 0.0;
  std::size_t pushes = 0;
  for (MemMode mode : kAllMemModes) {
    SkimConfig c;
    c.mem_mode = mode;
    const SkimModel model(c, 100 + std::size_t(mode));
    const auto offline = model.separate(Tensor({xd.size()}, xd));
    auto engine = std::make_shared<const StreamingEngine<float>>(model);
    for (int trial = 0; trial < 3; ++trial) {
      auto st = stream_init(engine);
      std::vector<std::vector<float>> out(c.output_channels);
      for (std::size_t at = 0; at < xf.size();) {
        const std::size_t n = std::min(pick(rng, 1, 1000), xf.size() - at);
        const auto chunk = stream_push<float>(st, std::span(xf).subspan(at, n));
        for (std::size_t q = 0; q < out.size(); ++q) out[q].insert(out[q].end(), chunk[q].begin(), chunk[q].end());
        at += n;
        ++pushes;
      }
      const auto tail = stream_finalize(st);
      for (std::size_t q = 0; q < out.size(); ++q) {
        out[q].insert(out[q].end(), tail[q].begin(), tail[q].end());
        if (out[q].size() != xd.size()) return {false, "streamed output length differs from input length"};
        for (std::size_t i = 0; i < xd.size(); ++i)
          worst = std::max(worst, std::abs(double(out[q][i]) - offline[q].data()[i]));
      }
    }
  }
  return {worst < 1e-5,
          fmt("5 mem modes x 3 runs, %zu pushes of 1..1000 samples, max |stream(float32) - offline| = %.2e", pushes,
              worst),
          120.0};
}

// ---- 4. Graph-PIT against brute force ------------------------------------------------------

// Independent reference: all Q^P maps, pairwise half-open overlap test, loss from scratch.
struct Brute {
  std::set<std::vector<std::size_t>> valid;
  double best = INFINITY;
};

Brute brute_force(const std::vector<Utterance>& u, const std::vector<std::vector<double>>& est, std::size_t Q,
                  std::size_t len) {
  Brute b;
  const std::size_t P = u.size();
  std::size_t total = 1;
  for (std::size_t i = 0; i < P; ++i) total *= Q;
  const double tau = std::pow(10.0, -20.0 / 10.0), eps = 1e-6;
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<std::size_t> ch(P);
    for (std::size_t p = 0, c = code; p < P; ++p, c /= Q) ch[p] = c % Q;
    bool ok = true;
    for (std::size_t i = 0; i < P && ok; ++i)
      for (std::size_t j = i + 1; j < P && ok; ++j)
        if (ch[i] == ch[j] && u[i].start < u[j].end() && u[j].start < u[i].end()) ok = false;
    if (!ok) continue;
    b.valid.insert(ch);
    double loss = 0.0;
    std::size_t active = 0;
    for (std::size_t q = 0; q < Q; ++q) {
      std::vector<double> t(len, 0.0);
      bool any = false;
      for (std::size_t p = 0; p < P; ++p)
        if (ch[p] == q) {
          any = true;
          for (std::size_t i = 0; i < u[p].source.size(); ++i) t[u[p].start + i] += u[p].source[i];
        }
      if (!any) continue;
      double ss = 0.0, err = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        ss += t[i] * t[i];
        err += (t[i] - est[q][i]) * (t[i] - est[q][i]);
      }
      loss -= 10.0 * std::log10(ss / (err + tau * ss + eps));
      ++active;
    }
    b.best = std::min(b.best, loss / double(active));
  }
  return b;
}

Outcome criterion_graph_pit() {
  Rng64 rng(4242);
  std::size_t feasible = 0, infeasible = 0, mismatches = 0;
  double worst = 0.0;
  const std::size_t len = 240;
  for (std::size_t inst = 0; inst < 100; ++inst) {
    const std::size_t P = pick(rng, 1, 8), Q = pick(rng, 2, 3);
    std::vector<Utterance> u;
    for (std::size_t p = 0; p < P; ++p) {
      const std::size_t n = pick(rng, 10, 90), start = pick(rng, 0, len - n);
      u.push_back({randv(n, rng), start, ""});
    }
    std::vector<std::vector<double>> est;
    for (std::size_t q = 0; q < Q; ++q) est.push_back(randv(len, rng, 0.7));
    // Pull the estimates toward one valid-looking map so the minimum is informative.
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t i = 0; i < u[p].source.size(); ++i) est[p % Q][u[p].start + i] += u[p].source[i];
    const Brute ref = brute_force(u, est, Q, len);
    try {
      const auto got = all_colorings(build_overlap_graph(u), Q);
      std::set<std::vector<std::size_t>> set;
      for (const auto& a : got) set.insert(a.channel_of);
      std::vector<Tensor> te;
      for (const auto& e : est) te.emplace_back(Shape{len}, e);
      const double loss = graph_pit_loss(te, u).value;
      ++feasible;
      const double diff = std::abs(loss - ref.best);
      worst = std::max(worst, diff);
      if (set != ref.valid || got.size() != ref.valid.size() || !(diff < 1e-9)) ++mismatches;
    } catch (const InfeasibleError&) {
      ++infeasible;
      if (!ref.valid.empty()) ++mismatches;
    }
  }
  return {mismatches == 0,
          fmt("100 instances (P<=8, Q<=3): %zu feasible, %zu infeasible agree with brute force; %zu mismatches; max "
              "loss diff %.1e",
              feasible, infeasible, mismatches, worst),
          60.0};
}

// ---- 5. tSDR saturation -----------------------------------------------------------------

Outcome criterion_tsdr() {
  Rng64 rng(5);
  const TsdrParams p{20.0, 1e-6};
  // Below this reference energy the eps term alone moves tsdr(s, s) by more than 1e-6 dB.
  const double bound = p.eps / (p.tau() * (std::pow(10.0, 1e-7) - 1.0));
  std::vector<std::vector<double>> refs;
  for (unsigned fs : {8000u, 16000u})
    for (double secs : {0.5, 1.0, 2.0, 8.0, 30.0}) refs.push_back(randv(std::size_t(fs * secs), rng));
  for (double rms : {1e-3, 1e-2, 0.1}) refs.push_back(randv(8000, rng, rms));
  SimConfig sim;
  sim.seed = 55;
  for (std::size_t k = 0; k < 5; ++k, ++sim.seed) {
    const MeetingSession m = simulate_meeting(sim);
    const Assignment a = all_colorings(build_overlap_graph(m.utterances), 2).front();
    for (auto& t : render_targets(a, m.utterances, m.mixture.size(), 2)) refs.push_back(std::move(t));
  }
  double worst = 0.0, eps_term_err = 0.0;
  std::size_t above = 0, below = 0;
  for (const auto& s : refs) {
    const double e = std::inner_product(s.begin(), s.end(), s.begin(), 0.0);
    const double dev = tsdr(s, s, p) - 20.0;
    eps_term_err = std::max(eps_term_err, std::abs(dev + 10.0 * std::log10(1.0 + p.eps / (p.tau() * e))));
    if (e >= bound) {
      worst = std::max(worst, std::abs(dev));
      ++above;
    } else {
      ++below;
    }
  }
  const bool pass = above >= 10 && worst < 1e-6 && eps_term_err < 1e-9;
  return {pass, fmt("%zu references with energy >= %.1f: max |tsdr(s, s) - 20 dB| = %.2e; all %zu (incl. %zu quieter) "
                    "match 20 - 10 log10(1 + eps / (tau |s|^2)) to %.1e",
                    above, bound, worst, refs.size(), below, eps_term_err)};
}

// ---- 6 / 7. cost model ---------------------------------------------------------------------

Outcome criterion_macs() {
  ModelSpec skim_spec, dprnn_spec;
  skim_spec.skim = SkimConfig::full_size(true, 20);
  dprnn_spec.kind = ModelSpec::Kind::dprnn;
  dprnn_spec.dprnn = DprnnConfig::full_size(true, 20);
  const double s = count_macs(skim_spec, 16000).macs_per_second / 1e9;
  const double d = count_macs(dprnn_spec, 16000).macs_per_second / 1e9;

  Rng64 rng(6);
  std::size_t exact = 0, total = 0;
  for (std::size_t trial = 0; trial < 12; ++trial) {
    ModelSpec spec;
    const std::size_t stride = pick(rng, 2, 5);
    const EncoderConfig enc{2 * stride, stride, pick(rng, 2, 6), Nonlinearity::relu};
    if (trial % 4 == 3) {
      spec.kind = ModelSpec::Kind::dprnn;
      spec.dprnn.hidden = pick(rng, 2, 5);
      spec.dprnn.chunk_len = pick(rng, 2, 6);
      spec.dprnn.causal = trial % 2;
      spec.dprnn.encoder = enc;
    } else {
      spec.skim = SkimConfig{pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 6), 2, trial % 2 == 0,
                             kAllMemModes[trial % 5], enc};
    }
    const std::size_t samples = pick(rng, 40, 200);
    auto model = build_model(spec, trial);
    NoGradGuard guard;
    reset_mac_count();
    (void)model->separate(Tensor({samples}, 0.1));
    ++total;
    if (mac_count() == offline_forward_macs(spec, samples)) ++exact;
  }
  const bool pass = s / d <= 0.35 && s >= 1.5 && s <= 2.5 && exact == total;
  return {pass,
          fmt("full-size configs, causal, stride 20 @ 16 kHz: SkiM %.3f G/s, DPRNN %.3f G/s, ratio %.3f; analytic == "
              "instrumented on %zu/%zu tiny configs",
              s, d, s / d, exact, total),
          10.0};
}

Outcome criterion_params() {
  auto params = [](bool causal, MemMode mode) {
    ModelSpec spec;
    spec.skim = SkimConfig::full_size(causal, 20);
    spec.skim.mem_mode = mode;
    return count_params(spec).params;
  };
  const auto none = params(false, MemMode::none), id = params(false, MemMode::id);
  const auto none_c = params(true, MemMode::none), id_c = params(true, MemMode::id);
  const auto causal = params(true, MemMode::hc), full = params(false, MemMode::hc);
  ModelSpec tiny;
  const auto built = count_scalars(build_model(tiny, 0)->parameters());
  const bool pass = none == id && none_c == id_c && causal < full && built == count_params(tiny).params;
  return {pass, fmt("none %.2f M == id %.2f M (causal %.2f == %.2f); causal %.2f M < non-causal %.2f M",
                    none / 1e6, id / 1e6, none_c / 1e6, id_c / 1e6, causal / 1e6, full / 1e6)};
}

// ---- 8. desk-scale learning ---------------------------------------------------------------

struct DeskSetup {
  SimConfig sim;
  std::vector<MeetingSession> train, test;
  ModelSpec spec;
  TrainConfig train_cfg;
};

DeskSetup desk_setup(std::size_t train_sessions, std::size_t test_sessions) {
  DeskSetup d;
  d.sim.sample_rate = 8000;
  d.sim.session_seconds = 8.0;
  d.sim.num_speakers = {2, 2};
  d.sim.utterance_seconds = {0.5, 1.5};
  d.sim.seed = 1000;
  d.train = simulate_dataset(d.sim, train_sessions);
  SimConfig held_out = d.sim;
  held_out.seed = 900000;
  d.test = simulate_dataset(held_out, test_sessions);
  d.spec.skim = SkimConfig{2, 32, 20, 2, true, MemMode::hc, {16, 8, 16, Nonlinearity::relu}};
  d.train_cfg.clip_seconds = 2.0;
  d.train_cfg.steps_per_epoch = 100;
  return d;
}

Outcome criterion_learning(std::size_t steps) {
  const DeskSetup d = desk_setup(200, 20);
  std::vector<double> trained, untrained;
  double cpu_minutes = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto model = build_model(d.spec, seed);
    untrained.push_back(evaluate(*model, d.test, {}).sdri);
    TrainConfig tc = d.train_cfg;
    tc.seed = seed;
    tc.epochs = (steps + tc.steps_per_epoch - 1) / tc.steps_per_epoch;
    const auto t0 = Clock::now();
    (void)train(*model, d.spec, d.train, tc);
    const double minutes = seconds_since(t0) / 60.0;
    cpu_minutes = std::max(cpu_minutes, minutes);
    trained.push_back(evaluate(*model, d.test, {}).sdri);
    std::cerr << fmt("  [8] seed %llu: untrained %.2f dB, trained %.2f dB after %zu steps (%.1f min)\n",
                     (unsigned long long)seed, untrained.back(), trained.back(), steps, minutes);
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double untrained_max = *std::max_element(untrained.begin(), untrained.end());
  const bool pass = median(trained) > 5.0 && untrained_max < 1.0 && cpu_minutes <= 20.0;
  return {pass,
          fmt("tiny causal SkiM, 3 seeds x %zu steps: median SDRi %.2f dB (%.2f / %.2f / %.2f) on 20 held-out "
              "sessions; untrained max %.2f dB; longest run %.1f CPU-min",
              steps, median(trained), trained[0], trained[1], trained[2], untrained_max, cpu_minutes)};
}

// ---- 9. RTF harness ---------------------------------------------------------------------

Outcome criterion_rtf() {
  std::vector<std::string> parts;
  bool pass = single_threaded();
  auto check = [&](const char* name, const SkimConfig& cfg, std::size_t runs) {
    const SkimModel model(cfg, 1);
    BenchOptions o;
    o.audio_seconds = 30.0;
    o.sample_rate = 16000;
    o.runs = runs;
    o.warmup = 0;
    const LatencyReport r = bench_rtf(model, o);
    const double predicted = r.ideal_latency_ms * (1.0 + r.rtf);
    const double rel = std::abs(r.measured_latency_ms - predicted) / predicted;
    pass = pass && rel < 0.1;
    parts.push_back(fmt("%s RTF %.4f, latency %.4f ms vs ideal*(1+RTF) %.4f ms (%.1f%%)", name, r.rtf,
                        r.measured_latency_ms, predicted, 100.0 * rel));
  };
  check("tiny", SkimConfig{}, 3);
  check("full-size causal stride 20", SkimConfig::full_size(true, 20), 1);
  std::string detail = "single-threaded 30 s streaming bench: ";
  for (std::size_t i = 0; i < parts.size(); ++i) detail += (i ? "; " : "") + parts[i];
  return {pass, detail};
}

// ---- 10. ablation -----------------------------------------------------------------------

Outcome criterion_ablation() {
  const DeskSetup d = desk_setup(40, 5);
  AppConfig cfg;
  cfg.model = d.spec;
  cfg.train.train = d.train_cfg;
  cfg.train.train.steps_per_epoch = 60;
  cfg.train.train.epochs = 5;
  const auto rows = run_ablation(cfg, d.train, d.test, [](const std::string& m) { std::cerr << "  [10] " << m << "\n"; });
  std::cerr << ablation_table(rows);
  bool pass = rows.size() == 5;
  std::set<MemMode> modes;
  for (const auto& r : rows) {
    pass = pass && r.finite && std::isfinite(r.final_loss) && r.steps == 300;
    modes.insert(r.mode);
  }
  pass = pass && modes.size() == 5;
  const std::string table = ablation_table(rows);
  const std::string ordering = table.substr(table.rfind("ordering"));
  return {pass, fmt("%zu modes trained 300 steps each with finite losses; %s", rows.size(),
                    ordering.substr(0, ordering.size() - 1).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  Eigen::setNbThreads(1);
  CLI::App app{"skimcss acceptance suite"};
  std::vector<int> only;
  std::size_t learn_steps = 3000;
  app.add_option("--only", only, "Run only these criteria (1-10)");
  app.add_option("--learn-steps", learn_steps, "Training steps per seed for criterion 8");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient suite", criterion_gradients},
      {"causality", criterion_causality},
      {"streaming equivalence", criterion_streaming},
      {"graph-pit oracle", criterion_graph_pit},
      {"tsdr saturation", criterion_tsdr},
      {"compute cost", criterion_macs},
      {"parameter counts", criterion_params},
      {"desk-scale learning", [&] { return criterion_learning(learn_steps); }},
      {"rtf harness", criterion_rtf},
      {"ablation harness", criterion_ablation},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (o.budget_s > 0.0 && secs >= o.budget_s) {
      o.pass = false;
      o.detail += fmt(" [over the %.0f s budget]", o.budget_s);
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail
              << fmt(" (%.1f s)", secs) << std::endl;
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
