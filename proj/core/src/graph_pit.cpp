#include "skim/graph_pit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace skim {

namespace {

constexpr std::size_t kUnassigned = std::numeric_limits<std::size_t>::max();
const double kDbPerNeper = 10.0 / std::log(10.0);

double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

void check_estimates(std::size_t count, std::size_t len, std::span<const Utterance> utterances,
                     const char* who) {
  if (count < 1) throw Error(std::string(who) + ": no estimate channels");
  for (std::size_t p = 0; p < utterances.size(); ++p)
    if (utterances[p].end() > len)
      throw ShapeError(std::string(who) + ": utterance " + std::to_string(p) + " ends at " +
                       std::to_string(utterances[p].end()) + " beyond session length " + std::to_string(len));
}

// Per-channel sufficient statistics. Targets on one channel never overlap,
// so |t_q - e_q|^2 = |e_q|^2 - 2 sum_p <e_q, u_p> + sum_p |u_p|^2.
struct Stats {
  std::vector<double> est_energy;           // [Q]
  std::vector<double> utt_energy;           // [P]
  std::vector<std::vector<double>> cross;   // [Q][P]
};

template <class GetEst>
Stats gather(std::size_t Q, GetEst est, std::span<const Utterance> utterances) {
  Stats s;
  s.est_energy.resize(Q);
  s.cross.assign(Q, std::vector<double>(utterances.size(), 0.0));
  for (const auto& u : utterances) s.utt_energy.push_back(energy(u.source));
  for (std::size_t q = 0; q < Q; ++q) {
    std::span<const double> e = est(q);
    s.est_energy[q] = energy(e);
    for (std::size_t p = 0; p < utterances.size(); ++p) {
      const auto& u = utterances[p];
      double d = 0.0;
      for (std::size_t i = 0; i < u.source.size(); ++i) d += e[u.start + i] * u.source[i];
      s.cross[q][p] = d;
    }
  }
  return s;
}

// Mean over active channels of f(target energy, error energy).
template <class F>
double score(const Stats& s, const Assignment& a, std::size_t Q, F f, double silent_penalty_eps, bool penalize) {
  std::vector<double> target(Q, 0.0), err(Q, 0.0);
  for (std::size_t q = 0; q < Q; ++q) err[q] = s.est_energy[q];
  for (std::size_t p = 0; p < a.channel_of.size(); ++p) {
    const std::size_t q = a.channel_of[p];
    target[q] += s.utt_energy[p];
    err[q] += s.utt_energy[p] - 2.0 * s.cross[q][p];
  }
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t q = 0; q < Q; ++q) {
    if (target[q] > 0.0) {
      total += f(target[q], std::max(err[q], 0.0));
      ++n;
    } else if (penalize) {
      total += 10.0 * std::log10(1.0 + s.est_energy[q] / silent_penalty_eps);
      ++n;
    }
  }
  return n ? total / double(n) : 0.0;
}

}  // namespace

double TsdrParams::tau() const { return std::pow(10.0, -snr_max_db / 10.0); }

void TsdrParams::validate() const {
  if (!(snr_max_db > 0.0)) throw Error("tsdr: snr_max must be positive");
  if (!(eps > 0.0)) throw Error("tsdr: eps must be positive");
}

// ---- overlap graph -----------------------------------------------------------------

OverlapGraph OverlapGraph::from_intervals(std::vector<std::pair<std::size_t, std::size_t>> intervals) {
  OverlapGraph g;
  g.intervals = std::move(intervals);
  const std::size_t P = g.intervals.size();
  g.adjacency.assign(P, {});
  for (std::size_t u = 0; u < P; ++u)
    for (std::size_t v = u + 1; v < P; ++v) {
      const auto [s1, e1] = g.intervals[u];
      const auto [s2, e2] = g.intervals[v];
      if (std::max(s1, s2) < std::min(e1, e2)) {
        g.edges.emplace_back(u, v);
        g.adjacency[u].push_back(v);
        g.adjacency[v].push_back(u);
      }
    }
  return g;
}

OverlapGraph build_overlap_graph(std::span<const Utterance> utterances) {
  std::vector<std::pair<std::size_t, std::size_t>> iv;
  for (const auto& u : utterances) iv.emplace_back(u.start, u.end());
  return OverlapGraph::from_intervals(std::move(iv));
}

InfeasibleError::InfeasibleError(std::vector<std::size_t> clique, std::size_t channels)
    : Error("infeasible: utterances {" + join(clique) + "} are simultaneously active but only " +
            std::to_string(channels) + " output channels exist"),
      clique_(std::move(clique)) {}

std::vector<std::size_t> max_simultaneous(const OverlapGraph& graph) {
  struct Event {
    std::size_t pos;
    int delta;
    std::size_t idx;
  };
  std::vector<Event> events;
  for (std::size_t i = 0; i < graph.intervals.size(); ++i) {
    const auto [s, e] = graph.intervals[i];
    if (s >= e) continue;
    events.push_back({s, +1, i});
    events.push_back({e, -1, i});
  }
  // Ends sort before starts at the same position (half-open intervals).
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return a.pos != b.pos ? a.pos < b.pos : a.delta < b.delta;
  });
  std::set<std::size_t> active;
  std::vector<std::size_t> best;
  for (const auto& ev : events) {
    if (ev.delta > 0) {
      active.insert(ev.idx);
      if (active.size() > best.size()) best.assign(active.begin(), active.end());
    } else {
      active.erase(ev.idx);
    }
  }
  return best;
}

bool is_valid_assignment(const OverlapGraph& graph, const Assignment& a, std::size_t channels) {
  if (a.channel_of.size() != graph.num_vertices()) return false;
  for (std::size_t q : a.channel_of)
    if (q >= channels) return false;
  for (const auto& [u, v] : graph.edges)
    if (a.channel_of[u] == a.channel_of[v]) return false;
  return true;
}

void enumerate_colorings(const OverlapGraph& graph, std::size_t channels,
                         const std::function<void(const Assignment&)>& visit, std::size_t max_vertices) {
  const std::size_t P = graph.num_vertices();
  if (channels < 1) throw Error("enumerate_colorings: need at least one channel");
  if (P > max_vertices)
    throw Error("enumerate_colorings: " + std::to_string(P) + " utterances exceed the cap of " +
                std::to_string(max_vertices));
  if (auto clique = max_simultaneous(graph); clique.size() > channels)
    throw InfeasibleError(std::move(clique), channels);

  std::vector<std::size_t> order(P);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return graph.intervals[a].first < graph.intervals[b].first;
  });

  Assignment a;
  a.channel_of.assign(P, kUnassigned);
  auto usable = [&](std::size_t v, std::size_t q) {
    for (std::size_t u : graph.adjacency[v])
      if (a.channel_of[u] == q) return false;
    return true;
  };
  // Every unassigned neighbour of v must keep at least one usable channel.
  auto forward_ok = [&](std::size_t v) {
    for (std::size_t w : graph.adjacency[v]) {
      if (a.channel_of[w] != kUnassigned) continue;
      bool any = false;
      for (std::size_t q = 0; q < channels && !any; ++q) any = usable(w, q);
      if (!any) return false;
    }
    return true;
  };
  std::function<void(std::size_t)> recurse = [&](std::size_t depth) {
    if (depth == P) {
      visit(a);
      return;
    }
    const std::size_t v = order[depth];
    for (std::size_t q = 0; q < channels; ++q) {
      if (!usable(v, q)) continue;
      a.channel_of[v] = q;
      if (forward_ok(v)) recurse(depth + 1);
      a.channel_of[v] = kUnassigned;
    }
  };
  recurse(0);
}

std::vector<Assignment> all_colorings(const OverlapGraph& graph, std::size_t channels, std::size_t max_vertices) {
  std::vector<Assignment> out;
  enumerate_colorings(graph, channels, [&](const Assignment& a) { out.push_back(a); }, max_vertices);
  return out;
}

std::vector<std::vector<double>> render_targets(const Assignment& assignment, std::span<const Utterance> utterances,
                                                std::size_t session_len, std::size_t channels) {
  if (assignment.channel_of.size() != utterances.size())
    throw Error("render_targets: assignment covers " + std::to_string(assignment.channel_of.size()) +
                " utterances, expected " + std::to_string(utterances.size()));
  const OverlapGraph g = build_overlap_graph(utterances);
  if (!is_valid_assignment(g, assignment, channels))
    throw Error("render_targets: invalid assignment (overlapping utterances share a channel or channel out of range)");
  std::vector<std::vector<double>> out(channels, std::vector<double>(session_len, 0.0));
  for (std::size_t p = 0; p < utterances.size(); ++p) {
    const auto& u = utterances[p];
    if (u.end() > session_len) throw ShapeError("render_targets: utterance beyond session end");
    auto& ch = out[assignment.channel_of[p]];
    for (std::size_t i = 0; i < u.source.size(); ++i) ch[u.start + i] += u.source[i];
  }
  return out;
}

// ---- metrics -------------------------------------------------------------------------

double tsdr(std::span<const double> est, std::span<const double> ref, const TsdrParams& p) {
  p.validate();
  if (est.size() != ref.size()) throw ShapeError("tsdr: length mismatch");
  const double s = energy(ref);
  if (s == 0.0) throw Error("tsdr: silent reference");
  double err = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) err += (ref[i] - est[i]) * (ref[i] - est[i]);
  return 10.0 * std::log10(s / (err + p.tau() * s + p.eps));
}

Tensor tsdr(const Tensor& est, std::span<const double> ref, const TsdrParams& p) {
  p.validate();
  if (est.rank() != 1 || est.size() != ref.size()) throw ShapeError("tsdr: length mismatch");
  const double s = energy(ref);
  if (s == 0.0) throw Error("tsdr: silent reference");
  Tensor target(Shape{ref.size()}, std::vector<double>(ref.begin(), ref.end()));
  Tensor den = add_scalar(sum(square(sub(target, est))), p.tau() * s + p.eps);
  // 10 log10(s) - 10 log10(den)
  return add_scalar(mul_scalar(log(den), -kDbPerNeper), 10.0 * std::log10(s));
}

double sdr(std::span<const double> est, std::span<const double> ref, double eps) {
  if (est.size() != ref.size()) throw ShapeError("sdr: length mismatch");
  const double s = energy(ref);
  if (s == 0.0) throw Error("sdr: silent reference");
  double err = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) err += (ref[i] - est[i]) * (ref[i] - est[i]);
  return 10.0 * std::log10(s / (err + eps));
}

PitLoss graph_pit_loss(const std::vector<Tensor>& estimates, std::span<const Utterance> utterances,
                       const LossOptions& options) {
  options.tsdr.validate();
  const std::size_t Q = estimates.size();
  if (Q == 0) throw Error("graph_pit_loss: no estimate channels");
  const std::size_t len = estimates[0].size();
  for (const auto& e : estimates)
    if (e.rank() != 1 || e.size() != len) throw ShapeError("graph_pit_loss: estimates must be equal-length 1-D");
  check_estimates(Q, len, utterances, "graph_pit_loss");

  const Stats stats = gather(Q, [&](std::size_t q) { return estimates[q].data(); }, utterances);
  const double tau = options.tsdr.tau(), eps = options.tsdr.eps;
  auto neg_tsdr = [&](double t, double err) { return -10.0 * std::log10(t / (err + tau * t + eps)); };

  const OverlapGraph graph = build_overlap_graph(utterances);
  std::optional<Assignment> best;
  double best_value = std::numeric_limits<double>::infinity();
  enumerate_colorings(
      graph, Q,
      [&](const Assignment& a) {
        const double v = score(stats, a, Q, neg_tsdr, eps, options.penalize_silent);
        if (v < best_value) {
          best_value = v;
          best = a;
        }
      },
      options.max_utterances);
  if (!best) throw Error("graph_pit_loss: no valid assignment");

  const auto targets = render_targets(*best, utterances, len, Q);
  std::vector<Tensor> terms;
  for (std::size_t q = 0; q < Q; ++q) {
    if (energy(targets[q]) > 0.0) {
      terms.push_back(mul_scalar(tsdr(estimates[q], targets[q], options.tsdr), -1.0));
    } else if (options.penalize_silent) {
      terms.push_back(mul_scalar(log(add_scalar(mul_scalar(sum(square(estimates[q])), 1.0 / eps), 1.0)), kDbPerNeper));
    }
  }
  PitLoss out;
  out.assignment = *best;
  if (terms.empty()) {
    out.loss = mul_scalar(sum(estimates[0]), 0.0);
  } else {
    Tensor total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
    out.loss = mul_scalar(total, 1.0 / double(terms.size()));
  }
  out.value = out.loss.item();
  return out;
}

double assignment_loss(std::span<const std::vector<double>> estimates, const Assignment& a,
                       std::span<const Utterance> utterances, const LossOptions& options) {
  const std::size_t Q = estimates.size();
  const std::size_t len = Q ? estimates[0].size() : 0;
  const auto targets = render_targets(a, utterances, len, Q);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t q = 0; q < Q; ++q) {
    if (energy(targets[q]) > 0.0) {
      total -= tsdr(estimates[q], targets[q], options.tsdr);
      ++n;
    } else if (options.penalize_silent) {
      total += 10.0 * std::log10(1.0 + energy(estimates[q]) / options.tsdr.eps);
      ++n;
    }
  }
  return n ? total / double(n) : 0.0;
}

SdriResult sdr_improvement(std::span<const std::vector<double>> estimates, std::span<const Utterance> utterances,
                           std::span<const double> mixture, std::size_t max_utterances) {
  const std::size_t Q = estimates.size();
  const std::size_t len = mixture.size();
  for (const auto& e : estimates)
    if (e.size() != len) throw ShapeError("sdr_improvement: estimate length differs from mixture");
  check_estimates(Q, len, utterances, "sdr_improvement");
  const Stats stats = gather(Q, [&](std::size_t q) { return std::span<const double>(estimates[q]); }, utterances);
  constexpr double eps = 1e-6;
  auto plain = [&](double t, double err) { return 10.0 * std::log10(t / (err + eps)); };

  std::optional<Assignment> best;
  double best_value = -std::numeric_limits<double>::infinity();
  enumerate_colorings(
      build_overlap_graph(utterances), Q,
      [&](const Assignment& a) {
        const double v = score(stats, a, Q, plain, eps, false);
        if (v > best_value) {
          best_value = v;
          best = a;
        }
      },
      max_utterances);
  if (!best) throw Error("sdr_improvement: no valid assignment");

  const auto targets = render_targets(*best, utterances, len, Q);
  SdriResult r;
  r.assignment = *best;
  double total = 0.0;
  for (std::size_t q = 0; q < Q; ++q) {
    if (energy(targets[q]) == 0.0) continue;
    total += sdr(estimates[q], targets[q], eps) - sdr(mixture, targets[q], eps);
    ++r.active_channels;
  }
  r.sdri = r.active_channels ? total / double(r.active_channels) : 0.0;
  return r;
}

Sdri50Result sdri50(std::span<const std::vector<double>> estimates, std::span<const Utterance> utterances,
                    std::span<const double> mixture, std::size_t window_len, double overlap_threshold,
                    std::size_t max_utterances) {
  const std::size_t len = mixture.size();
  if (window_len == 0) throw Error("sdri50: window length must be positive");
  if (len < window_len) throw Error("sdri50: session shorter than one window");
  const SdriResult session = sdr_improvement(estimates, utterances, mixture, max_utterances);
  const std::size_t Q = estimates.size();
  const auto targets = render_targets(session.assignment, utterances, len, Q);

  std::vector<int> active(len + 1, 0);  // difference array of active-utterance counts
  for (const auto& u : utterances) {
    if (u.source.empty()) continue;
    active[u.start] += 1;
    active[u.end()] -= 1;
  }
  for (std::size_t i = 1; i <= len; ++i) active[i] += active[i - 1];

  Sdri50Result r;
  r.total_windows = len / window_len;
  double total = 0.0;
  constexpr double eps = 1e-6;
  for (std::size_t w = 0; w < r.total_windows; ++w) {
    const std::size_t b = w * window_len;
    std::size_t overlapped = 0;
    for (std::size_t i = b; i < b + window_len; ++i) overlapped += active[i] >= 2;
    if (double(overlapped) / double(window_len) <= overlap_threshold) continue;
    double win_total = 0.0;
    std::size_t n = 0;
    auto mix = mixture.subspan(b, window_len);
    for (std::size_t q = 0; q < Q; ++q) {
      auto t = std::span<const double>(targets[q]).subspan(b, window_len);
      if (energy(t) == 0.0) continue;
      auto e = std::span<const double>(estimates[q]).subspan(b, window_len);
      win_total += sdr(e, t, eps) - sdr(mix, t, eps);
      ++n;
    }
    if (n == 0) continue;
    total += win_total / double(n);
    ++r.qualifying_windows;
  }
  if (r.qualifying_windows) r.value = total / double(r.qualifying_windows);
  return r;
}

}  // namespace skim
