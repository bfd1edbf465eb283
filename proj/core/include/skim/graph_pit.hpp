#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skim/tensor.hpp"

namespace skim {

struct Utterance {
  std::vector<double> source;
  std::size_t start = 0;
  std::string speaker_id;

  std::size_t end() const { return start + source.size(); }
};

/// channel_of[p] is the output channel of utterance p.
struct Assignment {
  std::vector<std::size_t> channel_of;
  bool operator==(const Assignment&) const = default;
};

struct TsdrParams {
  double snr_max_db = 20.0;
  double eps = 1e-6;

  /// 10^(-snr_max / 10)
  double tau() const;
  void validate() const;
};

/// Utterances are vertices; an edge joins two utterances whose half-open
/// intervals [start, end) share at least one sample.
struct OverlapGraph {
  std::vector<std::pair<std::size_t, std::size_t>> intervals;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // (u, v), u < v, sorted
  std::vector<std::vector<std::size_t>> adjacency;

  std::size_t num_vertices() const { return intervals.size(); }
  static OverlapGraph from_intervals(std::vector<std::pair<std::size_t, std::size_t>> intervals);
};

OverlapGraph build_overlap_graph(std::span<const Utterance> utterances);

class InfeasibleError : public Error {
 public:
  InfeasibleError(std::vector<std::size_t> clique, std::size_t channels);
  const std::vector<std::size_t>& clique() const { return clique_; }

 private:
  std::vector<std::size_t> clique_;
};

inline constexpr std::size_t kDefaultMaxUtterances = 20;

/// Largest set of simultaneously active utterances, by interval sweep.
std::vector<std::size_t> max_simultaneous(const OverlapGraph& graph);

/// Every valid channel map, in deterministic order (vertices in temporal
/// order, channels ascending). Throws InfeasibleError when some Q+1
/// utterances are simultaneously active.
void enumerate_colorings(const OverlapGraph& graph, std::size_t channels,
                         const std::function<void(const Assignment&)>& visit,
                         std::size_t max_vertices = kDefaultMaxUtterances);
std::vector<Assignment> all_colorings(const OverlapGraph& graph, std::size_t channels,
                                      std::size_t max_vertices = kDefaultMaxUtterances);

bool is_valid_assignment(const OverlapGraph& graph, const Assignment& a, std::size_t channels);

/// Channel q is the placed sum of the utterances assigned to q.
std::vector<std::vector<double>> render_targets(const Assignment& assignment,
                                                std::span<const Utterance> utterances,
                                                std::size_t session_len, std::size_t channels);

/// Thresholded SDR in dB: 10 log10(|s|^2 / (|s - est|^2 + tau |s|^2 + eps)).
double tsdr(std::span<const double> est, std::span<const double> ref, const TsdrParams& p = {});
/// Differentiable w.r.t. `est`.
Tensor tsdr(const Tensor& est, std::span<const double> ref, const TsdrParams& p = {});

/// Plain SDR in dB: 10 log10(|s|^2 / (|s - est|^2 + eps)).
double sdr(std::span<const double> est, std::span<const double> ref, double eps = 1e-6);

struct LossOptions {
  TsdrParams tsdr;
  /// Adds 10 log10(1 + |est|^2 / eps) for channels with silent targets and
  /// averages over all channels instead of only the active ones.
  bool penalize_silent = false;
  std::size_t max_utterances = kDefaultMaxUtterances;
};

struct PitLoss {
  Tensor loss;  // scalar, differentiable w.r.t. the estimates
  Assignment assignment;
  double value = 0.0;
};

/// Minimum over valid assignments of the mean negative tSDR over active channels.
PitLoss graph_pit_loss(const std::vector<Tensor>& estimates, std::span<const Utterance> utterances,
                       const LossOptions& options = {});

/// Loss of one fixed assignment, computed directly from rendered targets.
double assignment_loss(std::span<const std::vector<double>> estimates, const Assignment& a,
                       std::span<const Utterance> utterances, const LossOptions& options = {});

struct SdriResult {
  double sdri = 0.0;
  Assignment assignment;
  std::size_t active_channels = 0;
};

/// SDR improvement over the mixture with the SDR-maximizing Graph-PIT assignment.
SdriResult sdr_improvement(std::span<const std::vector<double>> estimates, std::span<const Utterance> utterances,
                           std::span<const double> mixture, std::size_t max_utterances = kDefaultMaxUtterances);

struct Sdri50Result {
  std::optional<double> value;  // empty: no qualifying window
  std::size_t qualifying_windows = 0;
  std::size_t total_windows = 0;
  static constexpr const char* kNoOverlapWindows = "no-overlap-windows";
};

/// Mean SDRi over non-overlapping windows in which more than
/// `overlap_threshold` of the samples have two or more active utterances.
Sdri50Result sdri50(std::span<const std::vector<double>> estimates, std::span<const Utterance> utterances,
                    std::span<const double> mixture, std::size_t window_len, double overlap_threshold = 0.5,
                    std::size_t max_utterances = kDefaultMaxUtterances);

}  // namespace skim
