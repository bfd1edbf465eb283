#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "skim/graph_pit.hpp"

namespace skim {

enum class SourceKind { multitone, filtered_noise, chirp };

std::string to_string(SourceKind kind);
SourceKind parse_source_kind(const std::string& name);

template <class T>
struct Range {
  T lo{}, hi{};
  bool empty() const { return hi < lo; }
};

struct SimConfig {
  unsigned sample_rate = 8000;
  double session_seconds = 8.0;
  Range<std::size_t> num_speakers{3, 5};
  Range<double> overlap_ratio{0.5, 0.8};
  Range<double> utterance_seconds{0.8, 2.0};
  SourceKind source_kind = SourceKind::multitone;
  Range<double> noise_snr_db{20.0, 30.0};
  /// Upper bound on simultaneously active utterances.
  std::size_t max_concurrent = 2;
  bool reverb = false;
  std::size_t max_retries = 500;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t session_samples() const;
};

struct MeetingSession {
  std::vector<double> mixture;
  std::vector<Utterance> utterances;
  std::vector<double> noise;  // empty when loaded from disk
  unsigned sample_rate = 0;
  double overlap_ratio = 0.0;
};

/// Overlapped speech time over total speech time, from utterance intervals.
double overlap_ratio(std::span<const Utterance> utterances, std::size_t session_len);

MeetingSession simulate_meeting(const SimConfig& cfg);
/// Session i of a dataset uses seed base_seed + i.
std::vector<MeetingSession> simulate_dataset(SimConfig cfg, std::size_t count);

/// Writes mixture.wav, utt_<k>.wav and manifest.json into `dir`.
void write_manifest(const MeetingSession& session, const std::filesystem::path& dir);
MeetingSession read_manifest(const std::filesystem::path& manifest_path);

/// Layout: <root>/sessions/<id>/{mixture.wav, utt_<k>.wav, manifest.json}.
void write_dataset(std::span<const MeetingSession> sessions, const std::filesystem::path& root);
std::vector<MeetingSession> read_dataset(const std::filesystem::path& root);

}  // namespace skim
