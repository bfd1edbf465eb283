#include "skim/meetsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "skim/wav.hpp"

namespace skim {

namespace {

using Json = nlohmann::json;
using Rng64 = std::mt19937_64;

constexpr std::size_t kBandPool = 8;

struct Voice {
  std::size_t band = 0;
  double lo = 0.0, hi = 0.0;  // Hz
  double tones[3] = {};
};

double uniform(Rng64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::size_t uniform_index(Rng64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Log-spaced, non-touching bands between 150 Hz and 0.45 fs.
std::pair<double, double> band_edges(std::size_t band, unsigned fs) {
  const double f0 = 150.0, f1 = 0.45 * fs;
  const double step = std::log(f1 / f0) / double(kBandPool);
  const double lo = f0 * std::exp(step * double(band));
  const double hi = f0 * std::exp(step * double(band + 1));
  const double guard = 0.08 * (hi - lo);
  return {lo + guard, hi - guard};
}

Voice make_voice(std::size_t band, unsigned fs, Rng64& rng) {
  Voice v;
  v.band = band;
  std::tie(v.lo, v.hi) = band_edges(band, fs);
  for (double& t : v.tones) t = uniform(rng, v.lo, v.hi);
  return v;
}

std::vector<double> syllable_envelope(std::size_t n, unsigned fs, Rng64& rng) {
  std::vector<double> env(n, 0.0);
  std::size_t pos = 0;
  while (pos < n) {
    const auto len = std::max<std::size_t>(8, std::size_t(uniform(rng, 0.08, 0.22) * fs));
    const double amp = uniform(rng, 0.5, 1.0);
    for (std::size_t i = 0; i < len && pos + i < n; ++i)
      env[pos + i] = amp * (0.2 + 0.8 * std::sin(std::numbers::pi * double(i) / double(len)));
    pos += len;
  }
  return env;
}

// RBJ band-pass biquad, constant 0 dB peak gain.
void bandpass(std::vector<double>& x, double lo, double hi, unsigned fs) {
  const double fc = std::sqrt(lo * hi);
  const double q = fc / (hi - lo);
  const double w = 2.0 * std::numbers::pi * fc / fs;
  const double alpha = std::sin(w) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  const double b0 = alpha / a0, b2 = -alpha / a0;
  const double a1 = -2.0 * std::cos(w) / a0, a2 = (1.0 - alpha) / a0;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (double& s : x) {
    const double y = b0 * s + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = s;
    y2 = y1;
    y1 = y;
    s = y;
  }
}

std::vector<double> synthesize(const Voice& v, SourceKind kind, std::size_t n, unsigned fs, Rng64& rng) {
  std::vector<double> s(n, 0.0);
  switch (kind) {
    case SourceKind::multitone: {
      for (double f : v.tones) {
        const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double amp = uniform(rng, 0.5, 1.0);
        for (std::size_t i = 0; i < n; ++i) s[i] += amp * std::sin(2.0 * std::numbers::pi * f * double(i) / fs + phase);
      }
      break;
    }
    case SourceKind::filtered_noise: {
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (double& x : s) x = gauss(rng);
      bandpass(s, v.lo, v.hi, fs);
      bandpass(s, v.lo, v.hi, fs);
      break;
    }
    case SourceKind::chirp: {
      const double f_start = uniform(rng, v.lo, v.hi), f_end = uniform(rng, v.lo, v.hi);
      const double dur = double(n) / fs;
      double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < n; ++i) {
        const double f = f_start + (f_end - f_start) * (double(i) / fs) / dur;
        phase += 2.0 * std::numbers::pi * f / fs;
        s[i] = std::sin(phase);
      }
      break;
    }
  }
  const auto env = syllable_envelope(n, fs, rng);
  for (std::size_t i = 0; i < n; ++i) s[i] *= env[i];
  return s;
}

void apply_reverb(std::vector<double>& s, unsigned fs, Rng64& rng) {
  const std::size_t taps = std::max<std::size_t>(2, fs / 25);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> h(taps);
  h[0] = 1.0;
  for (std::size_t i = 1; i < taps; ++i) h[i] = 0.3 * gauss(rng) * std::exp(-5.0 * double(i) / double(taps));
  std::vector<double> out(s.size(), 0.0);
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < taps && j <= i; ++j) out[i] += h[j] * s[i - j];
  s = std::move(out);
}

void normalize_rms(std::vector<double>& s, double target) {
  double e = 0.0;
  for (double x : s) e += x * x;
  const double rms = std::sqrt(e / double(std::max<std::size_t>(1, s.size())));
  if (rms > 0.0)
    for (double& x : s) x *= target / rms;
}

struct Slot {
  std::size_t start, len, speaker;
};

struct Layout {
  std::vector<Slot> slots;
  double ratio = 0.0;
  std::size_t speakers_used = 0;
};

double ratio_of(const std::vector<Slot>& slots, std::size_t total) {
  std::vector<Utterance> u;
  for (const auto& s : slots) u.push_back({std::vector<double>(s.len), s.start, {}});
  return overlap_ratio(u, total);
}

// Chains utterances so the running overlap ratio tracks a sampled target.
Layout place(const SimConfig& cfg, std::size_t speakers, Rng64& rng) {
  const unsigned fs = cfg.sample_rate;
  const std::size_t total = cfg.session_samples();
  const double target = uniform(rng, cfg.overlap_ratio.lo, cfg.overlap_ratio.hi);
  Layout out;
  std::vector<bool> used(speakers, false);
  double speech = 0.0, overlapped = 0.0;
  std::size_t cursor_end = 0;
  for (;;) {
    const auto len = std::size_t(uniform(rng, cfg.utterance_seconds.lo, cfg.utterance_seconds.hi) * fs);
    std::size_t start;
    if (out.slots.empty()) {
      start = std::size_t(uniform(rng, 0.0, 0.25) * fs);
    } else {
      double o = (target * (speech + double(len)) - overlapped) / (1.0 + target) * uniform(rng, 0.8, 1.2);
      if (uniform(rng, 0.0, 1.0) < 0.15) o = -uniform(rng, 0.0, 0.3) * fs;
      const std::size_t m = cfg.max_concurrent;
      const std::size_t floor_start =
          out.slots.size() >= m ? out.slots[out.slots.size() - m].start + out.slots[out.slots.size() - m].len : 0;
      const double max_o = double(std::min(len, cursor_end - std::min(cursor_end, floor_start)));
      o = std::min(o, max_o);
      start = o >= 0.0 ? cursor_end - std::size_t(o) : cursor_end + std::size_t(-o);
    }
    if (start + len > total) break;
    std::vector<std::size_t> free, fresh;
    for (std::size_t s = 0; s < speakers; ++s) {
      bool active = false;
      for (const auto& sl : out.slots) active |= sl.speaker == s && sl.start + sl.len > start;
      if (active) continue;
      free.push_back(s);
      if (!used[s]) fresh.push_back(s);
    }
    if (free.empty()) break;
    const auto& pool = fresh.empty() ? free : fresh;
    const std::size_t spk = pool[uniform_index(rng, 0, pool.size() - 1)];
    const double ov = double(cursor_end > start ? std::min(cursor_end - start, len) : 0);
    overlapped += ov;
    speech += double(len) - ov;
    used[spk] = true;
    out.slots.push_back({start, len, spk});
    cursor_end = std::max(cursor_end, start + len);
  }
  out.speakers_used = std::size_t(std::count(used.begin(), used.end(), true));
  out.ratio = ratio_of(out.slots, total);
  return out;
}

}  // namespace

std::string to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::multitone: return "multitone";
    case SourceKind::filtered_noise: return "filtered-noise";
    case SourceKind::chirp: return "chirp";
  }
  return "?";
}

SourceKind parse_source_kind(const std::string& name) {
  if (name == "multitone") return SourceKind::multitone;
  if (name == "filtered-noise") return SourceKind::filtered_noise;
  if (name == "chirp") return SourceKind::chirp;
  throw Error("unknown source kind '" + name + "' (expected multitone, filtered-noise or chirp)");
}

void SimConfig::validate() const {
  if (sample_rate == 0) throw Error("sim: sample_rate must be positive");
  if (!(session_seconds > 0.0)) throw Error("sim: session_seconds must be positive");
  if (num_speakers.empty() || num_speakers.lo < 1) throw Error("sim: num_speakers range must be non-empty and >= 1");
  if (num_speakers.hi > kBandPool)
    throw Error("sim: at most " + std::to_string(kBandPool) + " speakers have distinct spectral bands");
  if (overlap_ratio.empty() || overlap_ratio.lo < 0.0 || overlap_ratio.hi >= 1.0)
    throw Error("sim: overlap_ratio range must be non-empty within [0, 1)");
  if (utterance_seconds.empty() || !(utterance_seconds.lo > 0.0))
    throw Error("sim: utterance_seconds range must be non-empty and positive");
  if (utterance_seconds.hi >= session_seconds) throw Error("sim: utterances longer than the session");
  if (noise_snr_db.empty()) throw Error("sim: noise_snr_db range must be non-empty");
  if (max_concurrent < 1) throw Error("sim: max_concurrent must be >= 1");
  if (overlap_ratio.lo > 0.0 && (max_concurrent < 2 || num_speakers.hi < 2))
    throw Error("sim: overlap requires max_concurrent >= 2 and at least two speakers");
  if (max_retries < 1) throw Error("sim: max_retries must be >= 1");
}

std::size_t SimConfig::session_samples() const { return std::size_t(std::lround(session_seconds * sample_rate)); }

double overlap_ratio(std::span<const Utterance> utterances, std::size_t session_len) {
  std::vector<int> active(session_len + 1, 0);
  for (const auto& u : utterances) {
    if (u.end() > session_len) throw ShapeError("overlap_ratio: utterance beyond session end");
    if (u.source.empty()) continue;
    active[u.start] += 1;
    active[u.end()] -= 1;
  }
  std::size_t speech = 0, overlapped = 0;
  int run = 0;
  for (std::size_t i = 0; i < session_len; ++i) {
    run += active[i];
    speech += run >= 1;
    overlapped += run >= 2;
  }
  return speech ? double(overlapped) / double(speech) : 0.0;
}

MeetingSession simulate_meeting(const SimConfig& cfg) {
  cfg.validate();
  Rng64 rng(cfg.seed);
  const unsigned fs = cfg.sample_rate;
  const std::size_t total = cfg.session_samples();
  const std::size_t speakers = uniform_index(rng, cfg.num_speakers.lo, cfg.num_speakers.hi);

  Layout layout;
  std::size_t attempt = 0;
  for (; attempt < cfg.max_retries; ++attempt) {
    layout = place(cfg, speakers, rng);
    if (layout.slots.size() >= 2 && layout.speakers_used == speakers && layout.ratio >= cfg.overlap_ratio.lo &&
        layout.ratio <= cfg.overlap_ratio.hi)
      break;
  }
  if (attempt == cfg.max_retries) {
    std::ostringstream msg;
    msg << "simulate_meeting: no placement within overlap_ratio [" << cfg.overlap_ratio.lo << ", "
        << cfg.overlap_ratio.hi << "] after " << cfg.max_retries << " attempts (last: ratio " << layout.ratio << ", "
        << layout.slots.size() << " utterances, " << layout.speakers_used << "/" << speakers
        << " speakers placed, session " << cfg.session_seconds << " s, utterances " << cfg.utterance_seconds.lo
        << "-" << cfg.utterance_seconds.hi << " s)";
    throw Error(msg.str());
  }

  std::vector<std::size_t> bands(kBandPool);
  std::iota(bands.begin(), bands.end(), 0);
  std::shuffle(bands.begin(), bands.end(), rng);
  std::vector<Voice> voices;
  for (std::size_t s = 0; s < speakers; ++s) voices.push_back(make_voice(bands[s], fs, rng));

  MeetingSession session;
  session.sample_rate = fs;
  std::vector<double> speech(total, 0.0);
  for (const auto& slot : layout.slots) {
    const Voice& v = voices[slot.speaker];
    auto src = synthesize(v, cfg.source_kind, slot.len, fs, rng);
    if (cfg.reverb) apply_reverb(src, fs, rng);
    normalize_rms(src, uniform(rng, 0.06, 0.1));
    for (std::size_t i = 0; i < slot.len; ++i) speech[slot.start + i] += src[i];
    session.utterances.push_back({std::move(src), slot.start, "spk" + std::to_string(v.band)});
  }
  double power = 0.0;
  for (double x : speech) power += x * x;
  power /= double(total);
  const double snr = uniform(rng, cfg.noise_snr_db.lo, cfg.noise_snr_db.hi);
  const double sigma = std::sqrt(power / std::pow(10.0, snr / 10.0));
  std::normal_distribution<double> gauss(0.0, 1.0);
  session.noise.resize(total);
  session.mixture.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    session.noise[i] = sigma * gauss(rng);
    session.mixture[i] = speech[i] + session.noise[i];
  }
  session.overlap_ratio = overlap_ratio(session.utterances, total);
  return session;
}

std::vector<MeetingSession> simulate_dataset(SimConfig cfg, std::size_t count) {
  std::vector<MeetingSession> out;
  const std::uint64_t base = cfg.seed;
  for (std::size_t i = 0; i < count; ++i) {
    cfg.seed = base + i;
    out.push_back(simulate_meeting(cfg));
  }
  return out;
}

void write_manifest(const MeetingSession& session, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_wav(dir / "mixture.wav", session.mixture, session.sample_rate);
  Json utts = Json::array();
  for (std::size_t k = 0; k < session.utterances.size(); ++k) {
    const auto& u = session.utterances[k];
    const std::string name = "utt_" + std::to_string(k) + ".wav";
    write_wav(dir / name, u.source, session.sample_rate);
    utts.push_back({{"source", name}, {"start_sample", u.start}, {"speaker_id", u.speaker_id}});
  }
  Json j = {{"sample_rate", session.sample_rate}, {"mixture", "mixture.wav"}, {"utterances", utts}};
  std::ofstream f(dir / "manifest.json");
  if (!f) throw Error("manifest: cannot write " + (dir / "manifest.json").string());
  f << j.dump(2) << "\n";
}

MeetingSession read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw Error("manifest: cannot open " + manifest_path.string());
  Json j;
  try {
    j = Json::parse(f);
  } catch (const Json::exception& e) {
    throw Error("manifest: " + manifest_path.string() + ": " + e.what());
  }
  const auto base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    path = path.is_absolute() ? path : base / path;
    if (!std::filesystem::exists(path))
      throw Error("manifest: " + manifest_path.string() + " references missing file " + path.string());
    return path;
  };
  MeetingSession s;
  try {
    s.sample_rate = j.at("sample_rate").get<unsigned>();
    const auto mix = read_wav(resolve(j.at("mixture").get<std::string>()));
    if (mix.sample_rate != s.sample_rate) throw Error("manifest: mixture sample rate differs from manifest");
    s.mixture = mix.samples;
    for (const auto& u : j.at("utterances")) {
      const auto src = read_wav(resolve(u.at("source").get<std::string>()));
      if (src.sample_rate != s.sample_rate) throw Error("manifest: utterance sample rate differs from manifest");
      Utterance utt{src.samples, u.at("start_sample").get<std::size_t>(), u.at("speaker_id").get<std::string>()};
      if (utt.end() > s.mixture.size())
        throw Error("manifest: utterance '" + u.at("source").get<std::string>() + "' extends beyond the mixture");
      s.utterances.push_back(std::move(utt));
    }
  } catch (const Json::exception& e) {
    throw Error("manifest: " + manifest_path.string() + ": " + e.what());
  }
  s.overlap_ratio = overlap_ratio(s.utterances, s.mixture.size());
  return s;
}

void write_dataset(std::span<const MeetingSession> sessions, const std::filesystem::path& root) {
  const int width = std::max<int>(4, int(std::to_string(sessions.size()).size()));
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    std::string id = std::to_string(i);
    id.insert(0, std::size_t(std::max(0, width - int(id.size()))), '0');
    write_manifest(sessions[i], root / "sessions" / id);
  }
}

std::vector<MeetingSession> read_dataset(const std::filesystem::path& root) {
  const auto dir = root / "sessions";
  if (!std::filesystem::is_directory(dir)) throw Error("dataset: no sessions directory under " + root.string());
  std::vector<std::filesystem::path> manifests;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (std::filesystem::exists(e.path() / "manifest.json")) manifests.push_back(e.path() / "manifest.json");
  std::sort(manifests.begin(), manifests.end());
  if (manifests.empty()) throw Error("dataset: " + dir.string() + " holds no sessions");
  std::vector<MeetingSession> out;
  for (const auto& m : manifests) out.push_back(read_manifest(m));
  return out;
}

}  // namespace skim
