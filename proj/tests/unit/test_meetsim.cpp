#include <doctest.h>

#include <fstream>
#include <set>

#include "../support.hpp"
#include "skim/meetsim.hpp"
#include "skim/wav.hpp"

using namespace skim;
namespace fs = std::filesystem;

namespace {

void le(std::vector<unsigned char>& b, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) b.push_back((v >> (8 * i)) & 0xff);
}

std::vector<unsigned char> fixture(std::uint16_t channels, const std::vector<std::int16_t>& pcm) {
  std::vector<unsigned char> b;
  const std::uint32_t data = std::uint32_t(pcm.size() * 2);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  le(b, 36 + data, 4);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  le(b, 16, 4);
  le(b, 1, 2);
  le(b, channels, 2);
  le(b, 8000, 4);
  le(b, 8000 * 2 * channels, 4);
  le(b, 2 * channels, 2);
  le(b, 16, 2);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  le(b, data, 4);
  for (auto s : pcm) le(b, std::uint16_t(s), 2);
  return b;
}

SimConfig small_sim(std::uint64_t seed) {
  SimConfig c;
  c.session_seconds = 4.0;
  c.num_speakers = {2, 3};
  c.utterance_seconds = {0.5, 1.2};
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("wav reads a hand-built 44-byte-header file") {
  const auto bytes = fixture(1, {0, 16384, -32768, 32767});
  REQUIRE(bytes.size() == 44 + 8);
  const WavData w = decode_wav(bytes);
  CHECK(w.sample_rate == 8000);
  CHECK(w.samples == std::vector<double>{0.0, 0.5, -1.0, 32767.0 / 32768.0});
}

TEST_CASE("wav errors") {
  try {
    (void)decode_wav(fixture(2, {1, 2, 3, 4}));
    FAIL("expected error");
  } catch (const WavError& e) {
    CHECK(std::string(e.what()).find("mono required") != std::string::npos);
  }
  auto bad = fixture(1, {1, 2});
  bad[8] = 'X';
  try {
    (void)decode_wav(bad);
    FAIL("expected error");
  } catch (const WavError& e) {
    CHECK(std::string(e.what()).find("at byte") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_wav(std::vector<unsigned char>(10, 0)), WavError);
}

TEST_CASE("wav round trip quantizes and counts clipping") {
  const std::vector<double> x{0.1, -0.25, 0.7, 1.5, -2.0};
  std::size_t clipped = 0;
  const WavData w = decode_wav(encode_wav(x, 16000, &clipped));
  CHECK(clipped == 2);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(w.samples[i] == quantize16(x[i]));
}

TEST_CASE("simulation is deterministic and respects its bounds") {
  const SimConfig cfg = small_sim(42);
  const MeetingSession a = simulate_meeting(cfg), b = simulate_meeting(cfg);
  CHECK(a.mixture == b.mixture);
  REQUIRE(a.utterances.size() == b.utterances.size());
  for (std::size_t i = 0; i < a.utterances.size(); ++i) CHECK(a.utterances[i].source == b.utterances[i].source);
  CHECK(a.mixture.size() == cfg.session_samples());
  CHECK(a.overlap_ratio >= cfg.overlap_ratio.lo);
  CHECK(a.overlap_ratio <= cfg.overlap_ratio.hi);
  CHECK(a.overlap_ratio == doctest::Approx(overlap_ratio(a.utterances, a.mixture.size())));
  std::set<std::string> speakers;
  for (const auto& u : a.utterances) {
    CHECK(u.end() <= a.mixture.size());
    speakers.insert(u.speaker_id);
  }
  CHECK(speakers.size() >= 2);
  CHECK(speakers.size() <= 3);
  for (std::size_t i = 0; i < a.mixture.size(); ++i) {
    double s = a.noise[i];
    for (const auto& u : a.utterances)
      if (i >= u.start && i < u.end()) s += u.source[i - u.start];
    CHECK(a.mixture[i] == doctest::Approx(s).epsilon(1e-12));
    if (i > 50) break;
  }
  CHECK(simulate_meeting(small_sim(43)).mixture != a.mixture);
}

TEST_CASE("every source kind and reverb simulate") {
  for (SourceKind k : {SourceKind::multitone, SourceKind::filtered_noise, SourceKind::chirp}) {
    SimConfig c = small_sim(3);
    c.source_kind = k;
    c.reverb = k == SourceKind::chirp;
    CHECK(simulate_meeting(c).utterances.size() >= 2);
    CHECK(parse_source_kind(to_string(k)) == k);
  }
  CHECK(parse_source_kind("filtered-noise") == SourceKind::filtered_noise);
}

TEST_CASE("unplaceable configs fail with diagnostics") {
  SimConfig c = small_sim(1);
  c.overlap_ratio = {0.97, 0.98};
  c.max_retries = 5;
  try {
    (void)simulate_meeting(c);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("after 5 attempts") != std::string::npos);
  }
  c = small_sim(1);
  c.utterance_seconds = {0.5, 9.0};
  CHECK_THROWS(c.validate());
}

TEST_CASE("manifest round trip and relative paths") {
  skim::test::TempDir dir("manifest");
  const MeetingSession s = simulate_meeting(small_sim(7));
  write_manifest(s, dir.path / "sess");
  const MeetingSession r = read_manifest(dir.path / "sess" / "manifest.json");
  CHECK(r.sample_rate == s.sample_rate);
  REQUIRE(r.mixture.size() == s.mixture.size());
  for (std::size_t i = 0; i < s.mixture.size(); ++i) CHECK(r.mixture[i] == quantize16(s.mixture[i]));
  REQUIRE(r.utterances.size() == s.utterances.size());
  for (std::size_t k = 0; k < s.utterances.size(); ++k) {
    CHECK(r.utterances[k].start == s.utterances[k].start);
    CHECK(r.utterances[k].speaker_id == s.utterances[k].speaker_id);
    CHECK(r.utterances[k].source.size() == s.utterances[k].source.size());
  }

  fs::remove(dir.path / "sess" / "utt_0.wav");
  try {
    (void)read_manifest(dir.path / "sess" / "manifest.json");
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("missing") != std::string::npos);
  }
}

TEST_CASE("manifest with an overlapping triangle still loads") {
  skim::test::TempDir dir("triangle");
  MeetingSession s;
  s.sample_rate = 8000;
  s.mixture.assign(100, 0.0);
  for (std::size_t i = 0; i < 3; ++i) s.utterances.push_back({std::vector<double>(50, 0.1), 10 * i, "spk" + std::to_string(i)});
  write_manifest(s, dir.path);
  CHECK(read_manifest(dir.path / "manifest.json").utterances.size() == 3);
}

TEST_CASE("dataset directory round trip") {
  skim::test::TempDir dir("dataset");
  const auto sessions = simulate_dataset(small_sim(100), 3);
  CHECK(sessions[1].mixture == simulate_meeting(small_sim(101)).mixture);
  write_dataset(sessions, dir.path);
  const auto back = read_dataset(dir.path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back[i].utterances.size() == sessions[i].utterances.size());
}
