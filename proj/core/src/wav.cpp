#include "skim/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>

namespace skim {

namespace {

void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back(v >> 8);
}

void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}

void put_tag(std::vector<unsigned char>& b, const char* tag) { b.insert(b.end(), tag, tag + 4); }

[[noreturn]] void fail(std::size_t offset, const std::string& what) {
  throw WavError("wav: " + what + " at byte " + std::to_string(offset));
}

struct Reader {
  std::span<const unsigned char> b;

  void need(std::size_t at, std::size_t n, const char* what) const {
    if (at + n > b.size()) fail(at, std::string("truncated ") + what);
  }
  std::uint16_t u16(std::size_t at) const {
    need(at, 2, "field");
    return std::uint16_t(b[at] | (b[at + 1] << 8));
  }
  std::uint32_t u32(std::size_t at) const {
    need(at, 4, "field");
    return std::uint32_t(b[at]) | (std::uint32_t(b[at + 1]) << 8) | (std::uint32_t(b[at + 2]) << 16) |
           (std::uint32_t(b[at + 3]) << 24);
  }
  bool tag(std::size_t at, const char* t) const {
    need(at, 4, "chunk id");
    return std::memcmp(b.data() + at, t, 4) == 0;
  }
};

std::int16_t to_pcm(double x, std::size_t& clipped) {
  double v = std::round(x * 32768.0);
  if (v > 32767.0 || v < -32768.0 || !std::isfinite(v)) {
    ++clipped;
    v = std::isnan(v) ? 0.0 : std::clamp(v, -32768.0, 32767.0);
  }
  return static_cast<std::int16_t>(v);
}

}  // namespace

double quantize16(double x) {
  std::size_t ignored = 0;
  return to_pcm(x, ignored) / 32768.0;
}

std::vector<unsigned char> encode_wav(std::span<const double> samples, unsigned sample_rate, std::size_t* clipped) {
  if (sample_rate == 0) throw WavError("wav: sample rate must be positive");
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<unsigned char> b;
  b.reserve(44 + data_bytes);
  put_tag(b, "RIFF");
  put_u32(b, 36 + data_bytes);
  put_tag(b, "WAVE");
  put_tag(b, "fmt ");
  put_u32(b, 16);
  put_u16(b, 1);  // PCM
  put_u16(b, 1);  // mono
  put_u32(b, sample_rate);
  put_u32(b, sample_rate * 2);
  put_u16(b, 2);
  put_u16(b, 16);
  put_tag(b, "data");
  put_u32(b, data_bytes);
  std::size_t n_clipped = 0;
  for (double x : samples) put_u16(b, static_cast<std::uint16_t>(to_pcm(x, n_clipped)));
  if (clipped) *clipped = n_clipped;
  return b;
}

WavData decode_wav(std::span<const unsigned char> bytes) {
  Reader r{bytes};
  if (!r.tag(0, "RIFF")) fail(0, "missing RIFF tag");
  if (!r.tag(8, "WAVE")) fail(8, "missing WAVE tag");
  WavData out;
  bool have_fmt = false;
  std::size_t at = 12;
  while (at + 8 <= bytes.size()) {
    const std::uint32_t size = r.u32(at + 4);
    const std::size_t body = at + 8;
    if (r.tag(at, "fmt ")) {
      if (size < 16) fail(at + 4, "fmt chunk too small");
      r.need(body, 16, "fmt chunk");
      if (r.u16(body) != 1) fail(body, "unsupported format tag " + std::to_string(r.u16(body)));
      if (r.u16(body + 2) != 1) fail(body + 2, "mono required");
      out.sample_rate = r.u32(body + 4);
      if (out.sample_rate == 0) fail(body + 4, "zero sample rate");
      if (r.u16(body + 14) != 16) fail(body + 14, "16-bit PCM required");
      have_fmt = true;
    } else if (r.tag(at, "data")) {
      if (!have_fmt) fail(at, "data chunk before fmt chunk");
      if (size % 2) fail(at + 4, "odd data size");
      r.need(body, size, "data chunk");
      out.samples.resize(size / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i)
        out.samples[i] = static_cast<std::int16_t>(r.u16(body + 2 * i)) / 32768.0;
      return out;
    }
    at = body + size + (size & 1);
  }
  fail(at, have_fmt ? "missing data chunk" : "missing fmt chunk");
}

std::size_t write_wav(const std::filesystem::path& path, std::span<const double> samples, unsigned sample_rate) {
  std::size_t clipped = 0;
  const auto bytes = encode_wav(samples, sample_rate, &clipped);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw WavError("wav: cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw WavError("wav: write failed for " + path.string());
  if (clipped) std::cerr << "warning: " << path.string() << ": clipped " << clipped << " samples\n";
  return clipped;
}

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw WavError("wav: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const WavError& e) {
    throw WavError(path.string() + ": " + e.what());
  }
}

}  // namespace skim
