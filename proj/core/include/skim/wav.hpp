#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "skim/tensor.hpp"

namespace skim {

class WavError : public Error {
 public:
  using Error::Error;
};

struct WavData {
  std::vector<double> samples;
  unsigned sample_rate = 0;
};

/// Value a sample takes after 16-bit quantization: round(x * 32768) / 32768,
/// clipped to [-1, 1 - 2^-15].
double quantize16(double x);

/// Writes 16-bit PCM mono. Returns the number of clipped samples (a warning
/// is logged to stderr when nonzero).
std::size_t write_wav(const std::filesystem::path& path, std::span<const double> samples, unsigned sample_rate);
WavData read_wav(const std::filesystem::path& path);

std::vector<unsigned char> encode_wav(std::span<const double> samples, unsigned sample_rate,
                                      std::size_t* clipped = nullptr);
WavData decode_wav(std::span<const unsigned char> bytes);

}  // namespace skim
