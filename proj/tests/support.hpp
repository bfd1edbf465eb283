// Shared helpers and independent reference implementations for the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "skim/layers.hpp"

namespace skim::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = false) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

/// Plain-loop LSTM over one sequence, gate order (i, f, g, o).
struct RefLstm {
  std::vector<std::vector<double>> y;
  std::vector<double> c, h;
};

inline RefLstm ref_lstm(const std::vector<std::vector<double>>& x, const LstmWeights& w, std::vector<double> c,
                        std::vector<double> h, bool reverse = false) {
  const std::size_t H = h.size(), I = x.empty() ? 0 : x[0].size();
  const auto wih = w.w_ih.data(), whh = w.w_hh.data(), b = w.bias.data();
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  RefLstm out;
  out.y.assign(x.size(), std::vector<double>(H));
  for (std::size_t s = 0; s < x.size(); ++s) {
    const std::size_t t = reverse ? x.size() - 1 - s : s;
    std::vector<double> z(4 * H);
    for (std::size_t r = 0; r < 4 * H; ++r) {
      double acc = b[r];
      for (std::size_t i = 0; i < I; ++i) acc += wih[r * I + i] * x[t][i];
      for (std::size_t j = 0; j < H; ++j) acc += whh[r * H + j] * h[j];
      z[r] = acc;
    }
    for (std::size_t j = 0; j < H; ++j) {
      const double ig = sig(z[j]), fg = sig(z[H + j]), gg = std::tanh(z[2 * H + j]), og = sig(z[3 * H + j]);
      c[j] = fg * c[j] + ig * gg;
      h[j] = og * std::tanh(c[j]);
    }
    out.y[t] = h;
  }
  out.c = std::move(c);
  out.h = std::move(h);
  return out;
}

inline std::vector<std::vector<double>> rows(const Tensor& t) {
  const std::size_t n = t.dim(t.rank() - 1);
  std::vector<std::vector<double>> out(t.size() / n);
  for (std::size_t r = 0; r < out.size(); ++r) out[r].assign(t.data().begin() + r * n, t.data().begin() + (r + 1) * n);
  return out;
}

/// Per-row layer norm with affine gain/bias.
inline std::vector<double> ref_layer_norm(std::span<const double> x, std::span<const double> gain,
                                          std::span<const double> bias) {
  double mean = 0.0, var = 0.0;
  for (double v : x) mean += v;
  mean /= double(x.size());
  for (double v : x) var += (v - mean) * (v - mean);
  var /= double(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = (x[i] - mean) / std::sqrt(var + kLayerNormEps) * gain[i % gain.size()] + bias[i % bias.size()];
  return out;
}

/// Scratch directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("skimcss_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace skim::test
