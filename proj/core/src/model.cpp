#include "skim/model.hpp"

#include <cmath>

namespace skim {

SeparatorHead SeparatorHead::init(const EncoderConfig& encoder, std::size_t output_channels, Rng& rng) {
  encoder.validate();
  if (output_channels < 2) throw Error("model: output_channels must be >= 2");
  const std::size_t n = encoder.feature_dim, k = encoder.kernel_size;
  SeparatorHead h;
  h.encoder = encoder;
  h.output_channels = output_channels;
  std::uniform_real_distribution<double> enc(-1.0 / std::sqrt(double(k)), 1.0 / std::sqrt(double(k)));
  std::vector<double> w(n * k);
  for (double& v : w) v = enc(rng);
  h.encoder_weight = Tensor({n, k}, std::move(w), true);
  h.head = LinearParams::init(n, output_channels * n, rng);
  std::uniform_real_distribution<double> dec(-1.0 / std::sqrt(double(n)), 1.0 / std::sqrt(double(n)));
  std::vector<double> d(n * k);
  for (double& v : d) v = dec(rng);
  h.decoder_weight = Tensor({n, k}, std::move(d), true);
  return h;
}

void SeparatorHead::collect(ParamList& out) const {
  out.push_back({"encoder.weight", encoder_weight});
  head.collect("head", out);
  out.push_back({"decoder.weight", decoder_weight});
}

Tensor SeparatorHead::encode(const Tensor& mixture) const {
  return conv1d_encode(mixture, encoder, encoder_weight);
}

std::vector<Tensor> SeparatorHead::decode(const Tensor& features, std::size_t length) const {
  const std::size_t n = encoder.feature_dim;
  Tensor all = linear(features, head);
  std::vector<Tensor> out;
  out.reserve(output_channels);
  for (std::size_t q = 0; q < output_channels; ++q)
    out.push_back(conv1d_decode(slice(all, 1, q * n, (q + 1) * n), encoder, decoder_weight, length));
  return out;
}

std::size_t SeparatorHead::param_count() const {
  ParamList p;
  collect(p);
  return count_scalars(p);
}

std::vector<Tensor> SeparationModel::separate(const Tensor& mixture) const {
  if (mixture.rank() != 1) throw ShapeError("separate: expected a 1-D mixture, got " + to_string(mixture.shape()));
  if (mixture.size() < encoder().kernel_size)
    throw ShapeError("separate: input shorter than one frame (" + std::to_string(mixture.size()) +
                     " < " + std::to_string(encoder().kernel_size) + " samples)");
  return head_.decode(forward_features(head_.encode(mixture)), mixture.size());
}

}  // namespace skim
