#include "skim/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "json_fields.hpp"

namespace skim {

namespace {

constexpr const char* kFormat = "skimcss-checkpoint-v1";

std::string nonlinearity_name(Nonlinearity n) { return n == Nonlinearity::relu ? "relu" : "none"; }

Nonlinearity parse_nonlinearity(const std::string& s) {
  if (s == "relu") return Nonlinearity::relu;
  if (s == "none") return Nonlinearity::none;
  throw Error("unknown nonlinearity '" + s + "' (expected relu or none)");
}

template <class Cfg>
Cfg validated(Cfg c, const std::string& path) {
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw Error("checkpoint: truncated header length");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

}  // namespace

void ModelSpec::validate() const {
  if (kind == Kind::skim)
    skim.validate();
  else
    dprnn.validate();
}

std::unique_ptr<SeparationModel> build_model(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.kind == ModelSpec::Kind::skim) return std::make_unique<SkimModel>(spec.skim, seed);
  return std::make_unique<DprnnModel>(spec.dprnn, seed);
}

Json to_json(const EncoderConfig& c) {
  return {{"kernel_size", c.kernel_size},
          {"stride", c.stride},
          {"feature_dim", c.feature_dim},
          {"nonlinearity", nonlinearity_name(c.nonlinearity)}};
}

Json to_json(const SkimConfig& c) {
  return {{"num_blocks", c.num_blocks},   {"hidden", c.hidden}, {"segment_len", c.segment_len},
          {"output_channels", c.output_channels}, {"causal", c.causal},    {"mem_mode", to_string(c.mem_mode)},
          {"encoder", to_json(c.encoder)}};
}

Json to_json(const DprnnConfig& c) {
  return {{"num_blocks", c.num_blocks},
          {"hidden", c.hidden},
          {"chunk_len", c.chunk_len},
          {"chunk_overlap", c.chunk_overlap},
          {"output_channels", c.output_channels},
          {"causal", c.causal},
          {"intra_bidirectional", c.intra_bidirectional},
          {"encoder", to_json(c.encoder)}};
}

Json to_json(const ModelSpec& spec) {
  Json j = spec.kind == ModelSpec::Kind::skim ? to_json(spec.skim) : to_json(spec.dprnn);
  j["type"] = spec.kind == ModelSpec::Kind::skim ? "skim" : "dprnn";
  return j;
}

EncoderConfig encoder_config_from_json(const Json& j, EncoderConfig c, const std::string& path) {
  detail::Fields f(j, path);
  f.get("kernel_size", c.kernel_size);
  f.get("stride", c.stride);
  f.get("feature_dim", c.feature_dim);
  f.get_parsed("nonlinearity", c.nonlinearity, parse_nonlinearity);
  f.finish();
  return validated(c, path);
}

SkimConfig skim_config_from_json(const Json& j, SkimConfig c, const std::string& path) {
  detail::Fields f(j, path);
  f.get("num_blocks", c.num_blocks);
  f.get("hidden", c.hidden);
  f.get("segment_len", c.segment_len);
  f.get("output_channels", c.output_channels);
  f.get("causal", c.causal);
  f.get_parsed("mem_mode", c.mem_mode, parse_mem_mode);
  if (const Json* e = f.child("encoder")) c.encoder = encoder_config_from_json(*e, c.encoder, f.path("encoder"));
  f.finish();
  return validated(c, path);
}

DprnnConfig dprnn_config_from_json(const Json& j, DprnnConfig c, const std::string& path) {
  detail::Fields f(j, path);
  f.get("num_blocks", c.num_blocks);
  f.get("hidden", c.hidden);
  f.get("chunk_len", c.chunk_len);
  f.get("chunk_overlap", c.chunk_overlap);
  f.get("output_channels", c.output_channels);
  f.get("causal", c.causal);
  f.get("intra_bidirectional", c.intra_bidirectional);
  if (const Json* e = f.child("encoder")) c.encoder = encoder_config_from_json(*e, c.encoder, f.path("encoder"));
  f.finish();
  return validated(c, path);
}

ModelSpec model_spec_from_json(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  ModelSpec spec;
  Json body = j;
  if (body.contains("type")) {
    if (!body["type"].is_string()) throw ConfigError(path + ".type: expected a string");
    const std::string t = body["type"];
    if (t == "skim")
      spec.kind = ModelSpec::Kind::skim;
    else if (t == "dprnn")
      spec.kind = ModelSpec::Kind::dprnn;
    else
      throw ConfigError(path + ".type: unknown model type '" + t + "' (expected skim or dprnn)");
    body.erase("type");
  }
  if (spec.kind == ModelSpec::Kind::skim)
    spec.skim = skim_config_from_json(body, {}, path);
  else
    spec.dprnn = dprnn_config_from_json(body, {}, path);
  return spec;
}

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const ParamList& tensors,
                     const Json& extra) {
  Json dir = Json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    dir.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", offset}});
    offset += serialized_size(t.tensor);
  }
  const std::string header =
      Json{{"format", kFormat}, {"model", to_json(spec)}, {"tensors", dir}, {"extra", extra}}.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("checkpoint: cannot write " + tmp.string());
    put_u64(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& t : tensors) write_tensor(out, t.tensor);
    if (!out) throw Error("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  const std::uint64_t len = get_u64(in);
  if (len > (std::uint64_t(1) << 32)) throw Error("checkpoint: implausible header length in " + path.string());
  std::string header(len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(len))) throw Error("checkpoint: truncated header");
  Json j;
  try {
    j = Json::parse(header);
  } catch (const Json::exception& e) {
    throw Error("checkpoint: " + path.string() + ": bad header: " + e.what());
  }
  if (j.value("format", "") != kFormat) throw Error("checkpoint: " + path.string() + ": unknown format");
  Checkpoint ck;
  ck.spec = model_spec_from_json(j.at("model"));
  ck.extra = j.value("extra", Json::object());
  std::uint64_t offset = 0;
  for (const auto& e : j.at("tensors")) {
    if (e.at("offset").get<std::uint64_t>() != offset)
      throw Error("checkpoint: tensor directory offset mismatch at '" + e.at("name").get<std::string>() + "'");
    Tensor t = read_tensor(in);
    if (t.shape() != e.at("shape").get<Shape>())
      throw Error("checkpoint: shape mismatch for '" + e.at("name").get<std::string>() + "'");
    offset += serialized_size(t);
    ck.tensors.push_back({e.at("name").get<std::string>(), t});
  }
  return ck;
}

void assign_parameters(const SeparationModel& model, const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t.tensor;
  for (const auto& p : model.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw Error("checkpoint: missing parameter '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape())
      throw Error("checkpoint: parameter '" + p.name + "' has shape " + to_string(it->second->shape()) +
                  ", model expects " + to_string(p.tensor.shape()));
    auto src = it->second->data();
    Tensor dst = p.tensor;
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

std::unique_ptr<SeparationModel> load_model(const std::filesystem::path& path, ModelSpec* spec) {
  const Checkpoint ck = load_checkpoint(path);
  auto model = build_model(ck.spec, 0);
  assign_parameters(*model, ck);
  if (spec) *spec = ck.spec;
  return model;
}

}  // namespace skim
