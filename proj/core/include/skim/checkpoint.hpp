#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "skim/dprnn.hpp"
#include "skim/separator.hpp"

namespace skim {

using Json = nlohmann::json;

/// Raised for invalid or unknown configuration keys and values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct ModelSpec {
  enum class Kind { skim, dprnn };
  Kind kind = Kind::skim;
  SkimConfig skim;
  DprnnConfig dprnn;

  void validate() const;
  bool causal() const { return kind == Kind::skim ? skim.causal : dprnn.causal; }
  const EncoderConfig& encoder() const { return kind == Kind::skim ? skim.encoder : dprnn.encoder; }
  std::size_t output_channels() const { return kind == Kind::skim ? skim.output_channels : dprnn.output_channels; }
};

std::unique_ptr<SeparationModel> build_model(const ModelSpec& spec, std::uint64_t seed);

Json to_json(const EncoderConfig& c);
Json to_json(const SkimConfig& c);
Json to_json(const DprnnConfig& c);
Json to_json(const ModelSpec& spec);

/// Strict readers: start from `base`, override present keys, reject unknown
/// keys and ill-typed values with ConfigError naming the dotted path.
EncoderConfig encoder_config_from_json(const Json& j, EncoderConfig base = {}, const std::string& path = "encoder");
SkimConfig skim_config_from_json(const Json& j, SkimConfig base = {}, const std::string& path = "model");
DprnnConfig dprnn_config_from_json(const Json& j, DprnnConfig base = {}, const std::string& path = "model");
/// {"type": "skim" | "dprnn", ...fields of that config}
ModelSpec model_spec_from_json(const Json& j, const std::string& path = "model");

struct Checkpoint {
  ModelSpec spec;
  ParamList tensors;  // model parameters followed by any extra blobs
  Json extra = Json::object();
};

/// u64 LE header length, JSON header {format, model, tensors: [{name, shape,
/// offset}], extra}, then the tensors in serialized order. Written through a
/// temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const ParamList& tensors,
                     const Json& extra = Json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into the model's parameters; names and shapes
/// must match exactly.
void assign_parameters(const SeparationModel& model, const Checkpoint& ckpt);
/// build_model + assign_parameters.
std::unique_ptr<SeparationModel> load_model(const std::filesystem::path& path, ModelSpec* spec = nullptr);

}  // namespace skim
