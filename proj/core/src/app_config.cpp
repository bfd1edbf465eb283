#include "skim/app_config.hpp"

#include <fstream>

#include "json_fields.hpp"

namespace skim {

namespace {

template <class T>
void get_range(detail::Fields& f, const char* key, Range<T>& r) {
  std::vector<T> v{r.lo, r.hi};
  f.get(key, v);
  if (v.size() != 2) throw ConfigError(f.path(key) + ": expected [lo, hi]");
  r = {v[0], v[1]};
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

}  // namespace

Json to_json(const SimConfig& c) {
  return {{"sample_rate", c.sample_rate},
          {"session_seconds", c.session_seconds},
          {"num_speakers", {c.num_speakers.lo, c.num_speakers.hi}},
          {"overlap_ratio", {c.overlap_ratio.lo, c.overlap_ratio.hi}},
          {"utterance_seconds", {c.utterance_seconds.lo, c.utterance_seconds.hi}},
          {"source_kind", to_string(c.source_kind)},
          {"noise_snr_db", {c.noise_snr_db.lo, c.noise_snr_db.hi}},
          {"max_concurrent", c.max_concurrent},
          {"reverb", c.reverb},
          {"max_retries", c.max_retries}};
}

Json to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"decay", c.decay},
          {"clip_norm", c.clip_norm},
          {"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"clip_seconds", c.clip_seconds},
          {"batch_size", c.batch_size},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"snr_max_db", c.tsdr.snr_max_db},
          {"tsdr_eps", c.tsdr.eps}};
}

Json to_json(const AppConfig& c) {
  Json train = to_json(c.train.train);
  train["max_seconds"] = c.train.max_seconds;
  return {{"seed", c.seed},
          {"model", to_json(c.model)},
          {"sim", to_json(c.sim)},
          {"data", {{"train_sessions", c.data.train_sessions}, {"test_sessions", c.data.test_sessions}}},
          {"train", train},
          {"eval", {{"window_seconds", c.eval.window_seconds}, {"overlap_threshold", c.eval.overlap_threshold}}},
          {"bench",
           {{"mode", to_string(c.bench.options.mode)},
            {"audio_seconds", c.bench.options.audio_seconds},
            {"sample_rate", c.bench.options.sample_rate},
            {"runs", c.bench.options.runs},
            {"warmup", c.bench.options.warmup},
            {"rtf_budget", c.bench.rtf_budget}}},
          {"profile", {{"sample_rate", c.profile_sample_rate}}},
          {"separate", {{"stream_chunk", c.stream_chunk}}}};
}

SimConfig sim_config_from_json(const Json& j, SimConfig c, const std::string& path) {
  detail::Fields f(j, path);
  f.get("sample_rate", c.sample_rate);
  f.get("session_seconds", c.session_seconds);
  get_range(f, "num_speakers", c.num_speakers);
  get_range(f, "overlap_ratio", c.overlap_ratio);
  get_range(f, "utterance_seconds", c.utterance_seconds);
  f.get_parsed("source_kind", c.source_kind, parse_source_kind);
  get_range(f, "noise_snr_db", c.noise_snr_db);
  f.get("max_concurrent", c.max_concurrent);
  f.get("reverb", c.reverb);
  f.get("max_retries", c.max_retries);
  f.finish();
  return validated(c, path);
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c, const std::string& path) {
  detail::Fields f(j, path);
  f.get("lr0", c.lr0);
  f.get("decay", c.decay);
  f.get("clip_norm", c.clip_norm);
  f.get("epochs", c.epochs);
  f.get("steps_per_epoch", c.steps_per_epoch);
  f.get("clip_seconds", c.clip_seconds);
  f.get("batch_size", c.batch_size);
  f.get("beta1", c.beta1);
  f.get("beta2", c.beta2);
  f.get("adam_eps", c.adam_eps);
  f.get("snr_max_db", c.tsdr.snr_max_db);
  f.get("tsdr_eps", c.tsdr.eps);
  f.finish();
  return validated(c, path);
}

AppConfig app_config_from_json(const Json& j) {
  AppConfig c;
  detail::Fields f(j, "config");
  f.get("seed", c.seed);
  if (const Json* m = f.child("model")) c.model = model_spec_from_json(*m, "model");
  if (const Json* s = f.child("sim")) c.sim = sim_config_from_json(*s, c.sim, "sim");
  if (const Json* d = f.child("data")) {
    detail::Fields g(*d, "data");
    g.get("train_sessions", c.data.train_sessions);
    g.get("test_sessions", c.data.test_sessions);
    g.finish();
    if (c.data.train_sessions < 1 || c.data.test_sessions < 1) throw ConfigError("data: session counts must be >= 1");
  }
  if (const Json* t = f.child("train")) {
    Json body = *t;
    if (body.contains("max_seconds")) {
      if (!body["max_seconds"].is_number()) throw ConfigError("train.max_seconds: expected a number");
      c.train.max_seconds = body["max_seconds"].get<double>();
      if (c.train.max_seconds < 0.0) throw ConfigError("train.max_seconds: must be >= 0");
      body.erase("max_seconds");
    }
    c.train.train = train_config_from_json(body, c.train.train, "train");
  }
  if (const Json* e = f.child("eval")) {
    detail::Fields g(*e, "eval");
    g.get("window_seconds", c.eval.window_seconds);
    g.get("overlap_threshold", c.eval.overlap_threshold);
    g.finish();
    if (!(c.eval.window_seconds > 0.0)) throw ConfigError("eval.window_seconds: must be positive");
    if (!(c.eval.overlap_threshold >= 0.0 && c.eval.overlap_threshold < 1.0))
      throw ConfigError("eval.overlap_threshold: must lie in [0, 1)");
  }
  if (const Json* b = f.child("bench")) {
    detail::Fields g(*b, "bench");
    auto& o = c.bench.options;
    g.get_parsed("mode", o.mode, parse_bench_mode);
    g.get("audio_seconds", o.audio_seconds);
    g.get("sample_rate", o.sample_rate);
    g.get("runs", o.runs);
    g.get("warmup", o.warmup);
    g.get("rtf_budget", c.bench.rtf_budget);
    g.finish();
    if (!(o.audio_seconds > 0.0) || o.sample_rate == 0 || o.runs < 1)
      throw ConfigError("bench: audio_seconds, sample_rate and runs must be positive");
  }
  if (const Json* p = f.child("profile")) {
    detail::Fields g(*p, "profile");
    g.get("sample_rate", c.profile_sample_rate);
    g.finish();
    if (c.profile_sample_rate == 0) throw ConfigError("profile.sample_rate: must be positive");
  }
  if (const Json* s = f.child("separate")) {
    detail::Fields g(*s, "separate");
    g.get("stream_chunk", c.stream_chunk);
    g.finish();
    if (c.stream_chunk < 1) throw ConfigError("separate.stream_chunk: must be >= 1");
  }
  f.finish();
  c.sim.seed = c.seed;
  c.train.train.seed = c.seed;
  c.bench.options.seed = c.seed;
  return c;
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::exception&) {
    value = text;
  }
  Json* node = &doc;
  std::size_t pos = 0;
  for (;;) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw ConfigError("override '" + assignment + "': empty key segment");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override '" + assignment + "': '" + part + "' is not inside an object");
      *node = Json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

AppConfig load_app_config(const std::string& file, const std::vector<std::string>& overrides) {
  Json doc = Json::object();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file);
    try {
      doc = Json::parse(in);
    } catch (const Json::exception& e) {
      throw ConfigError("config file " + file + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return app_config_from_json(doc);
}

}  // namespace skim
