// skimcss: simulate, train, separate, eval, profile, bench, ablate.

#include <Eigen/Core>
#include <cmath>
#include <fstream>
#include <iostream>
#include <iterator>

#include "CLI11.hpp"
#include "skim/evaluate.hpp"
#include "skim/streaming.hpp"
#include "skim/wav.hpp"

namespace fs = std::filesystem;
using namespace skim;

namespace {

constexpr std::uint64_t kTestSeedOffset = 1000003;

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool json = false;
};

void log(const std::string& msg) { std::cerr << msg << "\n"; }

AppConfig effective_config(const Common& c) {
  auto overrides = c.overrides;
  if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
  return load_app_config(c.config_file, overrides);
}

void echo_config(const AppConfig& cfg, const Common& c, const std::string& command) {
  Json doc = to_json(cfg);
  doc["command"] = command;
  if (c.out_dir.empty()) {
    log("effective config: " + doc.dump());
    return;
  }
  fs::create_directories(c.out_dir);
  std::ofstream(fs::path(c.out_dir) / "effective_config.json") << doc.dump(2) << "\n";
}

void emit(const Json& j, const std::string& text, bool json) { std::cout << (json ? j.dump(2) + "\n" : text); }

std::vector<MeetingSession> simulate_split(const AppConfig& cfg, std::size_t count, std::uint64_t seed) {
  SimConfig sim = cfg.sim;
  sim.seed = seed;
  return simulate_dataset(sim, count);
}

std::vector<MeetingSession> training_data(const AppConfig& cfg, const std::string& data_dir) {
  if (!data_dir.empty()) return read_dataset(data_dir);
  log("no --data given; simulating " + std::to_string(cfg.data.train_sessions) + " training sessions in memory");
  return simulate_split(cfg, cfg.data.train_sessions, cfg.seed);
}

std::vector<MeetingSession> test_data(const AppConfig& cfg, const std::string& data_dir) {
  if (!data_dir.empty()) return read_dataset(data_dir);
  log("no --data given; simulating " + std::to_string(cfg.data.test_sessions) + " test sessions in memory");
  return simulate_split(cfg, cfg.data.test_sessions, cfg.seed + kTestSeedOffset);
}

std::unique_ptr<SeparationModel> model_from(const AppConfig& cfg, const std::string& checkpoint, ModelSpec& spec) {
  if (!checkpoint.empty()) return load_model(checkpoint, &spec);
  spec = cfg.model;
  return build_model(spec, cfg.seed);
}

WavData read_input(const std::string& input) {
  if (input != "-") return read_wav(input);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(std::cin)), std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

int cmd_simulate(const Common& c, std::size_t sessions) {
  const AppConfig cfg = effective_config(c);
  if (c.out_dir.empty()) throw ConfigError("simulate: --out is required");
  echo_config(cfg, c, "simulate");
  const std::size_t n = sessions ? sessions : cfg.data.train_sessions;
  const auto data = simulate_split(cfg, n, cfg.seed);
  write_dataset(data, c.out_dir);
  double ratio = 0.0;
  for (const auto& s : data) ratio += s.overlap_ratio;
  const Json j = {{"sessions", n}, {"out", c.out_dir}, {"mean_overlap_ratio", ratio / double(n)}};
  emit(j, "wrote " + std::to_string(n) + " sessions to " + c.out_dir + "\n", c.json);
  return 0;
}

int cmd_train(const Common& c, const std::string& data_dir, bool resume) {
  const AppConfig cfg = effective_config(c);
  if (c.out_dir.empty()) throw ConfigError("train: --out is required");
  echo_config(cfg, c, "train");
  const auto data = training_data(cfg, data_dir);
  auto model = build_model(cfg.model, cfg.seed);
  TrainOptions opts;
  opts.out_dir = c.out_dir;
  opts.resume = resume;
  if (cfg.train.max_seconds > 0.0) opts.max_seconds = cfg.train.max_seconds;
  opts.on_step = [](const StepMetrics& m) {
    if (m.step % 50 == 0)
      log("epoch " + std::to_string(m.epoch) + " step " + std::to_string(m.step) + " loss " + std::to_string(m.loss));
  };
  const auto r = train(*model, cfg.model, data, cfg.train.train, opts);
  const Json j = {{"epochs", r.epochs_completed},
                  {"steps", r.steps},
                  {"best_loss", r.best_loss},
                  {"last_checkpoint", r.last_checkpoint.string()}};
  emit(j, "trained " + std::to_string(r.steps) + " steps; checkpoint " + r.last_checkpoint.string() + "\n", c.json);
  return 0;
}

int cmd_separate(const Common& c, const std::string& checkpoint, const std::string& input, bool stream) {
  const AppConfig cfg = effective_config(c);
  if (c.out_dir.empty()) throw ConfigError("separate: --out is required");
  if (checkpoint.empty()) throw ConfigError("separate: --checkpoint is required");
  echo_config(cfg, c, "separate");
  ModelSpec spec;
  auto model = load_model(checkpoint, &spec);
  const WavData in = read_input(input);
  std::vector<std::vector<double>> out;
  if (stream) {
    const auto* skim_model = dynamic_cast<const SkimModel*>(model.get());
    if (!skim_model || !skim_model->causal()) throw Error("streaming requires causal model");
    auto engine = std::make_shared<const StreamingEngine<float>>(*skim_model);
    const std::vector<float> x(in.samples.begin(), in.samples.end());
    for (const auto& ch : stream_separate<float>(engine, x, cfg.stream_chunk)) out.emplace_back(ch.begin(), ch.end());
  } else {
    out = separate_waveform(*model, in.samples);
  }
  Json files = Json::array();
  for (std::size_t q = 0; q < out.size(); ++q) {
    const auto path = fs::path(c.out_dir) / ("ch" + std::to_string(q) + ".wav");
    write_wav(path, out[q], in.sample_rate);
    files.push_back(path.string());
  }
  emit({{"mode", stream ? "streaming" : "offline"}, {"outputs", files}},
       "wrote " + std::to_string(out.size()) + " channels to " + c.out_dir + "\n", c.json);
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& data_dir, bool identity) {
  const AppConfig cfg = effective_config(c);
  echo_config(cfg, c, "eval");
  const auto data = test_data(cfg, data_dir);
  EvalSummary summary;
  if (identity) {
    std::vector<std::vector<std::vector<double>>> est;
    for (const auto& s : data) est.emplace_back(cfg.model.output_channels(), s.mixture);
    summary = evaluate_estimates(est, data, cfg.eval);
  } else {
    ModelSpec spec;
    auto model = model_from(cfg, checkpoint, spec);
    summary = evaluate(*model, data, cfg.eval);
  }
  // SDRi metrics are always reported as JSON.
  std::cout << summary.to_json().dump(2) << "\n";
  return 0;
}

int cmd_profile(const Common& c, const std::string& checkpoint) {
  const AppConfig cfg = effective_config(c);
  echo_config(cfg, c, "profile");
  ModelSpec spec = cfg.model;
  if (!checkpoint.empty()) spec = load_checkpoint(checkpoint).spec;
  const CostReport r = count_macs(spec, cfg.profile_sample_rate);
  emit(r.to_json(), r.to_table(), c.json);
  return 0;
}

int cmd_bench(const Common& c, const std::string& checkpoint) {
  const AppConfig cfg = effective_config(c);
  echo_config(cfg, c, "bench");
  Eigen::setNbThreads(1);
  ModelSpec spec;
  auto model = model_from(cfg, checkpoint, spec);
  const LatencyReport r = bench_rtf(*model, cfg.bench.options);
  emit(r.to_json(), r.to_table(), c.json);
  if (r.rtf >= cfg.bench.rtf_budget) {
    log("bench: RTF " + std::to_string(r.rtf) + " violates budget " + std::to_string(cfg.bench.rtf_budget));
    return 1;
  }
  return 0;
}

int cmd_ablate(const Common& c, const std::string& data_dir, const std::string& test_dir) {
  const AppConfig cfg = effective_config(c);
  echo_config(cfg, c, "ablate");
  const auto train_set = training_data(cfg, data_dir);
  const auto test_set = test_data(cfg, test_dir);
  const auto rows = run_ablation(cfg, train_set, test_set, log);
  const Json j = ablation_json(rows);
  if (!c.out_dir.empty()) std::ofstream(fs::path(c.out_dir) / "ablation.json") << j.dump(2) << "\n";
  emit(j, ablation_table(rows), c.json);
  for (const auto& r : rows)
    if (!r.finite) return 1;
  return 0;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_file, "JSON config file");
  app->add_option("--set", c.overrides, "Override a config key: dotted.key=value (repeatable)");
  app->add_option("--out", c.out_dir, "Output directory");
  app->add_option("--seed", c.seed, "Top-level seed (same as --set seed=N)");
  app->add_flag("--json", c.json, "Machine-readable JSON on stdout");
}

}  // namespace

int main(int argc, char** argv) {
  Eigen::setNbThreads(1);
  CLI::App app{"skimcss: continuous speech separation with skipping-memory LSTMs"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint, data_dir, test_dir, input = "-";
  std::size_t sessions = 0;
  bool stream = false, resume = false, identity = false;

  auto* sim = app.add_subcommand("simulate", "Write a synthetic meeting dataset");
  add_common(sim, common);
  sim->add_option("--sessions", sessions, "Number of sessions (default: data.train_sessions)");

  auto* tr = app.add_subcommand("train", "Train a separator with the Graph-PIT loss");
  add_common(tr, common);
  tr->add_option("--data", data_dir, "Dataset directory (default: simulate in memory)");
  tr->add_flag("--resume", resume, "Resume from the newest epoch checkpoint in --out");

  auto* sep = app.add_subcommand("separate", "Separate a mixture WAV into Q channels");
  add_common(sep, common);
  sep->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  sep->add_option("--input", input, "Mixture WAV, or - for stdin");
  sep->add_flag("--stream", stream, "Frame-by-frame streaming inference (causal SkiM only)");

  auto* ev = app.add_subcommand("eval", "Report SDRi and SDRi50 as JSON");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint, "Model checkpoint (default: freshly initialized model)");
  ev->add_option("--data", data_dir, "Dataset directory (default: simulate the test split in memory)");
  ev->add_flag("--identity", identity, "Score the unprocessed mixture on every channel");

  auto* prof = app.add_subcommand("profile", "Analytic parameter and MAC counts");
  add_common(prof, common);
  prof->add_option("--checkpoint", checkpoint, "Take the model configuration from a checkpoint");

  auto* bench = app.add_subcommand("bench", "Single-threaded RTF and latency benchmark");
  add_common(bench, common);
  bench->add_option("--checkpoint", checkpoint, "Model checkpoint (default: freshly initialized model)");

  auto* abl = app.add_subcommand("ablate", "Train and score all five Mem-LSTM modes");
  add_common(abl, common);
  abl->add_option("--data", data_dir, "Training dataset directory");
  abl->add_option("--test-data", test_dir, "Test dataset directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim) return cmd_simulate(common, sessions);
    if (*tr) return cmd_train(common, data_dir, resume);
    if (*sep) return cmd_separate(common, checkpoint, input, stream);
    if (*ev) return cmd_eval(common, checkpoint, data_dir, identity);
    if (*prof) return cmd_profile(common, checkpoint);
    if (*bench) return cmd_bench(common, checkpoint);
    if (*abl) return cmd_ablate(common, data_dir, test_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
