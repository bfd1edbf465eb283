#include "skim/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <regex>
#include <sstream>

namespace skim {

namespace {

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

std::mt19937_64 rng_from_string(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream s(text);
  s >> rng;
  if (!s) throw Error("checkpoint: corrupt rng state");
  return rng;
}

void save_training(const std::filesystem::path& path, const ModelSpec& spec, const ParamList& params,
                   const TrainerState& st, const TrainConfig& cfg) {
  ParamList tensors = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back({"adam.m." + params[i].name, Tensor(params[i].tensor.shape(), st.adam.m[i])});
    tensors.push_back({"adam.v." + params[i].name, Tensor(params[i].tensor.shape(), st.adam.v[i])});
  }
  Json extra = {{"train_state",
                 {{"epoch", st.epoch},
                  {"step", st.step},
                  {"adam_t", st.adam.t},
                  {"best_loss", std::isfinite(st.best_loss) ? Json(st.best_loss) : Json(nullptr)},
                  {"rng", rng_to_string(st.rng)},
                  {"seed", cfg.seed}}}};
  save_checkpoint(path, spec, tensors, extra);
}

TrainerState restore_training(const Checkpoint& ck, const SeparationModel& model) {
  assign_parameters(model, ck);
  if (!ck.extra.contains("train_state")) throw Error("checkpoint: no training state to resume from");
  const Json& ts = ck.extra.at("train_state");
  TrainerState st;
  st.epoch = ts.at("epoch").get<std::size_t>();
  st.step = ts.at("step").get<std::size_t>();
  st.adam.t = ts.at("adam_t").get<std::uint64_t>();
  st.best_loss = ts.at("best_loss").is_null() ? std::numeric_limits<double>::infinity()
                                              : ts.at("best_loss").get<double>();
  st.rng = rng_from_string(ts.at("rng").get<std::string>());
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : ck.tensors) by_name[t.name] = &t.tensor;
  for (const auto& p : model.parameters()) {
    auto m = by_name.find("adam.m." + p.name), v = by_name.find("adam.v." + p.name);
    if (m == by_name.end() || v == by_name.end()) throw Error("checkpoint: missing optimizer state for " + p.name);
    st.adam.m.emplace_back(m->second->data().begin(), m->second->data().end());
    st.adam.v.emplace_back(v->second->data().begin(), v->second->data().end());
  }
  return st;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw Error("train: lr0 must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw Error("train: decay must lie in (0, 1]");
  if (!(clip_norm > 0.0)) throw Error("train: clip_norm must be positive");
  if (epochs < 1) throw Error("train: epochs must be >= 1");
  if (!(clip_seconds > 0.0)) throw Error("train: clip_seconds must be positive");
  if (batch_size < 1) throw Error("train: batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw Error("train: betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw Error("train: adam_eps must be positive");
  tsdr.validate();
}

double lr_at(const TrainConfig& cfg, long epoch) {
  if (epoch < 0) throw Error("lr_at: negative epoch " + std::to_string(epoch));
  return cfg.lr0 * std::pow(cfg.decay, double(epoch));
}

double global_l2_norm(std::span<const std::vector<double>> grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (double v : g) s += v * v;
  return std::sqrt(s);
}

double clip_grad_l2(std::span<std::vector<double>> grads, double clip_norm) {
  const double g = global_l2_norm(grads);
  if (g > clip_norm) {
    const double scale = clip_norm / g;
    for (auto& v : grads)
      for (double& x : v) x *= scale;
  }
  return g;
}

double clip_grad_l2(const ParamList& params, double clip_norm) {
  double s = 0.0;
  for (const auto& p : params)
    if (p.tensor.has_grad())
      for (double v : p.tensor.grad()) s += v * v;
  const double g = std::sqrt(s);
  if (g > clip_norm) {
    const double scale = clip_norm / g;
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      Tensor t = p.tensor;
      for (double& x : t.mutable_grad()) x *= scale;
    }
  }
  return g;
}

AdamState AdamState::zeros(const ParamList& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.size(), 0.0);
    s.v.emplace_back(p.tensor.size(), 0.0);
  }
  return s;
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::uint64_t t, double lr, const TrainConfig& cfg) {
  if (t < 1) throw Error("adam: step count must be >= 1");
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    throw ShapeError("adam: buffer sizes differ");
  const double c1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
  }
}

void adam_step(const ParamList& params, AdamState& state, double lr, const TrainConfig& cfg) {
  if (state.m.size() != params.size()) throw Error("adam: optimizer state does not match parameters");
  ++state.t;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    const auto g = p.grad();
    adam_update(p.mutable_data(), g, state.m[i], state.v[i], state.t, lr, cfg);
  }
}

MeetingSession random_clip(const MeetingSession& session, double clip_seconds, std::mt19937_64& rng) {
  const std::size_t total = session.mixture.size();
  const auto window = std::size_t(std::llround(clip_seconds * session.sample_rate));
  if (window >= total) return session;
  const std::size_t begin = std::uniform_int_distribution<std::size_t>(0, total - window)(rng);
  const std::size_t end = begin + window;
  MeetingSession out;
  out.sample_rate = session.sample_rate;
  out.mixture.assign(session.mixture.begin() + begin, session.mixture.begin() + end);
  if (!session.noise.empty()) out.noise.assign(session.noise.begin() + begin, session.noise.begin() + end);
  for (const auto& u : session.utterances) {
    const std::size_t a = std::max(u.start, begin), b = std::min(u.end(), end);
    if (a >= b) continue;
    Utterance c;
    c.speaker_id = u.speaker_id;
    c.start = a - begin;
    c.source.assign(u.source.begin() + (a - u.start), u.source.begin() + (b - u.start));
    out.utterances.push_back(std::move(c));
  }
  out.overlap_ratio = overlap_ratio(out.utterances, window);
  return out;
}

Tensor batch_loss(const SeparationModel& model, std::span<const MeetingSession> sessions, const TrainConfig& cfg) {
  if (sessions.empty()) throw Error("batch_loss: empty batch");
  LossOptions opts;
  opts.tsdr = cfg.tsdr;
  Tensor total;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto& s = sessions[i];
    const auto est = model.separate(Tensor(Shape{s.mixture.size()}, s.mixture));
    Tensor l = graph_pit_loss(est, s.utterances, opts).loss;
    total = i == 0 ? l : add(total, l);
  }
  return mul_scalar(total, 1.0 / double(sessions.size()));
}

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch);
  return dir / name;
}

std::filesystem::path latest_checkpoint(const std::filesystem::path& dir) {
  const std::regex pattern(R"(epoch_(\d+)\.ckpt)");
  std::filesystem::path best;
  long best_epoch = -1;
  if (std::filesystem::is_directory(dir))
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      std::smatch m;
      const std::string name = e.path().filename().string();
      if (std::regex_match(name, m, pattern) && std::stol(m[1]) > best_epoch) {
        best_epoch = std::stol(m[1]);
        best = e.path();
      }
    }
  if (best.empty()) throw Error("train: no epoch checkpoint in " + dir.string());
  return best;
}

TrainResult train(SeparationModel& model, const ModelSpec& spec, std::span<const MeetingSession> dataset,
                  const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (dataset.empty()) throw Error("train: empty dataset");
  const ParamList params = model.parameters();
  const bool on_disk = !options.out_dir.empty();
  if (on_disk) std::filesystem::create_directories(options.out_dir);

  TrainerState st;
  TrainResult result;
  if (options.resume) {
    if (!on_disk) throw Error("train: resume needs an output directory");
    result.last_checkpoint = latest_checkpoint(options.out_dir);
    st = restore_training(load_checkpoint(result.last_checkpoint), model);
  } else {
    st.rng.seed(cfg.seed);
    st.adam = AdamState::zeros(params);
  }

  std::ofstream metrics;
  if (on_disk) metrics.open(options.out_dir / "metrics.jsonl", options.resume ? std::ios::app : std::ios::trunc);

  const std::size_t steps_per_epoch =
      cfg.steps_per_epoch ? cfg.steps_per_epoch : (dataset.size() + cfg.batch_size - 1) / cfg.batch_size;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  std::vector<std::size_t> order(dataset.size());
  for (; st.epoch < cfg.epochs; ) {
    const double lr = lr_at(cfg, long(st.epoch));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), st.rng);
    double epoch_loss = 0.0;
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<MeetingSession> batch;
      for (std::size_t b = 0; b < cfg.batch_size; ++b, ++cursor)
        batch.push_back(random_clip(dataset[order[cursor % order.size()]], cfg.clip_seconds, st.rng));
      for (const auto& p : params) Tensor(p.tensor).zero_grad();
      Tensor loss;
      try {
        loss = batch_loss(model, batch, cfg);
      } catch (const NumericFault& e) {
        throw Error(std::string("train: non-finite value at step ") + std::to_string(st.step) + " (" + e.what() +
                    "); last good checkpoint: " +
                    (result.last_checkpoint.empty() ? "none" : result.last_checkpoint.string()));
      }
      const double value = loss.item();
      if (!std::isfinite(value))
        throw Error("train: non-finite loss at step " + std::to_string(st.step) + "; last good checkpoint: " +
                    (result.last_checkpoint.empty() ? "none" : result.last_checkpoint.string()));
      loss.backward();
      const double gnorm = clip_grad_l2(params, cfg.clip_norm);
      adam_step(params, st.adam, lr, cfg);

      StepMetrics m{st.epoch, st.step, value, gnorm, lr, elapsed()};
      ++st.step;
      epoch_loss += value;
      if (metrics.is_open())
        metrics << Json{{"epoch", m.epoch}, {"step", m.step}, {"loss", m.loss}, {"grad_norm", m.grad_norm},
                        {"lr", m.lr}, {"wall_time", m.wall_time}}.dump()
                << "\n";
      if (options.on_step) options.on_step(m);
    }
    metrics.flush();
    epoch_loss /= double(steps_per_epoch);
    result.epoch_losses.push_back(epoch_loss);
    ++st.epoch;
    ++result.epochs_completed;
    const bool improved = epoch_loss < st.best_loss;
    if (improved) st.best_loss = epoch_loss;
    if (on_disk) {
      result.last_checkpoint = epoch_checkpoint_path(options.out_dir, st.epoch);
      save_training(result.last_checkpoint, spec, params, st, cfg);
      if (improved) save_training(options.out_dir / "best.ckpt", spec, params, st, cfg);
    }
    if (elapsed() > options.max_seconds) break;
  }
  result.steps = st.step;
  result.best_loss = st.best_loss;
  return result;
}

}  // namespace skim
