#include "skim/evaluate.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace skim {

std::vector<std::vector<double>> separate_waveform(const SeparationModel& model, std::span<const double> mixture) {
  NoGradGuard no_grad;
  const auto est = model.separate(Tensor(Shape{mixture.size()}, std::vector<double>(mixture.begin(), mixture.end())));
  std::vector<std::vector<double>> out;
  for (const auto& t : est) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

Json EvalSummary::to_json() const {
  Json per = Json::array();
  for (const auto& s : sessions)
    per.push_back({{"sdri", s.sdri}, {"sdri50", s.sdri50 ? Json(*s.sdri50) : Json(Sdri50Result::kNoOverlapWindows)}});
  return {{"sdri", sdri}, {"sdri50", sdri50 ? Json(*sdri50) : Json(Sdri50Result::kNoOverlapWindows)},
          {"sessions", sessions.size()}, {"per_session", per}};
}

EvalSummary evaluate_estimates(std::span<const std::vector<std::vector<double>>> estimates,
                               std::span<const MeetingSession> sessions, const EvalConfig& cfg) {
  if (estimates.size() != sessions.size()) throw Error("evaluate: estimate and session counts differ");
  if (sessions.empty()) throw Error("evaluate: no sessions");
  EvalSummary out;
  double total50 = 0.0;
  std::size_t n50 = 0;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto& s = sessions[i];
    SessionScore score;
    score.sdri = sdr_improvement(estimates[i], s.utterances, s.mixture).sdri;
    const auto win = std::size_t(std::llround(cfg.window_seconds * s.sample_rate));
    if (s.mixture.size() >= win) {
      score.sdri50 = sdri50(estimates[i], s.utterances, s.mixture, win, cfg.overlap_threshold).value;
      if (score.sdri50) {
        total50 += *score.sdri50;
        ++n50;
      }
    }
    out.sdri += score.sdri;
    out.sessions.push_back(score);
  }
  out.sdri /= double(sessions.size());
  if (n50) out.sdri50 = total50 / double(n50);
  return out;
}

EvalSummary evaluate(const SeparationModel& model, std::span<const MeetingSession> sessions, const EvalConfig& cfg) {
  std::vector<std::vector<std::vector<double>>> est;
  for (const auto& s : sessions) est.push_back(separate_waveform(model, s.mixture));
  return evaluate_estimates(est, sessions, cfg);
}

std::vector<AblationRow> run_ablation(const AppConfig& cfg, std::span<const MeetingSession> train_set,
                                      std::span<const MeetingSession> test_set,
                                      const std::function<void(const std::string&)>& log) {
  if (cfg.model.kind != ModelSpec::Kind::skim) throw ConfigError("ablate: model.type must be skim");
  std::vector<AblationRow> rows;
  for (MemMode mode : kAllMemModes) {
    ModelSpec spec = cfg.model;
    spec.skim.mem_mode = mode;
    auto model = build_model(spec, cfg.seed);
    AblationRow row;
    row.mode = mode;
    row.params = count_scalars(model->parameters());
    TrainOptions opts;
    if (cfg.train.max_seconds > 0.0) opts.max_seconds = cfg.train.max_seconds;
    double last = 0.0;
    opts.on_step = [&](const StepMetrics& m) { last = m.loss; };
    try {
      const auto r = train(*model, spec, train_set, cfg.train.train, opts);
      row.steps = r.steps;
      row.final_loss = r.epoch_losses.empty() ? last : r.epoch_losses.back();
      row.finite = std::isfinite(row.final_loss);
    } catch (const Error& e) {
      if (log) log("ablate: mode " + to_string(mode) + " failed: " + e.what());
      row.finite = false;
      row.final_loss = std::nan("");
    }
    if (row.finite) row.eval = evaluate(*model, test_set, cfg.eval);
    if (log) {
      std::ostringstream s;
      s << "ablate: mode " << to_string(mode) << " steps " << row.steps << " loss " << row.final_loss << " sdri "
        << row.eval.sdri;
      log(s.str());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Json ablation_json(const std::vector<AblationRow>& rows) {
  Json out = Json::array();
  for (const auto& r : rows)
    out.push_back({{"mem_mode", to_string(r.mode)},
                   {"params", r.params},
                   {"steps", r.steps},
                   {"final_loss", r.finite ? Json(r.final_loss) : Json(nullptr)},
                   {"finite", r.finite},
                   {"sdri", r.eval.sdri},
                   {"sdri50", r.eval.sdri50 ? Json(*r.eval.sdri50) : Json(Sdri50Result::kNoOverlapWindows)}});
  return out;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << std::left << std::setw(8) << "mem" << std::right << std::setw(12) << "params" << std::setw(8) << "steps"
    << std::setw(12) << "loss" << std::setw(10) << "SDRi" << std::setw(10) << "SDRi50" << "\n";
  s << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    s << std::left << std::setw(8) << to_string(r.mode) << std::right << std::setw(12) << r.params << std::setw(8)
      << r.steps << std::setw(12) << r.final_loss << std::setw(10) << r.eval.sdri << std::setw(10);
    if (r.eval.sdri50)
      s << *r.eval.sdri50;
    else
      s << "n/a";
    s << "\n";
  }
  auto sdri = [&](MemMode m) {
    for (const auto& r : rows)
      if (r.mode == m) return r.eval.sdri;
    return std::nan("");
  };
  const bool ordered = sdri(MemMode::hc) >= sdri(MemMode::h) && sdri(MemMode::h) >= sdri(MemMode::c) &&
                       sdri(MemMode::c) >= sdri(MemMode::none);
  s << "ordering hc >= h >= c >= none: " << (ordered ? "holds" : "does not hold") << "\n";
  return s.str();
}

}  // namespace skim
