#include <doctest.h>

#include <fstream>

#include "../support.hpp"
#include "skim/checkpoint.hpp"
#include "skim/train.hpp"

using namespace skim;
namespace fs = std::filesystem;

namespace {

ModelSpec tiny_spec() {
  ModelSpec s;
  s.skim.hidden = 4;
  s.skim.segment_len = 5;
  s.skim.encoder = EncoderConfig{8, 4, 6, Nonlinearity::relu};
  return s;
}

std::vector<MeetingSession> tiny_data() {
  SimConfig c;
  c.session_seconds = 1.5;
  c.num_speakers = {2, 2};
  c.utterance_seconds = {0.3, 0.6};
  c.seed = 77;
  return simulate_dataset(c, 3);
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.epochs = 2;
  t.steps_per_epoch = 2;
  t.clip_seconds = 0.25;
  t.seed = 5;
  return t;
}

std::vector<std::vector<double>> snapshot(const SeparationModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  CHECK(lr_at(c, 0) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(lr_at(c, 1) == doctest::Approx(9.7e-4).epsilon(1e-12));
  CHECK(lr_at(c, 2) == doctest::Approx(9.409e-4).epsilon(1e-12));
  CHECK_THROWS(lr_at(c, -1));
}

TEST_CASE("gradient clipping") {
  std::vector<std::vector<double>> g{{6.0, 0.0}, {0.0, 8.0}};
  CHECK(clip_grad_l2(g, 5.0) == doctest::Approx(10.0));
  CHECK(g[0][0] == doctest::Approx(3.0));
  CHECK(g[1][1] == doctest::Approx(4.0));
  std::vector<std::vector<double>> h{{3.0}};
  CHECK(clip_grad_l2(h, 5.0) == 3.0);
  CHECK(h[0][0] == 3.0);
  std::vector<std::vector<double>> z{{0.0, 0.0}};
  CHECK(clip_grad_l2(z, 5.0) == 0.0);
  CHECK(z[0] == std::vector<double>{0.0, 0.0});
}

TEST_CASE("adam update closed forms") {
  TrainConfig c;
  std::vector<double> p{1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
  const std::vector<double> g{0.3, -4.0, 0.0};
  adam_update(p, g, m, v, 1, 1e-3, c);
  CHECK(p[0] == doctest::Approx(1.0 - 1e-3 * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(-2.0 + 1e-3 * 4.0 / (4.0 + 1e-8)).epsilon(1e-12));
  CHECK(p[2] == 0.5);

  std::vector<double> q{1.0}, mq{0.2}, vq{0.5};
  adam_update(q, std::vector<double>{0.0}, mq, vq, 3, 1e-3, c);
  CHECK(mq[0] == doctest::Approx(0.18));
  CHECK(vq[0] == doctest::Approx(0.4995));

  std::vector<double> r{0.0}, mr{0.0}, vr{0.0};
  adam_update(r, std::vector<double>{2.0}, mr, vr, 1, 1e-2, c);
  const double first = r[0];
  adam_update(r, std::vector<double>{2.0}, mr, vr, 2, 1e-2, c);
  CHECK(first < 0.0);
  CHECK(r[0] - first < 0.0);
  CHECK_THROWS(adam_update(r, std::vector<double>{2.0}, mr, vr, 0, 1e-2, c));
}

TEST_CASE("random clip") {
  const auto data = tiny_data();
  std::mt19937_64 rng(1);
  const MeetingSession whole = random_clip(data[0], 10.0, rng);
  CHECK(whole.mixture == data[0].mixture);

  std::mt19937_64 r1(9), r2(9);
  const MeetingSession a = random_clip(data[0], 0.5, r1), b = random_clip(data[0], 0.5, r2);
  CHECK(a.mixture == b.mixture);
  CHECK(a.mixture.size() == 4000);

  const auto& src = data[0].mixture;
  const auto at = std::search(src.begin(), src.end(), a.mixture.begin(), a.mixture.end());
  REQUIRE(at != src.end());
  const std::size_t begin = std::size_t(at - src.begin());
  for (const auto& u : a.utterances) {
    const auto orig = std::find_if(data[0].utterances.begin(), data[0].utterances.end(), [&](const Utterance& o) {
      return o.speaker_id == u.speaker_id && o.start <= begin + u.start && o.end() >= begin + u.end();
    });
    REQUIRE(orig != data[0].utterances.end());
    const std::size_t off = begin + u.start - orig->start;
    CHECK(std::equal(u.source.begin(), u.source.end(), orig->source.begin() + off));
  }
}

TEST_CASE("checkpoint round trip and strict assignment") {
  skim::test::TempDir dir("ckpt");
  const ModelSpec spec = tiny_spec();
  auto model = build_model(spec, 3);
  save_checkpoint(dir.path / "m.ckpt", spec, model->parameters(), {{"note", "x"}});
  ModelSpec back;
  auto loaded = load_model(dir.path / "m.ckpt", &back);
  CHECK(to_json(back) == to_json(spec));
  CHECK(snapshot(*loaded) == snapshot(*model));
  CHECK(load_checkpoint(dir.path / "m.ckpt").extra["note"] == "x");

  ModelSpec other = spec;
  other.skim.hidden = 5;
  auto wrong = build_model(other, 3);
  CHECK_THROWS(assign_parameters(*wrong, load_checkpoint(dir.path / "m.ckpt")));
  std::ofstream(dir.path / "junk.ckpt") << "garbage";
  CHECK_THROWS(load_checkpoint(dir.path / "junk.ckpt"));
}

TEST_CASE("strict config readers") {
  CHECK_THROWS_AS(model_spec_from_json(Json{{"type", "skim"}, {"hiden", 3}}), ConfigError);
  CHECK_THROWS_AS(model_spec_from_json(Json{{"type", "skim"}, {"hidden", "three"}}), ConfigError);
  CHECK_THROWS_AS(model_spec_from_json(Json{{"type", "rnn"}}), ConfigError);
  const ModelSpec d = model_spec_from_json(Json{{"type", "dprnn"}, {"chunk_len", 10}});
  CHECK(d.kind == ModelSpec::Kind::dprnn);
  CHECK(d.dprnn.chunk_len == 10);
  CHECK(to_json(model_spec_from_json(to_json(tiny_spec()))) == to_json(tiny_spec()));
}

TEST_CASE("training writes checkpoints and resumes bit-exactly") {
  const auto data = tiny_data();
  const ModelSpec spec = tiny_spec();
  skim::test::TempDir full("train_full"), part("train_part");

  auto a = build_model(spec, 11);
  TrainOptions oa;
  oa.out_dir = full.path;
  const TrainResult ra = train(*a, spec, data, tiny_train(), oa);
  CHECK(ra.epochs_completed == 2);
  CHECK(ra.steps == 4);
  CHECK(fs::exists(full.path / "epoch_0001.ckpt"));
  CHECK(fs::exists(full.path / "epoch_0002.ckpt"));
  CHECK(fs::exists(full.path / "best.ckpt"));
  std::ifstream metrics(full.path / "metrics.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(metrics, line); ++lines) {
    const Json j = Json::parse(line);
    for (const char* k : {"epoch", "step", "loss", "grad_norm", "lr", "wall_time"}) CHECK(j.contains(k));
  }
  CHECK(lines == 4);

  auto b = build_model(spec, 11);
  TrainConfig one = tiny_train();
  one.epochs = 1;
  TrainOptions ob;
  ob.out_dir = part.path;
  (void)train(*b, spec, data, one, ob);
  auto c = build_model(spec, 999);
  ob.resume = true;
  const TrainResult rc = train(*c, spec, data, tiny_train(), ob);
  CHECK(rc.steps == 4);
  CHECK(snapshot(*c) == snapshot(*a));
}

TEST_CASE("non-finite training aborts and keeps the last checkpoint") {
  const auto data = tiny_data();
  const ModelSpec spec = tiny_spec();
  skim::test::TempDir dir("train_fault");
  auto m = build_model(spec, 2);
  TrainConfig one = tiny_train();
  one.epochs = 1;
  TrainOptions o;
  o.out_dir = dir.path;
  (void)train(*m, spec, data, one, o);
  for (const auto& p : m->parameters()) {
    Tensor t = p.tensor;
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 1e300);
  }
  try {
    (void)train(*m, spec, data, one, o);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("last good checkpoint") != std::string::npos);
  }
  CHECK(fs::exists(dir.path / "epoch_0001.ckpt"));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto data = tiny_data();
  const ModelSpec spec = tiny_spec();
  auto m = build_model(spec, 4);
  const auto before = snapshot(*m);
  TrainConfig t = tiny_train();
  t.lr0 = 1e-300;
  t.clip_norm = std::numeric_limits<double>::infinity();
  (void)train(*m, spec, data, t);
  const auto after = snapshot(*m);
  double diff = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) diff = std::max(diff, skim::test::max_abs_diff(before[i], after[i]));
  CHECK(diff < 1e-290);
}
