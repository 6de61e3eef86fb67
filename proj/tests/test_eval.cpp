#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dsr/eval.hpp"
#include "dsr/losses.hpp"
#include "dsr/pipeline.hpp"
#include "dsr/reconstruct.hpp"
#include "dsr/vocoder.hpp"
#include "small_models.hpp"
#include "toy_fixture.hpp"

#include <filesystem>
#include <fstream>
#include <numbers>

using namespace dsr;
using namespace dsr::eval;
using namespace dsr::testing;

TEST_CASE("phoneme error rate") {
  const std::vector<int> abc{0, 1, 2}, axc{0, 7, 2};
  CHECK(phoneme_error_rate(abc, abc) == 0.0);
  CHECK(phoneme_error_rate(axc, abc) == doctest::Approx(1.0 / 3.0));
  CHECK(phoneme_error_rate(std::vector<int>{}, abc) == 1.0);
  CHECK(phoneme_error_rate(std::vector<int>{0, 1, 2, 3, 4}, abc) == doctest::Approx(2.0 / 3.0));
  CHECK(edit_distance(std::vector<int>{1, 2, 3}, std::vector<int>{2, 3, 4}) == 2);
  CHECK_THROWS_AS(phoneme_error_rate(abc, std::vector<int>{}), Error);
}

TEST_CASE("mel distortion") {
  const Matrix m = rnd(12, 8, 1);
  CHECK(mel_distortion(m, m) == 0.0);
  Matrix z = m;
  z.col(3).array() += -0.75;
  CHECK(mel_distortion(z, m) == doctest::Approx(0.75).epsilon(1e-12));

  const Matrix longer = rnd(17, 8, 2);
  CHECK(mel_distortion(longer, m) == doctest::Approx(mel_distortion(m, longer)).epsilon(1e-12));
  CHECK(mel_distortion(longer, m) > 0.0);
  // A time-stretched copy aligns perfectly.
  Matrix stretched(24, 8);
  for (Index t = 0; t < 24; ++t) stretched.row(t) = m.row(t / 2);
  CHECK(mel_distortion(stretched, m) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(mel_distortion(Matrix(0, 8), m), ShapeError);
  CHECK_THROWS_AS(mel_distortion(rnd(12, 7, 3), m), ShapeError);
}

TEST_CASE("speaker similarity and EER") {
  RowVector a = RowVector::Zero(4), b = RowVector::Zero(4);
  a(0) = 1;
  b(1) = 1;
  CHECK(speaker_similarity(a, {a}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(speaker_similarity(a, {b}) == 0.0);
  CHECK(speaker_similarity(a, {a, b}) == doctest::Approx(std::sqrt(0.5)));
  CHECK_THROWS_AS(speaker_similarity(a, {}), Error);

  const std::vector<double> separated{0.9, 0.8, 0.7, 0.2, 0.1};
  CHECK(equal_error_rate(separated, {true, true, true, false, false}) == 0.0);
  const std::vector<double> inverted{0.1, 0.2, 0.8, 0.9};
  CHECK(equal_error_rate(inverted, {true, true, false, false}) == doctest::Approx(1.0));
  const std::vector<double> mixed{0.9, 0.8, 0.7, 0.6};
  CHECK(equal_error_rate(mixed, {true, false, true, false}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(equal_error_rate(mixed, {true, true, true, true}), Error);
}

TEST_CASE("Griffin-Lim recovers a consistent magnitude") {
  Waveform wav;
  for (int n = 0; n < 8000; ++n)
    wav.samples.push_back(0.3 * std::sin(2 * std::numbers::pi * 220.0 * n / 16000.0) +
                          0.2 * std::sin(2 * std::numbers::pi * 1330.0 * n / 16000.0));
  const FrameConfig cfg;
  const Matrix magnitude = power_spectrogram(wav, cfg).cwiseSqrt();
  const Waveform few = griffin_lim(magnitude, cfg, {2, 0.99, 1});
  const Waveform many = griffin_lim(magnitude, cfg, {60, 0.99, 1});
  CHECK(many.size() == samples_for_frames(magnitude.rows(), cfg));
  const double sc_few = spectral_convergence(magnitude, few, cfg);
  const double sc_many = spectral_convergence(magnitude, many, cfg);
  CHECK(sc_many < sc_few);
  CHECK(sc_many < 0.2);
  // Deterministic for a fixed phase seed.
  CHECK(griffin_lim(magnitude, cfg, {5, 0.99, 1}).samples == griffin_lim(magnitude, cfg, {5, 0.99, 1}).samples);
  CHECK_THROWS_AS(griffin_lim(Matrix(3, 7), cfg, {}), ShapeError);
}

TEST_CASE("mel remapping approximates direct analysis") {
  Rng rng(4);
  Waveform wav;
  for (int n = 0; n < 16000; ++n) wav.samples.push_back(0.1 * gaussian(rng));
  const Matrix m80 = mel_spectrogram(wav, FrameConfig::with_mels(80)).values;
  const Matrix m40 = mel_spectrogram(wav, FrameConfig::with_mels(40)).values;
  const Matrix remapped = remap_mel(m80, 40);
  REQUIRE(remapped.rows() == m40.rows());
  // Skip the lowest bands, where 40 filters are narrower than 80-filter support.
  const double err = (remapped.rightCols(36) - m40.rightCols(36)).cwiseAbs().mean();
  CHECK(err < 0.1);
}

namespace {

struct Trained {
  const data::Dataset* data;
  PipelineConfig cfg;
  SystemBundle sv;
};

const Trained& trained() {
  static std::unique_ptr<Trained> t;
  if (!t) {
    const auto& w = toy_world("eval");
    const ModelParams se = pipeline::pretrain_speech_encoder(*w.data, w.cfg);
    const auto pros = pipeline::train_prosody(*w.data, w.cfg, se);
    const ModelParams spk = pipeline::train_speaker_encoder(*w.data, w.cfg);
    const ModelParams gen = pipeline::train_generator(*w.data, w.cfg, se, spk);
    t = std::make_unique<Trained>(Trained{w.data.get(), w.cfg, {se, pros.duration, pros.pitch, spk, gen}});
  }
  return *t;
}

}  // namespace

TEST_CASE("reconstruction modes") {
  const auto& t = trained();
  const auto& u = t.data->get(t.data->ids(corpus::Role::kDysarthric, "d01", "test").front());
  const Index total = u.alignment.total_frames();

  const Reconstruction gg = reconstruct(t.sv, u, ReconstructionMode::kGG);
  CHECK(gg.mel.rows() == total);
  CHECK(gg.mel.cols() == 80);
  CHECK((gg.pitch.array() == u.pitch.array()).all());
  const Reconstruction gp = reconstruct(t.sv, u, ReconstructionMode::kGP);
  CHECK(gp.mel.rows() == total);
  CHECK(gp.durations == u.durations());
  CHECK(std::abs(gp.embedding.norm() - 1.0) < 1e-6);

  // Audio alone is enough for PP and not for the other two.
  const data::Utterance bare = data::from_waveform(read_wav(t.data->manifest().resolve(
                                                       t.data->manifest().entries.front().wav)),
                                                   t.data->stats());
  CHECK_THROWS_AS(reconstruct(t.sv, bare, ReconstructionMode::kGG), Error);
  CHECK_THROWS_AS(reconstruct(t.sv, bare, ReconstructionMode::kGP), Error);
  try {
    const Reconstruction pp = reconstruct(t.sv, bare, ReconstructionMode::kPP);
    std::size_t sum = 0;
    for (int d : pp.durations) sum += static_cast<std::size_t>(d);
    CHECK(static_cast<std::size_t>(pp.mel.rows()) == sum);
    CHECK(pp.phonemes.size() == pp.durations.size());
  } catch (const Error& e) {
    // An undertrained decoder may run away; that must surface as an error.
    MESSAGE("PP raised: " << e.what());
  }

  CHECK(reconstruction_mode_from_string("PP") == ReconstructionMode::kPP);
  CHECK_THROWS_AS(reconstruction_mode_from_string("XX"), Error);

  const Waveform audio = render(gp.mel, t.data->stats(), {4, 0.99, 0});
  CHECK(audio.size() == samples_for_frames(gp.mel.rows(), FrameConfig{}));
  double peak = 0;
  for (double s : audio.samples) peak = std::max(peak, std::abs(s));
  CHECK(peak <= 0.95 + 1e-12);
}

TEST_CASE("GG on a healthy utterance reproduces the generator objective") {
  const auto& t = trained();
  for (const auto& id : t.data->healthy_ids("train")) {
    const auto& u = t.data->get(id);
    const training::Triple tr = training::make_triple(u, t.sv.speech_encoder, t.sv.speaker_encoder);
    const double objective =
        losses::generation_loss(models::generate(t.sv.generator, tr.p, tr.v, tr.e), tr.m);
    const Reconstruction gg = reconstruct(t.sv, u, ReconstructionMode::kGG);
    CHECK(std::abs(losses::generation_loss(gg.mel, u.mel80) - objective) < 1e-6);
  }
}

TEST_CASE("recogniser reads healthy speech") {
  const auto& t = trained();
  const Recognizer rec = Recognizer::train(*t.data, t.data->healthy_ids("train"));
  double per = 0;
  const auto ids = t.data->healthy_ids("test");
  for (const auto& id : ids) {
    const auto& u = t.data->get(id);
    const auto ref = rec.reference(u.labels);
    CHECK(std::find(ref.begin(), ref.end(), t.data->inventory().silence()) == ref.end());
    per += phoneme_error_rate(rec.recognize(u.mel80), ref);
  }
  CHECK(per / static_cast<double>(ids.size()) < 0.35);
  const auto& first = t.data->get(ids.front());
  CHECK(rec.classify_frames(first.mel80).size() == static_cast<std::size_t>(first.mel80.rows()));
  CHECK(rec.recognize(Matrix(0, 80)).empty());
  CHECK_THROWS_AS(rec.recognize(Matrix::Zero(5, 40)), ShapeError);
  CHECK_THROWS_AS(Recognizer::train(*t.data, {}), Error);
}

TEST_CASE("evaluation is deterministic and well formed") {
  const auto& t = trained();
  const Recognizer rec = Recognizer::train(*t.data, t.data->healthy_ids("train"));
  const auto ids = t.data->ids(corpus::Role::kDysarthric, "d01", "test");
  const SystemBundle asa = asa::clone_system(t.sv);
  const ModelParams disc = models::init_discriminator(t.cfg.discriminator, 2);
  EvalOptions opt;
  opt.discriminator = &disc;
  const EvalReport a = evaluate(*t.data, {{"SV-DSR", &t.sv}, {"ASA-DSR", &asa}}, "d01", ids, rec, opt);
  const EvalReport b = evaluate(*t.data, {{"SV-DSR", &t.sv}, {"ASA-DSR", &asa}}, "d01", ids, rec, opt);
  REQUIRE(a.utterances.size() == 2 * ids.size());
  REQUIRE(a.systems.size() == 2);
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    CHECK(a.utterances[i].similarity == b.utterances[i].similarity);
    CHECK(a.utterances[i].per == b.utterances[i].per);
    CHECK(a.utterances[i].similarity >= -1.0);
    CHECK(a.utterances[i].similarity <= 1.0);
    CHECK(a.utterances[i].distortion >= 0.0);
    CHECK(a.utterances[i].per >= 0.0);
    REQUIRE(a.utterances[i].f_d);
    CHECK(*a.utterances[i].f_d > 0.0);
    CHECK(*a.utterances[i].f_d < 1.0);
  }
  // An unadapted clone scores exactly like its source.
  CHECK(a.systems[0].similarity == a.systems[1].similarity);
  CHECK(a.systems[0].per == a.systems[1].per);

  const auto path = std::filesystem::temp_directory_path() / "dsr_eval.jsonl";
  a.write_jsonl(path);
  std::ifstream in(path);
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == a.utterances.size() + a.systems.size());
  CHECK(a.table().find("ASA-DSR") != std::string::npos);
  std::filesystem::remove(path);

  CHECK(duration_mae(*t.data, t.sv, t.data->ids(corpus::Role::kProsodyReference)) >= 0.0);
  CHECK(pitch_rmse(*t.data, t.sv, t.data->ids(corpus::Role::kProsodyReference)) >= 0.0);
  CHECK_THROWS_AS(evaluate(*t.data, {}, "d01", ids, rec), Error);
}
