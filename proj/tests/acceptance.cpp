// Acceptance run. Prints one PASS/FAIL line per criterion, preceded by
// informational lines, and exits non-zero when a criterion fails that was
// not listed with --allow-fail.
//
// The property checks (1-3, 6, 8, 9) run on reduced networks and the tiny
// corpus; 4, 5 and 7 run on the full desk-profile pipeline, trained from
// scratch into the work directory.

#include "dsr/asa.hpp"
#include "dsr/eval.hpp"
#include "dsr/losses.hpp"
#include "dsr/pipeline.hpp"
#include "dsr/reconstruct.hpp"
#include "gradcheck.hpp"
#include "small_models.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

using namespace dsr;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::map<int, Verdict> verdicts;
const auto t_start = std::chrono::steady_clock::now();

double elapsed() { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count(); }

void info(const char* fmt, auto... args) {
  std::printf("  [%6.0fs] ", elapsed());
  std::printf(fmt, args...);
  std::printf("\n");
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

void record(int n, bool pass, std::string detail) {
  verdicts[n] = {pass, std::move(detail)};
  info("criterion %d: %s", n, pass ? "pass" : "FAIL");
}

// Runs a criterion body; an exception counts as a failure with its message.
void guarded(int n, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    record(n, false, std::string("raised: ") + e.what());
  }
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t count) {
  double s = 0.0;
  for (std::size_t i = from; i < from + count; ++i) s += v[i];
  return s / static_cast<double>(count);
}

// Ratio of the mean of the last `w` losses to the mean of the first `w`.
double loss_ratio(const std::vector<double>& losses, std::size_t w = 50) {
  w = std::min(w, losses.size() / 2);
  if (w == 0) return 1.0;
  return mean_of(losses, losses.size() - w, w) / mean_of(losses, 0, w);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  if (a.tag != b.tag || a.hyper != b.hyper || a.tensors.size() != b.tensors.size()) return false;
  for (const auto& [name, t] : a.tensors) {
    auto it = b.tensors.find(name);
    if (it == b.tensors.end() || it->second.rows() != t.rows() || it->second.cols() != t.cols()) return false;
    if (!(it->second.array() == t.array()).all()) return false;
  }
  return true;
}

// Phoneme error rate of Phi's own greedy decoding, SIL removed; a runaway
// decode scores 1.
double decode_per(const data::Dataset& data, const ModelParams& se, const std::vector<std::string>& ids) {
  const int sil = data.inventory().silence();
  auto strip = [sil](std::vector<int> v) {
    std::erase(v, sil);
    return v;
  };
  double total = 0.0;
  for (const auto& id : ids) {
    const auto& u = data.get(id);
    try {
      total += eval::phoneme_error_rate(strip(models::speech_encoder_decode(se, u.features).ids), strip(u.labels));
    } catch (const Error&) {
      total += 1.0;
    }
  }
  return total / static_cast<double>(ids.size());
}

std::unique_ptr<data::Dataset> make_corpus(const corpus::ToyCorpusConfig& cfg, const fs::path& dir) {
  fs::remove_all(dir);
  const corpus::Manifest m = corpus::synthesize_toy_corpus(cfg, dir);
  save_stats(dir / "stats.txt", data::corpus_stats(m));
  return std::make_unique<data::Dataset>(data::Dataset::open(dir / "manifest.tsv", dir / "stats.txt",
                                                             cfg.phoneme_inventory_size));
}

// ---------------------------------------------------------------------------
// Property criteria on reduced networks

void criterion_grl() {
  Rng rng(2024);
  bool forward = true, backward = true;
  for (int trial = 0; trial < 50; ++trial) {
    const Index r = 1 + trial % 7, c = 1 + (trial * 3) % 11;
    const Matrix x = gaussian_matrix(rng, r, c, 100.0);
    const Matrix up = gaussian_matrix(rng, r, c, 100.0);
    ad::Var v = ad::leaf(x);
    ad::Var y = ad::grl(v);
    forward = forward && (y.value().array() == x.array()).all();
    ad::backward(y, up);
    backward = backward && (v.grad().array() == (-up).array()).all();
  }
  record(1, forward && backward,
         fmt("50 random tensors: forward identity %s, gradient == -upstream %s", forward ? "bit-exact" : "DIFFERS",
             backward ? "exact" : "DIFFERS"));
}

void criterion_loss_oracles() {
  const double dis = losses::discrimination_loss(0.9, 0.1);
  const double mtl = losses::mtl_loss(2.0, -1.38629, 1.0);
  Matrix z = Matrix::Zero(1, models::kGeneratorMels), m = Matrix::Zero(1, models::kGeneratorMels);
  z(0, 0) = 3.0;
  z(0, 1) = 4.0;
  const double gen = losses::generation_loss(z, m);
  const double adapt = losses::adaptation_loss(z, m);
  const bool ok = std::abs(dis + 4.60517) <= 1e-6 && std::abs(mtl - 3.38629) <= 1e-6 && std::abs(gen - 5.0) <= 1e-9 &&
                  std::abs(adapt - 5.0) <= 1e-9;
  record(2, ok, fmt("L_dis(0.9, 0.1) = %.7f, L_MTL(2, -1.38629, 1) = %.7f, generation = %.10f, adaptation = %.10f", dis,
                    mtl, gen, adapt));
}

void criterion_gradients() {
  using namespace testing;
  using namespace models;
  double worst = 0.0;
  std::string worst_name;
  int checked = 0;
  auto take = [&](const std::string& group, const std::vector<GradCheckResult>& results) {
    for (const auto& r : results) {
      ++checked;
      if (r.relative_error >= worst) {
        worst = r.relative_error;
        worst_name = group + "/" + r.name;
      }
    }
  };

  {
    auto params = init_speech_encoder(small_se(), 11);
    const Matrix feat = rnd(14, 6, 12);
    take("speech-encoder CE", check_params(params, [&](const ParamSet& p) { return speech_encoder_loss(p, feat, {1, 0, 3}); }));
  }
  {
    PredictorConfig cfg{5, 6, 3};
    const Matrix pe = simplex_rows(5, 5, 13), log_d = rnd(5, 1, 14);
    auto dur = init_duration_predictor(cfg, 15);
    take("duration MSE", check_params(dur, [&](const ParamSet& p) {
           ad::Var d = ad::sub(duration_forward(p, ad::constant(pe)), ad::constant(log_d));
           return ad::mean(ad::cmul(d, d));
         }));
    const Matrix expanded = simplex_rows(11, 5, 16), f0 = rnd(11, 1, 17);
    auto pitch = init_pitch_predictor(cfg, 18);
    take("pitch MSE", check_params(pitch, [&](const ParamSet& p) {
           ad::Var d = ad::sub(pitch_forward(p, ad::constant(expanded)), ad::constant(f0));
           return ad::mean(ad::cmul(d, d));
         }));
  }
  {
    auto params = init_speaker_encoder(small_spk(), 19);
    params.at("ge2e_w")(0, 0) = 2.0;
    params.at("ge2e_b")(0, 0) = -1.0;
    std::vector<Matrix> mels;
    for (int i = 0; i < 4; ++i) mels.push_back(rnd(5 + i, 6, 20 + i) + Matrix::Constant(5 + i, 6, i / 2));
    take("GE2E", check_params(params, [&](const ParamSet& p) {
           std::vector<ad::Var> rows;
           for (const auto& m : mels) rows.push_back(speaker_forward(p, ad::constant(m)));
           return losses::ge2e_loss(ad::concat_rows(rows), 2, 2, p["ge2e_w"], p["ge2e_b"]);
         }));
  }
  {
    auto gen = init_generator(small_gen(), 21);
    auto spk = init_speaker_encoder(small_spk(), 22);
    const Matrix p = simplex_rows(7, 5, 23), v = rnd(7, 1, 24), target = rnd(7, 10, 25), mel = rnd(9, 6, 26);
    auto loss = [&](const ParamSet& g, const ParamSet& s) {
      return losses::generation_loss(
          generator_forward(g, ad::constant(p), ad::constant(v), speaker_forward(s, ad::constant(mel))),
          ad::constant(target));
    };
    ParamSet frozen_spk(spk, false);
    take("generation wrt generator", check_params(gen, [&](const ParamSet& g) { return loss(g, frozen_spk); }));
    ParamSet frozen_gen(gen, false);
    take("adaptation wrt speaker encoder", check_params(spk, [&](const ParamSet& s) { return loss(frozen_gen, s); }));
  }
  {
    // The ASA objectives on a seeded batch of three random samples.
    SystemBundle sv;
    sv.speaker_encoder = init_speaker_encoder(small_spk(), 41);
    sv.generator = init_generator(small_gen(), 42);
    std::vector<asa::AdaptationSample> samples;
    for (int k = 0; k < 3; ++k) {
      asa::AdaptationSample s;
      const Index t = 18 + k, tt = 14 + 3 * k;
      s.id = "s" + std::to_string(k);
      s.mel40 = rnd(t, 6, 100 + k);
      s.target = rnd(t, 10, 110 + k);
      s.p = simplex_rows(t, 5, 120 + k);
      s.v = rnd(t, 1, 130 + k);
      s.p_tilde = simplex_rows(tt, 5, 140 + k);
      s.v_tilde = rnd(tt, 1, 150 + k);
      s.z_sv_tilde = generate(sv.generator, s.p_tilde, s.v_tilde, embed_speaker(sv.speaker_encoder, s.mel40));
      samples.push_back(std::move(s));
    }
    const asa::Batch batch{{0, 2, 1}, {1, 0, 0}};
    ModelParams disc = init_discriminator(small_disc(), 45);
    ModelParams speaker = sv.speaker_encoder;
    speaker.at("proj_w").array() += 0.03;
    auto check_group = [&](const std::string& group, const Gradients& analytic, ModelParams& params,
                           const std::function<double()>& loss) {
      std::vector<GradCheckResult> results;
      for (auto& [name, tensor] : params.tensors) results.push_back(check_tensor(name, tensor, analytic.at(name), loss));
      take(group, results);
    };
    check_group("L_MTL wrt theta_asa via GRL", asa::speaker_gradient(samples, batch, sv, speaker, disc, 1.0, true),
                speaker, [&] {
                  asa::StepLosses l;
                  asa::speaker_gradient(samples, batch, sv, speaker, disc, 1.0, false, &l);
                  return l.mtl;
                });
    check_group("L_dis wrt phi", asa::discriminator_gradient(samples, batch, sv, speaker, disc), disc, [&] {
      asa::StepLosses l;
      asa::discriminator_gradient(samples, batch, sv, speaker, disc, &l);
      return l.dis;
    });
  }
  record(3, worst < 1e-3,
         fmt("%d tensors over 9 loss/parameter groups, worst relative error %.2e (%s)", checked, worst,
             worst_name.c_str()));
}

void criterion_structural_zero() {
  using namespace testing;
  SystemBundle sv;
  sv.speaker_encoder = models::init_speaker_encoder(small_spk(), 41);
  sv.generator = models::init_generator(small_gen(), 42);
  const ModelParams disc = models::init_discriminator(small_disc(), 43);
  ModelParams speaker = sv.speaker_encoder;
  speaker.at("proj_w").array() += 0.05;
  ParamSet spk(speaker, true);
  const ParamSet d(disc, false);
  std::vector<ad::Var> terms;
  for (int k = 0; k < 4; ++k) {
    asa::AdaptationSample s;
    s.mel40 = rnd(20, 6, 200 + k);
    s.target = rnd(20, 10, 210 + k);
    s.p = simplex_rows(20, 5, 220 + k);
    s.v = rnd(20, 1, 230 + k);
    s.p_tilde = simplex_rows(17, 5, 240 + k);
    s.v_tilde = rnd(17, 1, 250 + k);
    const asa::ForwardTriple f = asa::forward_triple(s, sv, spk);
    const ad::Var score = models::discriminator_forward(d, models::crop_frames(f.z_sv_tilde, 16, k % 2));
    terms.push_back(ad::log(ad::add_scalar(ad::neg(score), 1.0)));
  }
  const ad::Var term = ad::mean(ad::concat_rows(terms));
  ad::backward(term);
  double largest = 0.0;
  for (const auto& [name, g] : spk.gradients()) largest = std::max(largest, g.cwiseAbs().maxCoeff());
  record(6, largest == 0.0 && !term.requires_grad(),
         fmt("log(1 - f_d(z~sv)) over a seeded batch of 4: max |d/d theta_asa| = %g, term %s on theta_asa", largest,
             term.requires_grad() ? "DEPENDS" : "does not depend"));
}

// ---------------------------------------------------------------------------
// Persistence and determinism on the tiny corpus

struct StageTraces {
  std::map<std::string, std::vector<double>> losses;
  std::map<std::string, std::uint64_t> checksums;
};

StageTraces run_all_stages(const data::Dataset& data, const PipelineConfig& cfg) {
  StageTraces t;
  training::TrainReport r;
  const ModelParams se = pipeline::pretrain_speech_encoder(data, cfg, nullptr, &r);
  t.losses["pretrain"] = r.losses;
  t.checksums["pretrain"] = se.checksum();
  const std::string spk = data.manifest().speakers(corpus::Role::kDysarthric).front();
  const ModelParams fine = pipeline::finetune_speech_encoder(data, cfg, se, spk, nullptr, &r);
  t.losses["finetune"] = r.losses;
  t.checksums["finetune"] = fine.checksum();
  const auto pros = pipeline::train_prosody(data, cfg, se, nullptr, &r);
  t.losses["prosody"] = r.losses;
  t.checksums["prosody"] = pros.duration.checksum() ^ (pros.pitch.checksum() * 3);
  const ModelParams speaker = pipeline::train_speaker_encoder(data, cfg, nullptr, &r);
  t.losses["speaker"] = r.losses;
  t.checksums["speaker"] = speaker.checksum();
  const ModelParams gen = pipeline::train_generator(data, cfg, se, speaker, nullptr, &r);
  t.losses["generator"] = r.losses;
  t.checksums["generator"] = gen.checksum();
  const SystemBundle sv{fine, pros.duration, pros.pitch, speaker, gen, SystemLabel::kSvDsr};
  const auto a = pipeline::adapt(data, cfg, sv, spk);
  t.losses["asa"] = a.report.losses;
  t.checksums["asa"] = a.adapted.speaker_encoder.checksum() ^ (a.discriminator.checksum() * 3);
  return t;
}

void criterion_persistence(const fs::path& work) {
  PipelineConfig cfg = profile_config("tiny");
  const fs::path a = work / "tiny_a", b = work / "tiny_b";
  auto da = make_corpus(cfg.corpus, a);
  auto db = make_corpus(cfg.corpus, b);

  // Corpus: two syntheses byte-identical, and the manifest survives a rewrite.
  std::size_t files = 0, differing = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    ++files;
    differing += read_file(entry.path()) != read_file(b / fs::relative(entry.path(), a));
  }
  corpus::save_manifest(work / "manifest_copy.tsv", da->manifest());
  const bool manifest_ok = read_file(work / "manifest_copy.tsv") == read_file(a / "manifest.tsv");
  bool stats_ok = true;
  const StatsTable reloaded = load_stats(a / "stats.txt");
  for (const auto& [name, st] : da->stats()) {
    auto it = reloaded.find(name);
    stats_ok = stats_ok && it != reloaded.end() && it->second.mean == st.mean && it->second.std == st.std;
  }
  stats_ok = stats_ok && reloaded.size() == da->stats().size();

  // Seeded reruns of every stage.
  const StageTraces first = run_all_stages(*da, cfg);
  const StageTraces second = run_all_stages(*db, cfg);
  std::vector<std::string> diverged;
  for (const auto& [stage, losses] : first.losses)
    if (losses != second.losses.at(stage) || first.checksums.at(stage) != second.checksums.at(stage))
      diverged.push_back(stage);

  // Checkpoint round trip of freshly initialised desk-size networks.
  const PipelineConfig desk = profile_config("desk");
  std::vector<ModelParams> nets{models::init_speech_encoder(desk.speech_encoder, 1),
                                models::init_duration_predictor(desk.predictor, 2),
                                models::init_pitch_predictor(desk.predictor, 3),
                                models::init_speaker_encoder(desk.speaker_encoder, 4),
                                models::init_generator(desk.generator, 5),
                                models::init_discriminator(desk.discriminator, 6)};
  std::size_t roundtrip_ok = 0;
  for (std::size_t i = 0; i < nets.size(); ++i) {
    const fs::path p = work / ("net" + std::to_string(i) + ".ckpt");
    save_params(p, nets[i]);
    const ModelParams back = load_params(p);
    save_params(work / "again.ckpt", back);
    roundtrip_ok += same_params(nets[i], back) && back.checksum() == nets[i].checksum() &&
                    read_file(p) == read_file(work / "again.ckpt");
  }
  std::string stages;
  for (const auto& [stage, _] : first.losses) stages += (stages.empty() ? "" : ",") + stage;
  const bool ok = differing == 0 && manifest_ok && stats_ok && diverged.empty() && roundtrip_ok == nets.size();
  record(9, ok,
         fmt("corpus %zu files, %zu differ; manifest %s, stats %s; checkpoints %zu/%zu bit-exact; reruns of %s: %s",
             files, differing, manifest_ok ? "identical" : "DIFFERS", stats_ok ? "identical" : "DIFFER", roundtrip_ok,
             nets.size(), stages.c_str(), diverged.empty() ? "identical traces" : "DIVERGED"));
}

// ---------------------------------------------------------------------------
// Feature layer

void criterion_features(const data::Dataset& data) {
  const FrameConfig fc;
  Waveform second;
  second.samples.resize(16000);
  Rng rng(8);
  for (auto& s : second.samples) s = 0.1 * uniform(rng, -1, 1);
  const data::Utterance u = data::from_waveform(second, data.stats());
  const bool frames_ok = frame_count(16000, fc) == 98 && u.mel80.rows() == 98 && u.features.rows() == 98 &&
                         u.mel40.rows() == 98 && u.f0.frames() == 98;
  const bool width_ok = u.features.cols() == 120;

  const PipelineConfig desk = profile_config("desk");
  const ModelParams spk = models::init_speaker_encoder(desk.speaker_encoder, 17);
  double worst_norm = 0.0;
  std::size_t expansion_bad = 0, n = 0;
  for (const auto& id : data.ids(std::nullopt)) {
    if (n++ % 8) continue;
    const auto& utt = data.get(id);
    worst_norm = std::max(worst_norm, std::abs(models::embed_speaker(spk, utt.mel40).norm() - 1.0));
    const auto d = utt.durations();
    const Matrix onehot = Matrix::Identity(static_cast<Index>(d.size()), static_cast<Index>(d.size()));
    expansion_bad += models::expand_by_duration(onehot, d).rows() != std::accumulate(d.begin(), d.end(), Index{0});
  }
  record(8, frames_ok && width_ok && worst_norm <= 1e-6 && expansion_bad == 0,
         fmt("1.0 s -> %ld frames, feature width %ld, max |‖e‖-1| = %.1e over %zu utterances, expansion mismatches %zu",
             static_cast<long>(u.mel80.rows()), static_cast<long>(u.features.cols()), worst_norm, (n + 7) / 8,
             expansion_bad));
}

// ---------------------------------------------------------------------------
// Desk pipeline

struct Desk {
  std::unique_ptr<data::Dataset> data;
  PipelineConfig cfg;
  ModelParams pretrained, speaker, generator;
  pipeline::Prosody prosody;
  std::map<std::string, SystemBundle> sv;
};

void criterion_freezing(const Desk& desk, const std::string& speaker) {
  const auto samples =
      asa::prepare_adaptation_set(*desk.data, desk.data->ids(corpus::Role::kDysarthric, speaker, "train"),
                                  desk.sv.at(speaker));
  const ModelParams disc0 = models::init_discriminator(desk.cfg.discriminator, 99);
  StageConfig stage = desk.cfg.asa;
  stage.name = "freezing-check";
  asa::Adapter adapter(desk.sv.at(speaker), disc0, stage, desk.cfg.asa_lambda, desk.cfg.asa_use_grl);
  const asa::FrozenChecksums start = asa::frozen_checksums(desk.sv.at(speaker));
  const std::uint64_t speaker0 = adapter.speaker().checksum();
  int checks = 1, mismatches = asa::frozen_checksums(adapter.frozen()) != start;
  for (int step = 1; step <= 100; ++step) {
    adapter.step(samples);
    if (step % 10 == 0) {
      ++checks;
      mismatches += asa::frozen_checksums(adapter.frozen()) != start;
    }
  }
  // The frozen copy keeps all five; the ASA system shares everything but its speaker encoder.
  auto end = asa::frozen_checksums(adapter.adapted());
  mismatches += asa::frozen_checksums(adapter.frozen()) != start;
  end.erase("speaker_encoder_sv");
  auto expected = start;
  expected.erase("speaker_encoder_sv");
  mismatches += end != expected;
  checks += 2;
  const bool moved = adapter.speaker().checksum() != speaker0 && adapter.discriminator().checksum() != disc0.checksum();
  record(4, mismatches == 0 && moved && start.size() == 5,
         fmt("100 ASA steps on %s: %zu frozen checksums identical at %d/%d checks; theta_asa and phi %s",
             speaker.c_str(), start.size(), checks - mismatches, checks, moved ? "changed" : "DID NOT change"));
}

void criterion_step0(const Desk& desk, const std::string& speaker) {
  const SystemBundle& sv = desk.sv.at(speaker);
  asa::Adapter adapter(sv, models::init_discriminator(desk.cfg.discriminator, 7), desk.cfg.asa, desk.cfg.asa_lambda,
                       desk.cfg.asa_use_grl);
  const SystemBundle clone = adapter.adapted();
  auto ids = desk.data->ids(corpus::Role::kDysarthric, speaker);
  ids.resize(std::min<std::size_t>(ids.size(), 10));
  std::size_t identical = 0, compared = 0;
  for (const auto& id : ids) {
    const auto& u = desk.data->get(id);
    for (auto mode : {ReconstructionMode::kGG, ReconstructionMode::kGP, ReconstructionMode::kPP}) {
      ++compared;
      try {
        const Matrix a = reconstruct(sv, u, mode).mel, b = reconstruct(clone, u, mode).mel;
        identical += a.rows() == b.rows() && (a.array() == b.array()).all();
      } catch (const Error&) {
        // Both must fail alike; a PP decode that finds nothing is no mismatch.
        bool sv_fails = false, clone_fails = false;
        try { reconstruct(sv, u, mode); } catch (const Error&) { sv_fails = true; }
        try { reconstruct(clone, u, mode); } catch (const Error&) { clone_fails = true; }
        identical += sv_fails && clone_fails;
      }
    }
  }
  record(5, identical == compared && ids.size() == 10 && clone.label == SystemLabel::kAsaDsr,
         fmt("%zu utterances of %s x GG/GP/PP: %zu/%zu reconstructions bit-identical", ids.size(), speaker.c_str(),
             identical, compared));
}

struct Pooled {
  std::size_t n = 0, wins = 0;
  double sim_sv = 0, sim_asa = 0, per_sv = 0, per_asa = 0, per_raw = 0;

  void add(const eval::EvalReport& rep) {
    std::map<std::string, const eval::UtteranceScore*> sv, asa;
    for (const auto& s : rep.utterances) (s.system == "SV-DSR" ? sv : asa)[s.id] = &s;
    for (const auto& [id, a] : asa) {
      const auto* s = sv.at(id);
      ++n;
      wins += a->similarity > s->similarity;
      sim_sv += s->similarity;
      sim_asa += a->similarity;
      per_sv += s->per;
      per_asa += a->per;
      per_raw += s->per_input;
    }
  }
  double avg(double x) const { return x / static_cast<double>(std::max<std::size_t>(n, 1)); }
};

void run_desk(const fs::path& work, const std::string& profile, const std::set<int>& skip) {
  Desk desk;
  desk.cfg = profile_config(profile);
  const auto& cfg = desk.cfg;
  const fs::path dir = work / "desk";
  desk.data = make_corpus(cfg.corpus, dir / "corpus");
  const auto& data = *desk.data;
  info("%s corpus: %zu utterances", profile.c_str(), data.ids(std::nullopt).size());
  criterion_features(data);

  training::TrainReport r;
  desk.pretrained = pipeline::pretrain_speech_encoder(data, cfg, nullptr, &r);
  info("pretrain: loss ratio last/first %.3f (%.0fs); Phi_p PER on healthy test %.3f", loss_ratio(r.losses), r.seconds,
       decode_per(data, desk.pretrained, data.healthy_ids("test")));
  desk.prosody = pipeline::train_prosody(data, cfg, desk.pretrained);
  desk.speaker = pipeline::train_speaker_encoder(data, cfg, nullptr, &r);
  info("speaker encoder: GE2E ratio %.3f (%.0fs); EER on healthy test %.3f", loss_ratio(r.losses), r.seconds,
       eval::speaker_eer(data, desk.speaker, data.healthy_ids("test")));
  desk.generator = pipeline::train_generator(data, cfg, desk.pretrained, desk.speaker, nullptr, &r);
  const auto untrained = models::init_generator(cfg.generator, pipeline::init_seed(cfg.generator_training.seed, "generator"));
  info("generator: held-out healthy loss %.3f vs untrained %.3f (%.0fs)",
       training::mean_generation_loss(data, desk.generator, desk.pretrained, desk.speaker, data.healthy_ids("test")),
       training::mean_generation_loss(data, untrained, desk.pretrained, desk.speaker, data.healthy_ids("test")),
       r.seconds);

  const auto speakers = data.manifest().speakers(corpus::Role::kDysarthric);
  const std::string ref = data.manifest().prosody_reference();
  const auto ref_test = data.ids(corpus::Role::kProsodyReference, ref, "test");
  for (const auto& spk : speakers) {
    const ModelParams fine = pipeline::finetune_speech_encoder(data, cfg, desk.pretrained, spk);
    const auto test = data.ids(corpus::Role::kDysarthric, spk, "test");
    info("%s: PER Phi_p %.3f -> Phi_sd %.3f on held-out utterances", spk.c_str(),
         decode_per(data, desk.pretrained, test), decode_per(data, fine, test));
    desk.sv[spk] = SystemBundle{fine, desk.prosody.duration, desk.prosody.pitch, desk.speaker, desk.generator,
                                SystemLabel::kSvDsr};
  }
  info("prosody on held-out reference utterances: duration MAE %.3f frames, log-F0 RMSE %.4f",
       eval::duration_mae(data, desk.sv.begin()->second, ref_test), eval::pitch_rmse(data, desk.sv.begin()->second, ref_test));

  if (!skip.contains(4)) guarded(4, [&] { criterion_freezing(desk, speakers.front()); });
  if (!skip.contains(5)) guarded(5, [&] { criterion_step0(desk, speakers.front()); });
  if (skip.contains(7)) return;

  const auto recognizer = eval::Recognizer::train(data, data.healthy_ids("train"));
  {
    double per = 0;
    const auto ids = data.healthy_ids("test");
    for (const auto& id : ids) {
      const auto& u = data.get(id);
      per += eval::phoneme_error_rate(recognizer.recognize(u.mel80), recognizer.reference(u.labels));
    }
    info("recognition oracle: PER %.3f on healthy held-out speech", per / static_cast<double>(ids.size()));
  }
  Pooled pp, gp;
  std::vector<double> adapt_ratio;
  std::string per_speaker;
  for (const auto& spk : speakers) {
    training::ReportWriter log(dir / ("asa_" + spk + ".jsonl"), false);
    const auto a = pipeline::adapt(data, cfg, desk.sv.at(spk), spk, &log);
    adapt_ratio.push_back(a.final_adapt / a.initial_adapt);
    info("%s ASA: L_adapt %.3f -> %.3f (ratio %.3f), last f_sv %.3f f_asa %.3f (%.0fs)", spk.c_str(), a.initial_adapt,
         a.final_adapt, adapt_ratio.back(), a.report.columns.at("f_sv").back(), a.report.columns.at("f_asa").back(),
         a.report.seconds);
    const auto test = data.ids(corpus::Role::kDysarthric, spk, "test");
    for (auto mode : {ReconstructionMode::kPP, ReconstructionMode::kGP}) {
      eval::EvalOptions opt;
      opt.mode = mode;
      opt.discriminator = &a.discriminator;
      const auto rep = eval::evaluate(data, {{"SV-DSR", &desk.sv.at(spk)}, {"ASA-DSR", &a.adapted}}, spk, test,
                                      recognizer, opt);
      rep.write_jsonl(dir / ("eval_" + spk + "_" + to_string(mode) + ".jsonl"));
      Pooled one;
      one.add(rep);
      (mode == ReconstructionMode::kPP ? pp : gp).add(rep);
      info("%s %s: similarity SV %.3f ASA %.3f (ASA higher on %zu/%zu); PER SV %.3f ASA %.3f raw %.3f", spk.c_str(),
           to_string(mode).c_str(), one.avg(one.sim_sv), one.avg(one.sim_asa), one.wins, one.n, one.avg(one.per_sv),
           one.avg(one.per_asa), one.avg(one.per_raw));
    }
    per_speaker += fmt("%s%s %.3f", per_speaker.empty() ? "" : ", ", spk.c_str(), adapt_ratio.back());
  }
  info("GP pooled (informational): ASA higher on %zu/%zu, similarity SV %.3f ASA %.3f, PER SV %.3f ASA %.3f raw %.3f",
       gp.wins, gp.n, gp.avg(gp.sim_sv), gp.avg(gp.sim_asa), gp.avg(gp.per_sv), gp.avg(gp.per_asa), gp.avg(gp.per_raw));

  const double win_share = static_cast<double>(pp.wins) / static_cast<double>(pp.n);
  const bool a_ok = win_share >= 0.7 && pp.sim_asa > pp.sim_sv;
  const bool b_ok = std::abs(pp.avg(pp.per_asa) - pp.avg(pp.per_sv)) <= 0.05 && pp.per_sv < pp.per_raw &&
                    pp.per_asa < pp.per_raw;
  const bool c_ok = std::all_of(adapt_ratio.begin(), adapt_ratio.end(), [](double x) { return x < 0.5; });
  record(7, a_ok && b_ok && c_ok,
         fmt("PP over %zu held-out utterances: (a) %s ASA higher on %zu (%.0f%%), mean %.3f vs %.3f; "
             "(b) %s PER ASA %.3f SV %.3f raw %.3f; (c) %s L_adapt final/initial %s",
             pp.n, a_ok ? "ok" : "FAIL", pp.wins, 100 * win_share, pp.avg(pp.sim_asa), pp.avg(pp.sim_sv),
             b_ok ? "ok" : "FAIL", pp.avg(pp.per_asa), pp.avg(pp.per_sv), pp.avg(pp.per_raw), c_ok ? "ok" : "FAIL",
             per_speaker.c_str()));
}

const char* kTitles[] = {"",
                         "GRL exactness",
                         "loss-value oracles",
                         "gradient correctness",
                         "freezing invariant",
                         "step-0 equivalence",
                         "structural independence",
                         "toy pipeline direction",
                         "feature layer",
                         "persistence and determinism"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run of the reconstruction pipeline"};
  fs::path work = fs::temp_directory_path() / "dsr_acceptance";
  std::string profile = "desk";
  std::vector<int> allow_fail, skip;
  app.add_option("--work", work, "Directory for corpora, checkpoints and reports");
  app.add_option("--profile", profile, "Profile of the pipeline run")->check(CLI::IsMember(profile_names()));
  app.add_option("--allow-fail", allow_fail, "Criteria whose failure does not change the exit code");
  app.add_option("--skip", skip, "Criteria not to run (reported as skipped)");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> skipped(skip.begin(), skip.end());

  fs::create_directories(work);
  std::printf("acceptance: work directory %s, profile %s\n", work.string().c_str(), profile.c_str());
  if (!skipped.contains(1)) guarded(1, criterion_grl);
  if (!skipped.contains(2)) guarded(2, criterion_loss_oracles);
  if (!skipped.contains(3)) guarded(3, criterion_gradients);
  if (!skipped.contains(6)) guarded(6, criterion_structural_zero);
  if (!skipped.contains(9)) guarded(9, [&] { criterion_persistence(work); });
  const bool needs_desk = !skipped.contains(4) || !skipped.contains(5) || !skipped.contains(7) || !skipped.contains(8);
  if (needs_desk) {
    try {
      run_desk(work, profile, skipped);
    } catch (const std::exception& e) {
      for (int n : {4, 5, 7, 8})
        if (!skipped.contains(n) && !verdicts.contains(n)) record(n, false, std::string("pipeline raised: ") + e.what());
    }
  }

  std::printf("\n");
  int passed = 0, blocking = 0;
  for (int n = 1; n <= 9; ++n) {
    if (skipped.contains(n)) {
      std::printf("SKIP %d %s\n", n, kTitles[n]);
      continue;
    }
    const Verdict& v = verdicts[n];
    passed += v.pass;
    const bool tolerated = std::find(allow_fail.begin(), allow_fail.end(), n) != allow_fail.end();
    if (!v.pass && !tolerated) ++blocking;
    std::printf("%s %d %s: %s%s\n", v.pass ? "PASS" : "FAIL", n, kTitles[n], v.detail.c_str(),
                !v.pass && tolerated ? " [failure tolerated by --allow-fail]" : "");
  }
  std::printf("acceptance: %d/%zu criteria passed in %.0fs\n", passed, 9 - skipped.size(), elapsed());
  return blocking == 0 ? 0 : 1;
}
