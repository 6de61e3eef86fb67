// Command-line driver: one subcommand per pipeline stage.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include "dsr/asa.hpp"
#include "dsr/config.hpp"
#include "dsr/eval.hpp"
#include "dsr/pipeline.hpp"
#include "dsr/reconstruct.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace dsr;

namespace {

struct Globals {
  std::string profile;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> settings;
};

PipelineConfig resolve_config(const Globals& g) {
  PipelineConfig cfg = g.config.empty() ? profile_config(g.profile.empty() ? "desk" : g.profile)
                                        : load_config(g.config, g.profile);
  if (g.seed) apply_setting(cfg, "seed", std::to_string(*g.seed));
  for (const auto& s : g.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string x) {
      x.erase(0, x.find_first_not_of(" \t"));
      x.erase(x.find_last_not_of(" \t") + 1);
      return x;
    };
    apply_setting(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

void log(const std::string& msg) { std::cerr << "dsr: " << msg << std::endl; }

struct CorpusArgs {
  std::string dir = "corpus";
  std::string stats;  // defaults to <dir>/stats.txt

  fs::path manifest() const { return fs::path(dir) / "manifest.tsv"; }
  fs::path stats_path() const { return stats.empty() ? fs::path(dir) / "stats.txt" : fs::path(stats); }
  data::Dataset open(const PipelineConfig& cfg) const {
    if (!fs::exists(stats_path()))
      throw IoError(stats_path().string() + " not found (run `dsr features` first)");
    return data::Dataset::open(manifest(), stats_path(), cfg.corpus.phoneme_inventory_size);
  }
};

void add_corpus(CLI::App* cmd, CorpusArgs& c) {
  cmd->add_option("--corpus", c.dir, "Corpus directory holding manifest.tsv")->capture_default_str();
  cmd->add_option("--stats", c.stats, "Normalisation statistics (default <corpus>/stats.txt)");
}

struct TrainArgs {
  std::string out;
  std::string report;
  std::string progress;
};

void add_train(CLI::App* cmd, TrainArgs& t) {
  cmd->add_option("--out", t.out, "Output parameter file")->required();
  cmd->add_option("--report", t.report, "Append per-step losses as JSON lines");
  cmd->add_option("--progress", t.progress, "Resume from / save training state to this file");
}

std::optional<training::ReportWriter> open_report(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return std::make_optional<training::ReportWriter>(path);
}

training::Progress load_state(const std::string& path) {
  if (path.empty() || !fs::exists(path)) return {};
  log("resuming from " + path);
  return training::load_progress(path);
}

void save_state(const std::string& path, const training::Progress& p) {
  if (!path.empty()) training::save_progress(path, p);
}

void summarize(const training::TrainReport& r) {
  if (r.losses.empty()) {
    log(r.stage + ": nothing left to train");
    return;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: %zu steps, loss %.4f -> %.4f, %.1fs", r.stage.c_str(), r.losses.size(),
                r.losses.front(), r.losses.back(), r.seconds);
  log(buf);
}

ModelParams require_params(const std::string& path, ModuleTag tag, const std::string& what) {
  if (path.empty() || !fs::exists(path)) throw IoError(what + " '" + path + "' not found");
  return load_params(path, tag);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dysarthric speech reconstruction with adversarial speaker adaptation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--profile", g.profile, "Configuration profile: desk, paper or tiny");
  app.add_option("--config", g.config, "key = value configuration file");
  app.add_option("--seed", g.seed, "Master seed (overrides every stage seed)");
  app.add_option("--set", g.settings, "Override one setting, key=value (repeatable)");

  CorpusArgs corpus_args;
  TrainArgs train_args;

  auto* gen_corpus = app.add_subcommand("gen-corpus", "Synthesise the toy corpus");
  std::string corpus_out = "corpus";
  gen_corpus->add_option("--out", corpus_out, "Output directory")->capture_default_str();

  auto* features = app.add_subcommand("features", "Compute normalisation statistics");
  add_corpus(features, corpus_args);

  auto* train_se = app.add_subcommand("train-se", "Pretrain the speech encoder");
  add_corpus(train_se, corpus_args);
  add_train(train_se, train_args);

  auto* finetune_se = app.add_subcommand("finetune-se", "Fine-tune the speech encoder on one dysarthric speaker");
  add_corpus(finetune_se, corpus_args);
  add_train(finetune_se, train_args);
  std::string se_path, speaker;
  finetune_se->add_option("--init", se_path, "Pretrained speech encoder")->required();
  finetune_se->add_option("--speaker", speaker, "Dysarthric speaker id")->required();

  auto* train_prosody = app.add_subcommand("train-prosody", "Train the duration and pitch predictors");
  add_corpus(train_prosody, corpus_args);
  std::string duration_out, pitch_out, report_path;
  train_prosody->add_option("--se", se_path, "Pretrained speech encoder")->required();
  train_prosody->add_option("--out-duration", duration_out, "Duration predictor output")->required();
  train_prosody->add_option("--out-pitch", pitch_out, "Pitch predictor output")->required();
  train_prosody->add_option("--report", report_path, "Append per-step losses as JSON lines");

  auto* train_spk = app.add_subcommand("train-spk", "Train the speaker encoder (GE2E)");
  add_corpus(train_spk, corpus_args);
  add_train(train_spk, train_args);

  auto* train_gen = app.add_subcommand("train-gen", "Train the speech generator; optionally assemble SV-DSR bundles");
  add_corpus(train_gen, corpus_args);
  add_train(train_gen, train_args);
  std::string spk_path, duration_in, pitch_in, bundle_dir = ".";
  std::vector<std::string> systems;
  train_gen->add_option("--se", se_path, "Pretrained speech encoder")->required();
  train_gen->add_option("--spk", spk_path, "Speaker encoder")->required();
  train_gen->add_option("--duration", duration_in, "Duration predictor, for bundle assembly");
  train_gen->add_option("--pitch", pitch_in, "Pitch predictor, for bundle assembly");
  train_gen->add_option("--system", systems, "SPEAKER=finetuned_se: write sv_dsr_SPEAKER.bundle (repeatable)");
  train_gen->add_option("--bundle-dir", bundle_dir, "Where assembled bundles go")->capture_default_str();

  auto* adapt_asa = app.add_subcommand("adapt-asa", "Adversarial speaker adaptation of an SV-DSR system");
  add_corpus(adapt_asa, corpus_args);
  std::string sv_path, asa_out, disc_out;
  adapt_asa->add_option("--sv", sv_path, "SV-DSR bundle")->required();
  adapt_asa->add_option("--speaker", speaker, "Dysarthric speaker id")->required();
  adapt_asa->add_option("--out", asa_out, "ASA-DSR bundle output")->required();
  adapt_asa->add_option("--disc-out", disc_out, "Discriminator output");
  adapt_asa->add_option("--report", report_path, "Append per-step losses as JSON lines");

  auto* recon = app.add_subcommand("reconstruct", "Reconstruct one utterance");
  std::string system_path, wav_in, align_in, wav_out, mode_name = "PP", stats_in;
  recon->add_option("--system", system_path, "System bundle (SV-DSR or ASA-DSR)")->required();
  recon->add_option("--stats", stats_in, "Normalisation statistics")->required();
  recon->add_option("--wav", wav_in, "Input waveform")->required();
  recon->add_option("--alignment", align_in, "Phoneme alignment (needed for GG and GP)");
  recon->add_option("--mode", mode_name, "GG, GP or PP")->capture_default_str();
  recon->add_option("--out", wav_out, "Output waveform")->required();

  auto* evaluate = app.add_subcommand("eval", "Score SV-DSR and/or ASA-DSR on held-out dysarthric speech");
  add_corpus(evaluate, corpus_args);
  std::string which = "both", asa_path, eval_out, disc_in;
  evaluate->add_option("--system", which, "sv, asa or both")->capture_default_str()->check(
      CLI::IsMember({"sv", "asa", "both"}));
  evaluate->add_option("--sv", sv_path, "SV-DSR bundle");
  evaluate->add_option("--asa", asa_path, "ASA-DSR bundle");
  evaluate->add_option("--speaker", speaker, "Dysarthric speaker id")->required();
  evaluate->add_option("--mode", mode_name, "GG, GP or PP")->capture_default_str();
  evaluate->add_option("--disc", disc_in, "Discriminator, adds mean f_d");
  evaluate->add_option("--out", eval_out, "Write line-delimited records here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const PipelineConfig cfg = resolve_config(g);

    if (*gen_corpus) {
      const corpus::Manifest m = corpus::synthesize_toy_corpus(cfg.corpus, corpus_out);
      log("wrote " + std::to_string(m.entries.size()) + " utterances to " + corpus_out);
    } else if (*features) {
      const corpus::Manifest m = corpus::load_manifest(corpus_args.manifest());
      save_stats(corpus_args.stats_path(), data::corpus_stats(m));
      log("wrote " + corpus_args.stats_path().string());
    } else if (*train_se) {
      const data::Dataset ds = corpus_args.open(cfg);
      auto report = open_report(train_args.report);
      training::Progress state = load_state(train_args.progress);
      training::TrainReport r;
      save_params(train_args.out,
                  pipeline::pretrain_speech_encoder(ds, cfg, report ? &*report : nullptr, &r, &state));
      save_state(train_args.progress, state);
      summarize(r);
    } else if (*finetune_se) {
      const data::Dataset ds = corpus_args.open(cfg);
      const ModelParams se = require_params(se_path, ModuleTag::kSpeechEncoder, "speech encoder");
      auto report = open_report(train_args.report);
      training::Progress state = load_state(train_args.progress);
      training::TrainReport r;
      save_params(train_args.out,
                  pipeline::finetune_speech_encoder(ds, cfg, se, speaker, report ? &*report : nullptr, &r, &state));
      save_state(train_args.progress, state);
      summarize(r);
    } else if (*train_prosody) {
      const data::Dataset ds = corpus_args.open(cfg);
      const ModelParams se = require_params(se_path, ModuleTag::kSpeechEncoder, "speech encoder");
      auto report = open_report(report_path);
      training::TrainReport r;
      const auto p = pipeline::train_prosody(ds, cfg, se, report ? &*report : nullptr, &r);
      save_params(duration_out, p.duration);
      save_params(pitch_out, p.pitch);
      summarize(r);
      const auto held_out = ds.ids(corpus::Role::kProsodyReference, "", "test");
      if (!held_out.empty()) {
        const SystemBundle probe{se, p.duration, p.pitch, {}, {}};
        char buf[128];
        std::snprintf(buf, sizeof buf, "held-out duration MAE %.3f frames, log-F0 RMSE %.4f",
                      eval::duration_mae(ds, probe, held_out), eval::pitch_rmse(ds, probe, held_out));
        log(buf);
      }
    } else if (*train_spk) {
      const data::Dataset ds = corpus_args.open(cfg);
      auto report = open_report(train_args.report);
      training::Progress state = load_state(train_args.progress);
      training::TrainReport r;
      const ModelParams spk = pipeline::train_speaker_encoder(ds, cfg, report ? &*report : nullptr, &r, &state);
      save_params(train_args.out, spk);
      save_state(train_args.progress, state);
      summarize(r);
      log("held-out EER " + std::to_string(eval::speaker_eer(ds, spk, ds.healthy_ids("test"))));
    } else if (*train_gen) {
      const data::Dataset ds = corpus_args.open(cfg);
      const ModelParams se = require_params(se_path, ModuleTag::kSpeechEncoder, "speech encoder");
      const ModelParams spk = require_params(spk_path, ModuleTag::kSpeakerEncoder, "speaker encoder");
      auto report = open_report(train_args.report);
      training::Progress state = load_state(train_args.progress);
      training::TrainReport r;
      const ModelParams gen =
          pipeline::train_generator(ds, cfg, se, spk, report ? &*report : nullptr, &r, &state);
      save_params(train_args.out, gen);
      save_state(train_args.progress, state);
      summarize(r);
      if (!systems.empty()) {
        const ModelParams dur = require_params(duration_in, ModuleTag::kDurationPredictor, "duration predictor");
        const ModelParams pitch = require_params(pitch_in, ModuleTag::kPitchPredictor, "pitch predictor");
        fs::create_directories(bundle_dir);
        for (const auto& s : systems) {
          const auto eq = s.find('=');
          if (eq == std::string::npos) throw Error("--system expects SPEAKER=path, got '" + s + "'");
          const std::string spk_id = s.substr(0, eq);
          const SystemBundle b{require_params(s.substr(eq + 1), ModuleTag::kSpeechEncoder, "speech encoder"), dur,
                               pitch, spk, gen, SystemLabel::kSvDsr};
          const fs::path out = fs::path(bundle_dir) / ("sv_dsr_" + spk_id + ".bundle");
          save_bundle(out, b);
          log("wrote " + out.string());
        }
      }
    } else if (*adapt_asa) {
      if (!fs::exists(sv_path)) {
        std::cerr << "dsr: adapt-asa needs a trained SV-DSR bundle; '" << sv_path << "' does not exist\n";
        return 1;
      }
      const SystemBundle sv = load_bundle(sv_path);
      if (sv.label != SystemLabel::kSvDsr) throw Error(sv_path + " is not an SV-DSR bundle");
      const data::Dataset ds = corpus_args.open(cfg);
      auto report = open_report(report_path);
      const pipeline::AsaResult r = pipeline::adapt(ds, cfg, sv, speaker, report ? &*report : nullptr);
      save_bundle(asa_out, r.adapted);
      if (!disc_out.empty()) save_params(disc_out, r.discriminator);
      summarize(r.report);
      char buf[128];
      std::snprintf(buf, sizeof buf, "L_adapt over the adaptation set %.4f -> %.4f", r.initial_adapt,
                    r.final_adapt);
      log(buf);
    } else if (*recon) {
      const SystemBundle system = load_bundle(system_path);
      const StatsTable stats = load_stats(stats_in);
      const Waveform wav = read_wav(wav_in);
      data::Utterance u = data::from_waveform(wav, stats, fs::path(wav_in).stem().string());
      if (!align_in.empty()) {
        const PhonemeInventory inv = corpus::toy_inventory(static_cast<int>(system.speech_encoder.hyper_at("phonemes")));
        u.alignment = load_alignment(align_in, inv, u.frames());
        u.labels = u.alignment.phonemes();
      }
      const Reconstruction r = reconstruct(system, u, reconstruction_mode_from_string(mode_name));
      write_wav(wav_out, render(r.mel, stats, {cfg.griffin_lim_iterations, cfg.griffin_lim_momentum, cfg.seed}));
      log("wrote " + wav_out + " (" + std::to_string(r.mel.rows()) + " frames, " + to_string(system.label) + ")");
    } else if (*evaluate) {
      const data::Dataset ds = corpus_args.open(cfg);
      std::vector<SystemBundle> owned;
      owned.reserve(2);
      std::vector<std::pair<std::string, const SystemBundle*>> list;
      if (which != "asa") {
        if (sv_path.empty()) throw Error("eval --system " + which + " needs --sv");
        owned.push_back(load_bundle(sv_path));
        list.emplace_back("SV-DSR", &owned.back());
      }
      if (which != "sv") {
        if (asa_path.empty()) throw Error("eval --system " + which + " needs --asa");
        owned.push_back(load_bundle(asa_path));
        list.emplace_back("ASA-DSR", &owned.back());
      }
      std::optional<ModelParams> disc;
      if (!disc_in.empty()) disc = require_params(disc_in, ModuleTag::kDiscriminator, "discriminator");
      eval::EvalOptions opt;
      opt.mode = reconstruction_mode_from_string(mode_name);
      opt.discriminator = disc ? &*disc : nullptr;
      const eval::Recognizer rec = eval::Recognizer::train(ds, ds.healthy_ids("train"));
      const auto ids = ds.ids(corpus::Role::kDysarthric, speaker, "test");
      if (ids.empty()) throw Error("no held-out utterances for speaker '" + speaker + "'");
      eval::EvalReport report = eval::evaluate(ds, list, speaker, ids, rec, opt);
      const auto ref_test = ds.ids(corpus::Role::kProsodyReference, "", "test");
      if (!ref_test.empty()) {
        report.extra["duration_mae_frames"] = eval::duration_mae(ds, *list.front().second, ref_test);
        report.extra["log_f0_rmse"] = eval::pitch_rmse(ds, *list.front().second, ref_test);
      }
      report.extra["speaker_eer"] = eval::speaker_eer(ds, list.front().second->speaker_encoder, ds.healthy_ids("test"));
      std::cout << report.table();
      if (!eval_out.empty()) report.write_jsonl(eval_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "dsr: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
