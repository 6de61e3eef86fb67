#include "dsr/pipeline.hpp"

namespace dsr::pipeline {

namespace {

void keep(training::TrainReport* out, training::TrainReport r) {
  if (out) *out = std::move(r);
}

std::vector<std::string> reference_train_ids(const data::Dataset& data) {
  const auto ref = data.manifest().prosody_reference();
  return data.ids(corpus::Role::kProsodyReference, ref, "train");
}

// Resumes from `state` when it carries parameters, else starts from `init`.
training::Progress begin(const training::Progress* state, ModelParams init, const StageConfig& stage) {
  if (state && !state->params.tensors.empty()) {
    if (state->params.tag != init.tag)
      throw Error(stage.name + ": resume state holds " + to_string(state->params.tag) + " parameters");
    return *state;
  }
  return training::start(std::move(init), stage);
}

long remaining(const training::Progress& p, const StageConfig& stage) {
  return std::max(0L, stage.steps - p.step());
}

ModelParams finish(training::Progress& p, training::Progress* state) {
  if (state) *state = p;
  return std::move(p.params);
}

}  // namespace

std::uint64_t init_seed(std::uint64_t stage_seed, const std::string& network) {
  Rng rng = derive_rng(stage_seed, stream_id("init/" + network), 0);
  return rng();
}

ModelParams pretrain_speech_encoder(const data::Dataset& data, const PipelineConfig& cfg,
                                    training::ReportWriter* report, training::TrainReport* out,
                                    training::Progress* state) {
  training::Progress prog = begin(
      state, models::init_speech_encoder(cfg.speech_encoder, init_seed(cfg.pretrain.seed, "speech_encoder")),
      cfg.pretrain);
  keep(out, training::pretrain_speech_encoder({data, cfg.pretrain, report}, prog, remaining(prog, cfg.pretrain)));
  return finish(prog, state);
}

ModelParams finetune_speech_encoder(const data::Dataset& data, const PipelineConfig& cfg, const ModelParams& pretrained,
                                    const std::string& speaker, training::ReportWriter* report,
                                    training::TrainReport* out, training::Progress* state) {
  const auto ids = data.ids(corpus::Role::kDysarthric, speaker, "train");
  if (ids.empty()) throw Error("no dysarthric training utterances for speaker '" + speaker + "'");
  StageConfig stage = cfg.finetune;
  stage.name = cfg.finetune.name + "/" + speaker;
  training::Progress prog = begin(state, pretrained, stage);
  keep(out, training::finetune_speech_encoder({data, stage, report}, ids, prog, remaining(prog, stage)));
  return finish(prog, state);
}

Prosody train_prosody(const data::Dataset& data, const PipelineConfig& cfg, const ModelParams& speech_encoder,
                      training::ReportWriter* report, training::TrainReport* out, training::Progress* duration_state,
                      training::Progress* pitch_state) {
  const auto ids = reference_train_ids(data);
  StageConfig dur = cfg.prosody, pitch = cfg.prosody;
  dur.name += "/duration";
  pitch.name += "/pitch";
  training::Progress d =
      begin(duration_state, models::init_duration_predictor(cfg.predictor, init_seed(cfg.prosody.seed, "duration")),
            dur);
  training::Progress p =
      begin(pitch_state, models::init_pitch_predictor(cfg.predictor, init_seed(cfg.prosody.seed, "pitch")), pitch);
  const training::TrainReport rd =
      training::train_duration_predictor({data, dur, report}, speech_encoder, ids, d, remaining(d, dur));
  const training::TrainReport rp =
      training::train_pitch_predictor({data, pitch, report}, speech_encoder, ids, p, remaining(p, pitch));
  if (out) {
    // One report with both traces; the primary trace is their sum.
    out->stage = cfg.prosody.name;
    out->columns = {{"duration", rd.losses}, {"pitch", rp.losses}};
    out->losses.clear();
    const std::size_t n = std::max(rd.losses.size(), rp.losses.size());
    for (std::size_t i = 0; i < n; ++i)
      out->losses.push_back((i < rd.losses.size() ? rd.losses[i] : 0.0) + (i < rp.losses.size() ? rp.losses[i] : 0.0));
    out->seconds = rd.seconds + rp.seconds;
  }
  return {finish(d, duration_state), finish(p, pitch_state)};
}

ModelParams train_speaker_encoder(const data::Dataset& data, const PipelineConfig& cfg, training::ReportWriter* report,
                                  training::TrainReport* out, training::Progress* state) {
  training::Progress prog = begin(
      state, models::init_speaker_encoder(cfg.speaker_encoder, init_seed(cfg.speaker.seed, "speaker_encoder")),
      cfg.speaker);
  const training::Ge2eBatching batching{cfg.ge2e_speakers, cfg.ge2e_utterances, cfg.speaker_crop};
  keep(out, training::train_speaker_encoder({data, cfg.speaker, report}, data.healthy_ids("train"), batching, prog,
                                            remaining(prog, cfg.speaker)));
  return finish(prog, state);
}

ModelParams train_generator(const data::Dataset& data, const PipelineConfig& cfg, const ModelParams& speech_encoder,
                            const ModelParams& speaker_encoder, training::ReportWriter* report,
                            training::TrainReport* out, training::Progress* state) {
  training::Progress prog =
      begin(state, models::init_generator(cfg.generator, init_seed(cfg.generator_training.seed, "generator")),
            cfg.generator_training);
  keep(out, training::train_generator({data, cfg.generator_training, report}, speech_encoder, speaker_encoder,
                                      data.healthy_ids("train"), prog, remaining(prog, cfg.generator_training)));
  return finish(prog, state);
}

AsaResult adapt(const data::Dataset& data, const PipelineConfig& cfg, const SystemBundle& sv,
                const std::string& speaker, training::ReportWriter* report) {
  const auto ids = data.ids(corpus::Role::kDysarthric, speaker, "train");
  if (ids.empty()) throw Error("no dysarthric training utterances for speaker '" + speaker + "'");
  const auto samples = asa::prepare_adaptation_set(data, ids, sv);
  StageConfig stage = cfg.asa;
  stage.name = cfg.asa.name + "/" + speaker;
  asa::Adapter adapter(sv, models::init_discriminator(cfg.discriminator, init_seed(cfg.asa.seed, "discriminator")),
                       stage, cfg.asa_lambda, cfg.asa_use_grl);
  AsaResult r;
  r.initial_adapt = asa::mean_adaptation_loss(samples, adapter.frozen(), adapter.speaker());
  r.report = adapter.run(samples, stage.steps, report);
  r.final_adapt = asa::mean_adaptation_loss(samples, adapter.frozen(), adapter.speaker());
  r.adapted = adapter.adapted();
  r.discriminator = adapter.discriminator();
  return r;
}

}  // namespace dsr::pipeline
