#pragma once

// The training recipe of a reconstruction system, stage by stage, as
// driven by a PipelineConfig. The CLI and the acceptance run both go
// through here.

#include "dsr/asa.hpp"
#include "dsr/config.hpp"
#include "dsr/training.hpp"

#include <string>
#include <utility>

namespace dsr::pipeline {

/// Initialisation seed for one network, derived from a stage seed.
std::uint64_t init_seed(std::uint64_t stage_seed, const std::string& network);

// Every trainer below accepts an optional Progress. When it holds
// parameters, training resumes from it and runs only the steps still
// missing to reach the stage's step count; either way it receives the
// final state, ready to be saved.

/// Phi_p on the healthy and reference training split.
ModelParams pretrain_speech_encoder(const data::Dataset& data, const PipelineConfig& cfg,
                                    training::ReportWriter* report = nullptr, training::TrainReport* out = nullptr,
                                    training::Progress* state = nullptr);
/// Phi_{s_d}: a copy of Phi_p trained on one dysarthric speaker's training split.
ModelParams finetune_speech_encoder(const data::Dataset& data, const PipelineConfig& cfg, const ModelParams& pretrained,
                                    const std::string& speaker, training::ReportWriter* report = nullptr,
                                    training::TrainReport* out = nullptr, training::Progress* state = nullptr);

struct Prosody {
  ModelParams duration;
  ModelParams pitch;
};
/// Both predictors on the prosody reference speaker's training split.
Prosody train_prosody(const data::Dataset& data, const PipelineConfig& cfg, const ModelParams& speech_encoder,
                      training::ReportWriter* report = nullptr, training::TrainReport* out = nullptr,
                      training::Progress* duration_state = nullptr, training::Progress* pitch_state = nullptr);

/// theta_s^sv with GE2E on the healthy and reference training split.
ModelParams train_speaker_encoder(const data::Dataset& data, const PipelineConfig& cfg,
                                  training::ReportWriter* report = nullptr, training::TrainReport* out = nullptr,
                                  training::Progress* state = nullptr);

/// theta_g on the healthy and reference training split.
ModelParams train_generator(const data::Dataset& data, const PipelineConfig& cfg, const ModelParams& speech_encoder,
                            const ModelParams& speaker_encoder, training::ReportWriter* report = nullptr,
                            training::TrainReport* out = nullptr, training::Progress* state = nullptr);

struct AsaResult {
  SystemBundle adapted;
  ModelParams discriminator;
  training::TrainReport report;
  double initial_adapt = 0.0;  // mean L_adapt over the adaptation set, before
  double final_adapt = 0.0;    // ... and after
};

/// ASA on the speaker's training split, starting from `sv`.
AsaResult adapt(const data::Dataset& data, const PipelineConfig& cfg, const SystemBundle& sv,
                const std::string& speaker, training::ReportWriter* report = nullptr);

}  // namespace dsr::pipeline
