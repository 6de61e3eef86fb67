#pragma once

// Pipeline configuration: named profiles plus key = value overrides.
//
//   # comment
//   profile = desk
//   seed = 7
//   pretrain.steps = 500
//   generator.channels = 32
//
// Keys are applied in file order on top of the selected profile.

#include "dsr/corpus.hpp"
#include "dsr/models.hpp"
#include "dsr/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dsr {

struct StageConfig {
  std::string name;
  optim::OptimizerConfig optimizer;
  int batch_size = 8;
  long steps = 1;
  std::uint64_t seed = 1;
};

struct PipelineConfig {
  std::string profile = "desk";
  std::uint64_t seed = 1;
  corpus::ToyCorpusConfig corpus;

  models::SpeechEncoderConfig speech_encoder;
  models::PredictorConfig predictor;
  models::SpeakerEncoderConfig speaker_encoder;
  models::GeneratorConfig generator;
  models::DiscriminatorConfig discriminator;

  StageConfig pretrain;
  StageConfig finetune;
  StageConfig prosody;
  StageConfig speaker;
  StageConfig generator_training;
  StageConfig asa;

  int ge2e_speakers = 4;
  int ge2e_utterances = 4;
  int speaker_crop = 48;  // frames per GE2E training utterance
  double asa_lambda = 1.0;
  bool asa_use_grl = true;
  int griffin_lim_iterations = 60;
  double griffin_lim_momentum = 0.99;

  /// Throws Error when a value is out of range.
  void validate() const;
  /// All settings as key = value lines, loadable by apply_config_text.
  std::string to_text() const;
};

/// "desk" (default), "paper" or "tiny".
PipelineConfig profile_config(const std::string& name);
std::vector<std::string> profile_names();

/// Applies one setting. Unknown keys and malformed values throw Error.
void apply_setting(PipelineConfig& cfg, const std::string& key, const std::string& value);
/// Parses the key = value text. A leading `profile` key resets to that profile.
void apply_config_text(PipelineConfig& cfg, const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path, const std::string& profile = "");

}  // namespace dsr
