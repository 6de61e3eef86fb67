#include "dsr/reconstruct.hpp"

namespace dsr {

std::string to_string(ReconstructionMode mode) {
  switch (mode) {
    case ReconstructionMode::kGG: return "GG";
    case ReconstructionMode::kGP: return "GP";
    case ReconstructionMode::kPP: return "PP";
  }
  throw Error("unknown reconstruction mode");
}

ReconstructionMode reconstruction_mode_from_string(const std::string& name) {
  if (name == "GG" || name == "gg") return ReconstructionMode::kGG;
  if (name == "GP" || name == "gp") return ReconstructionMode::kGP;
  if (name == "PP" || name == "pp") return ReconstructionMode::kPP;
  throw Error("unknown reconstruction mode '" + name + "' (expected GG, GP or PP)");
}

Reconstruction reconstruct(const SystemBundle& system, const data::Utterance& utt, ReconstructionMode mode) {
  using namespace models;
  Reconstruction r;
  if (mode == ReconstructionMode::kPP) {
    DecodedPhonemes dec = speech_encoder_decode(system.speech_encoder, utt.features);
    if (dec.ids.empty()) throw Error(utt.id + ": no phonemes decoded");
    r.phonemes = std::move(dec.ids);
    r.posteriors = std::move(dec.posteriors);
    r.durations = predict_durations(system.duration_predictor, r.posteriors);
  } else {
    if (utt.alignment.entries.empty())
      throw Error(utt.id + ": mode " + to_string(mode) + " needs a phoneme alignment");
    r.phonemes = utt.alignment.phonemes();
    r.durations = utt.alignment.durations();
    r.posteriors = speech_encoder_forced_posteriors(system.speech_encoder, utt.features, r.phonemes);
  }
  const Matrix expanded = expand_by_duration(r.posteriors, r.durations);
  if (mode == ReconstructionMode::kGG) {
    if (utt.pitch.size() != expanded.rows()) throw ShapeError(utt.id + ": pitch and alignment lengths differ");
    r.pitch = utt.pitch;
  } else {
    r.pitch = predict_pitch(system.pitch_predictor, expanded);
  }
  r.embedding = embed_speaker(system.speaker_encoder, utt.mel40);
  r.mel = generate(system.generator, expanded, r.pitch, r.embedding);
  return r;
}

Waveform render(const Matrix& normalized_mel80, const StatsTable& stats, const GriffinLimConfig& gl) {
  auto it = stats.find(data::kMel80Block);
  if (it == stats.end()) throw FormatError("stats lack the mel80 block");
  return vocode(denormalize(normalized_mel80, it->second), gl);
}

}  // namespace dsr
