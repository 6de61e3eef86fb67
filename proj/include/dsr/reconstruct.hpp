#pragma once

// Inference through a reconstruction system.
//
//   GG  alignment durations, the input's own F0
//   GP  alignment durations, predicted F0
//   PP  greedy phoneme decoding, predicted durations and F0
//
// GG and GP need an alignment; PP only needs the audio.

#include "dsr/data.hpp"
#include "dsr/models.hpp"
#include "dsr/vocoder.hpp"

#include <string>
#include <vector>

namespace dsr {

enum class ReconstructionMode { kGG, kGP, kPP };
std::string to_string(ReconstructionMode mode);
ReconstructionMode reconstruction_mode_from_string(const std::string& name);

struct Reconstruction {
  std::vector<int> phonemes;
  std::vector<int> durations;
  Matrix posteriors;   // one row per phoneme
  Vector pitch;        // normalised log-F0 fed to the generator
  RowVector embedding;
  Matrix mel;          // normalised 80-bin
};

/// Throws Error when GG/GP is asked for on an utterance without alignment,
/// or when PP decodes nothing.
Reconstruction reconstruct(const SystemBundle& system, const data::Utterance& utt, ReconstructionMode mode);

/// Normalised 80-bin mel to waveform.
Waveform render(const Matrix& normalized_mel80, const StatsTable& stats, const GriffinLimConfig& gl);

}  // namespace dsr
