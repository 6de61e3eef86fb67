#pragma once

// Mel-to-waveform conversion (pseudo-inverse filterbank + Griffin-Lim) and
// mel resolution changes through the linear spectrum.

#include "dsr/signal.hpp"

#include <cstdint>

namespace dsr {

struct GriffinLimConfig {
  int iterations = 60;
  double momentum = 0.99;
  std::uint64_t seed = 0;  // initial phase
};

/// Non-negative linear power spectrum (frames x fft/2+1) whose mel
/// projection approximates exp(log_mel) in the least-squares sense.
Matrix mel_to_power(const Matrix& log_mel, const FrameConfig& cfg);

/// Log-mel with `to_bins` bands computed from a log-mel with a different
/// band count.
Matrix remap_mel(const Matrix& log_mel, int to_bins);

/// Fast Griffin-Lim on a magnitude spectrogram (frames x fft/2+1). The
/// waveform has samples_for_frames(frames) samples.
Waveform griffin_lim(const Matrix& magnitude, const FrameConfig& cfg, const GriffinLimConfig& gl);

/// Unnormalised 80-bin log-mel to audio, peak-limited to 0.95.
Waveform vocode(const Matrix& log_mel80, const GriffinLimConfig& gl);

/// Spectral convergence ||S - |STFT(x)||| / ||S|| of a reconstruction.
double spectral_convergence(const Matrix& magnitude, const Waveform& wav, const FrameConfig& cfg);

}  // namespace dsr
