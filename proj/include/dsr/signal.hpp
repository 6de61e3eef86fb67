#pragma once

// Deterministic audio analysis: framing, mel spectra, deltas, F0, feature
// normalisation and alignment ingestion. Everything here is a pure function
// of its arguments.

#include "dsr/core.hpp"
#include "dsr/phonemes.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dsr {

inline constexpr int kSampleRate = 16000;
inline constexpr double kMelEnergyFloor = 1e-10;
inline constexpr double kStdFloor = 1e-5;
inline constexpr double kF0MinHz = 60.0;
inline constexpr double kF0MaxHz = 400.0;
inline constexpr double kVoicingThreshold = 0.3;

struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = kSampleRate;

  Index size() const { return static_cast<Index>(samples.size()); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate_hz; }
};

struct FrameConfig {
  int fft_size = 400;
  int window_len = 400;
  int hop_len = 160;
  int n_mels = 80;

  static FrameConfig with_mels(int n_mels) {
    FrameConfig cfg;
    cfg.n_mels = n_mels;
    return cfg;
  }
  void validate() const;
};

/// Frames produced without edge padding: 1 + floor((n - window) / hop).
/// Throws Error("utterance too short") when n < window.
Index frame_count(Index n_samples, const FrameConfig& cfg);
/// Inverse of frame_count: the smallest sample count giving `frames` frames.
Index samples_for_frames(Index frames, const FrameConfig& cfg);

struct MelSpectrogram {
  Matrix values;  // frames x n_mels, natural-log energies
  FrameConfig config;

  Index frames() const { return values.rows(); }
  Index bins() const { return values.cols(); }
};

/// 40 log-mel + 40 delta + 40 delta-delta columns per frame.
struct FeatureMatrix {
  static constexpr Index kColumns = 120;
  Matrix values;

  Index frames() const { return values.rows(); }
};

struct F0Track {
  Vector log_f0;               // natural log Hz where voiced, 0 elsewhere
  std::vector<bool> voicing;

  Index frames() const { return log_f0.size(); }
  Index voiced_count() const;
};

struct NormStats {
  Vector mean;
  Vector std;

  Index dims() const { return mean.size(); }
};

struct AlignedPhoneme {
  int phoneme;
  int duration_frames;
};

struct PhonemeAlignment {
  std::vector<AlignedPhoneme> entries;

  Index total_frames() const;
  std::vector<int> phonemes() const;
  std::vector<int> durations() const;
};

class AlignmentError : public FormatError {
 public:
  enum class Kind { kEmpty, kUnknownSymbol, kBadDuration, kFrameMismatch, kMalformed };
  AlignmentError(Kind kind, const std::string& what) : FormatError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

Vector hann_window(int length);

/// Triangular filters on the HTK mel scale between fmin and fmax, each
/// scaled to unit area over frequency. Rows are filters, columns FFT bins.
template <typename Scalar = double>
MatrixX<Scalar> mel_filterbank(int n_mels, int fft_size, int sample_rate = kSampleRate,
                               double fmin = 0.0, double fmax = 8000.0) {
  auto hz_to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto mel_to_hz = [](double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); };
  const int bins = fft_size / 2 + 1;
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i)
    edges[static_cast<std::size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (n_mels + 1));

  MatrixX<Scalar> fb = MatrixX<Scalar>::Zero(n_mels, bins);
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m + 1)];
    const double right = edges[static_cast<std::size_t>(m + 2)];
    const double area_norm = 2.0 / (right - left);
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / fft_size;
      double w = 0.0;
      if (f > left && f <= center)
        w = (f - left) / (center - left);
      else if (f > center && f < right)
        w = (right - f) / (right - center);
      fb(m, k) = static_cast<Scalar>(w * area_norm);
    }
  }
  return fb;
}

/// Centre frequencies (Hz) of the filters built by mel_filterbank.
std::vector<double> mel_centers(int n_mels, double fmin = 0.0, double fmax = 8000.0);

/// Two-frame regression delta (x[t+1] - x[t-1]) / 2 with edge replication.
template <typename Derived>
MatrixX<typename Derived::Scalar> regression_delta(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Index t = x.rows();
  MatrixX<Scalar> d(t, x.cols());
  for (Index i = 0; i < t; ++i) {
    const Index next = std::min(i + 1, t - 1);
    const Index prev = std::max<Index>(i - 1, 0);
    d.row(i) = (x.row(next) - x.row(prev)) / Scalar(2);
  }
  return d;
}

/// Power spectrum |X|^2 of every Hann-windowed frame: frames x (fft/2+1).
Matrix power_spectrogram(const Waveform& wav, const FrameConfig& cfg);
MelSpectrogram mel_spectrogram(const Waveform& wav, const FrameConfig& cfg);
FeatureMatrix append_deltas(const MelSpectrogram& mel);

/// Normalised-autocorrelation pitch tracker, one value per analysis frame.
F0Track extract_f0(const Waveform& wav, const FrameConfig& cfg);
/// Truncates whichever of the two is longer so frame counts agree.
void reconcile_lengths(F0Track& f0, MelSpectrogram& mel);
/// Log-F0 with unvoiced gaps linearly interpolated and edges held;
/// `fallback` fills a track with no voiced frames.
Vector interpolate_log_f0(const F0Track& f0, double fallback);

/// Per-column mean and population standard deviation (floored at kStdFloor)
/// over the rows of every matrix in the collection.
NormStats compute_stats(std::span<const Matrix> features);
Matrix normalize(const Matrix& x, const NormStats& stats);
Matrix denormalize(const Matrix& x, const NormStats& stats);

/// Named NormStats blocks in a versioned text file.
using StatsTable = std::map<std::string, NormStats>;
void save_stats(const std::filesystem::path& path, const StatsTable& table);
StatsTable load_stats(const std::filesystem::path& path);

/// Parses "symbol<TAB>frames" lines. When expected_frames >= 0 the total must
/// match it.
PhonemeAlignment parse_alignment(const std::string& text, const PhonemeInventory& inventory,
                                 Index expected_frames = -1);
PhonemeAlignment load_alignment(const std::filesystem::path& path,
                                const PhonemeInventory& inventory, Index expected_frames = -1);
void save_alignment(const std::filesystem::path& path, const PhonemeAlignment& alignment,
                    const PhonemeInventory& inventory);

/// Mono 16-bit PCM.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& wav);

}  // namespace dsr
