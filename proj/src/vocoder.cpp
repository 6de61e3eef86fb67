#include "dsr/vocoder.hpp"

#include <unsupported/Eigen/FFT>

#include <complex>
#include <map>
#include <mutex>
#include <numbers>

namespace dsr {

namespace {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// (fb^T)^+ for a given band count, cached: the decomposition of an 80 x 201
// matrix is not free and vocoding calls it once per utterance.
const Matrix& pinv_filterbank(int n_mels, int fft_size) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, Matrix> cache;
  std::lock_guard lock(mu);
  auto key = std::make_pair(n_mels, fft_size);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const Matrix fbt = mel_filterbank(n_mels, fft_size).transpose();  // bins x mels
  return cache.emplace(key, Matrix(fbt.completeOrthogonalDecomposition().pseudoInverse())).first->second;
}

ComplexMatrix stft(const std::vector<double>& x, Index frames, const FrameConfig& cfg, const Vector& window) {
  Eigen::FFT<double> fft;
  const int bins = cfg.fft_size / 2 + 1;
  ComplexMatrix out(frames, bins);
  std::vector<double> buf(static_cast<std::size_t>(cfg.fft_size));
  std::vector<Complex> spec;
  for (Index t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const Index start = t * cfg.hop_len;
    for (int n = 0; n < cfg.window_len; ++n)
      buf[static_cast<std::size_t>(n)] = x[static_cast<std::size_t>(start + n)] * window(n);
    fft.fwd(spec, buf);
    for (int k = 0; k < bins; ++k) out(t, k) = spec[static_cast<std::size_t>(k)];
  }
  return out;
}

// Weighted overlap-add; the least-squares inverse of stft().
std::vector<double> istft(const ComplexMatrix& spec, const FrameConfig& cfg, const Vector& window) {
  Eigen::FFT<double> fft;
  const Index frames = spec.rows();
  const auto n = static_cast<std::size_t>(samples_for_frames(frames, cfg));
  std::vector<double> y(n, 0.0), norm(n, 0.0);
  std::vector<Complex> full(static_cast<std::size_t>(cfg.fft_size));
  std::vector<double> frame;
  const int bins = cfg.fft_size / 2 + 1;
  for (Index t = 0; t < frames; ++t) {
    for (int k = 0; k < bins; ++k) full[static_cast<std::size_t>(k)] = spec(t, k);
    for (int k = bins; k < cfg.fft_size; ++k)
      full[static_cast<std::size_t>(k)] = std::conj(full[static_cast<std::size_t>(cfg.fft_size - k)]);
    fft.inv(frame, full);
    const auto start = static_cast<std::size_t>(t * cfg.hop_len);
    for (int i = 0; i < cfg.window_len; ++i) {
      y[start + static_cast<std::size_t>(i)] += frame[static_cast<std::size_t>(i)] * window(i);
      norm[start + static_cast<std::size_t>(i)] += window(i) * window(i);
    }
  }
  for (std::size_t i = 0; i < n; ++i) y[i] = norm[i] > 1e-8 ? y[i] / norm[i] : 0.0;
  return y;
}

}  // namespace

Matrix mel_to_power(const Matrix& log_mel, const FrameConfig& cfg) {
  if (log_mel.cols() != cfg.n_mels)
    throw ShapeError("mel_to_power: expected " + std::to_string(cfg.n_mels) + " bands, got " +
                     std::to_string(log_mel.cols()));
  const Matrix energy = log_mel.array().exp().matrix();
  return (energy * pinv_filterbank(cfg.n_mels, cfg.fft_size)).cwiseMax(0.0);
}

Matrix remap_mel(const Matrix& log_mel, int to_bins) {
  const FrameConfig from = FrameConfig::with_mels(static_cast<int>(log_mel.cols()));
  const Matrix power = mel_to_power(log_mel, from);
  const Matrix fb = mel_filterbank(to_bins, from.fft_size);
  return (power * fb.transpose()).unaryExpr([](double e) { return std::log(std::max(e, kMelEnergyFloor)); });
}

Waveform griffin_lim(const Matrix& magnitude, const FrameConfig& cfg, const GriffinLimConfig& gl) {
  cfg.validate();
  if (magnitude.cols() != cfg.fft_size / 2 + 1) throw ShapeError("griffin_lim: wrong bin count");
  if (magnitude.rows() == 0) throw Error("griffin_lim: no frames");
  if (gl.iterations < 0) throw Error("griffin_lim: negative iteration count");
  const Vector window = hann_window(cfg.window_len);
  const Index frames = magnitude.rows();

  Rng rng(gl.seed);
  ComplexMatrix c(frames, magnitude.cols());
  for (Index t = 0; t < frames; ++t)
    for (Index k = 0; k < magnitude.cols(); ++k)
      c(t, k) = std::polar(magnitude(t, k), uniform(rng, -std::numbers::pi, std::numbers::pi));

  // Fast Griffin-Lim: t_n = P1(P2(c_{n-1})) with an inertial extrapolation.
  auto project_magnitude = [&](const ComplexMatrix& s) {
    ComplexMatrix out(s.rows(), s.cols());
    for (Index t = 0; t < s.rows(); ++t)
      for (Index k = 0; k < s.cols(); ++k) {
        const double a = std::abs(s(t, k));
        out(t, k) = a > 1e-12 ? s(t, k) * (magnitude(t, k) / a) : Complex(magnitude(t, k), 0.0);
      }
    return out;
  };
  ComplexMatrix prev = c;
  for (int i = 0; i < gl.iterations; ++i) {
    const ComplexMatrix consistent = stft(istft(c, cfg, window), frames, cfg, window);
    const ComplexMatrix next = project_magnitude(consistent);
    c = next + gl.momentum * (next - prev);
    prev = next;
  }
  Waveform wav;
  wav.samples = istft(project_magnitude(c), cfg, window);
  return wav;
}

Waveform vocode(const Matrix& log_mel80, const GriffinLimConfig& gl) {
  const FrameConfig cfg = FrameConfig::with_mels(80);
  const Matrix magnitude = mel_to_power(log_mel80, cfg).cwiseSqrt();
  Waveform wav = griffin_lim(magnitude, cfg, gl);
  double peak = 0.0;
  for (double s : wav.samples) peak = std::max(peak, std::abs(s));
  if (peak > 0.95)
    for (double& s : wav.samples) s *= 0.95 / peak;
  return wav;
}

double spectral_convergence(const Matrix& magnitude, const Waveform& wav, const FrameConfig& cfg) {
  const Matrix got = power_spectrogram(wav, cfg).cwiseSqrt();
  const Index frames = std::min(got.rows(), magnitude.rows());
  const double denom = magnitude.topRows(frames).norm();
  if (denom <= 0.0) throw Error("spectral_convergence: silent target");
  return (magnitude.topRows(frames) - got.topRows(frames)).norm() / denom;
}

}  // namespace dsr
