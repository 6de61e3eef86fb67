#include "dsr/signal.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <charconv>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dsr {

void FrameConfig::validate() const {
  if (fft_size <= 0 || window_len <= 0 || hop_len <= 0 || n_mels <= 0)
    throw Error("frame config: all sizes must be positive");
  if (!(hop_len <= window_len && window_len <= fft_size))
    throw Error("frame config: requires hop_len <= window_len <= fft_size");
}

Index frame_count(Index n_samples, const FrameConfig& cfg) {
  if (n_samples < cfg.window_len) throw Error("utterance too short");
  return 1 + (n_samples - cfg.window_len) / cfg.hop_len;
}

Index samples_for_frames(Index frames, const FrameConfig& cfg) {
  if (frames < 1) throw Error("frame count must be positive");
  return (frames - 1) * cfg.hop_len + cfg.window_len;
}

Index F0Track::voiced_count() const {
  return static_cast<Index>(std::count(voicing.begin(), voicing.end(), true));
}

Index PhonemeAlignment::total_frames() const {
  Index total = 0;
  for (const auto& e : entries) total += e.duration_frames;
  return total;
}

std::vector<int> PhonemeAlignment::phonemes() const {
  std::vector<int> out;
  for (const auto& e : entries) out.push_back(e.phoneme);
  return out;
}

std::vector<int> PhonemeAlignment::durations() const {
  std::vector<int> out;
  for (const auto& e : entries) out.push_back(e.duration_frames);
  return out;
}

Vector hann_window(int length) {
  Vector w(length);
  for (int n = 0; n < length; ++n)
    w(n) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length);
  return w;
}

std::vector<double> mel_centers(int n_mels, double fmin, double fmax) {
  auto hz_to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> centers;
  for (int m = 1; m <= n_mels; ++m)
    centers.push_back(700.0 * (std::pow(10.0, (lo + (hi - lo) * m / (n_mels + 1)) / 2595.0) - 1.0));
  return centers;
}

Matrix power_spectrogram(const Waveform& wav, const FrameConfig& cfg) {
  cfg.validate();
  if (wav.samples.empty()) throw Error("utterance too short");
  const Index frames = frame_count(wav.size(), cfg);
  const int bins = cfg.fft_size / 2 + 1;
  const Vector window = hann_window(cfg.window_len);
  Eigen::FFT<double> fft;
  std::vector<double> buf(static_cast<std::size_t>(cfg.fft_size));
  std::vector<std::complex<double>> spec;
  Matrix power(frames, bins);
  for (Index t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const Index start = t * cfg.hop_len;
    for (int n = 0; n < cfg.window_len; ++n)
      buf[static_cast<std::size_t>(n)] = wav.samples[static_cast<std::size_t>(start + n)] * window(n);
    fft.fwd(spec, buf);
    for (int k = 0; k < bins; ++k) power(t, k) = std::norm(spec[static_cast<std::size_t>(k)]);
  }
  return power;
}

MelSpectrogram mel_spectrogram(const Waveform& wav, const FrameConfig& cfg) {
  const Matrix power = power_spectrogram(wav, cfg);
  const Matrix fb = mel_filterbank(cfg.n_mels, cfg.fft_size, wav.sample_rate_hz);
  MelSpectrogram mel;
  mel.config = cfg;
  mel.values = (power * fb.transpose()).unaryExpr([](double e) {
    return std::log(std::max(e, kMelEnergyFloor));
  });
  return mel;
}

FeatureMatrix append_deltas(const MelSpectrogram& mel) {
  if (mel.bins() != 40)
    throw ShapeError("append_deltas: expected 40 mel bins, got " + std::to_string(mel.bins()));
  const Matrix delta = regression_delta(mel.values);
  const Matrix delta2 = regression_delta(delta);
  FeatureMatrix out;
  out.values.resize(mel.frames(), FeatureMatrix::kColumns);
  out.values << mel.values, delta, delta2;
  return out;
}

F0Track extract_f0(const Waveform& wav, const FrameConfig& cfg) {
  cfg.validate();
  const Index frames = frame_count(wav.size(), cfg);
  const int min_lag = static_cast<int>(std::floor(wav.sample_rate_hz / kF0MaxHz));
  const int max_lag = std::min(static_cast<int>(std::ceil(wav.sample_rate_hz / kF0MinHz)),
                               cfg.window_len - 2);
  F0Track track;
  track.log_f0 = Vector::Zero(frames);
  track.voicing.assign(static_cast<std::size_t>(frames), false);
  std::vector<double> x(static_cast<std::size_t>(cfg.window_len));
  std::vector<double> r(static_cast<std::size_t>(max_lag + 2), 0.0);
  for (Index t = 0; t < frames; ++t) {
    const Index start = t * cfg.hop_len;
    double m = 0.0;
    for (int n = 0; n < cfg.window_len; ++n) {
      x[static_cast<std::size_t>(n)] = wav.samples[static_cast<std::size_t>(start + n)];
      m += x[static_cast<std::size_t>(n)];
    }
    m /= cfg.window_len;
    double energy = 0.0;
    for (auto& v : x) {
      v -= m;
      energy += v * v;
    }
    if (energy < 1e-10 * cfg.window_len) continue;

    // Normalised cross-correlation of the frame with its lagged copy.
    double best = -1.0;
    for (int lag = min_lag - 1; lag <= max_lag + 1; ++lag) {
      double xy = 0.0, xx = 0.0, yy = 0.0;
      for (int n = 0; n + lag < cfg.window_len; ++n) {
        const double a = x[static_cast<std::size_t>(n)];
        const double b = x[static_cast<std::size_t>(n + lag)];
        xy += a * b;
        xx += a * a;
        yy += b * b;
      }
      const double denom = std::sqrt(xx * yy);
      r[static_cast<std::size_t>(lag)] = denom > 0 ? xy / denom : 0.0;
      if (lag >= min_lag && lag <= max_lag) best = std::max(best, r[static_cast<std::size_t>(lag)]);
    }
    if (best <= kVoicingThreshold) continue;

    // Shortest-lag local peak close to the global maximum avoids octave
    // errors from multiples of the true period.
    int pick = -1;
    for (int lag = min_lag; lag <= max_lag; ++lag) {
      const double v = r[static_cast<std::size_t>(lag)];
      if (v >= 0.9 * best && v >= r[static_cast<std::size_t>(lag - 1)] &&
          v >= r[static_cast<std::size_t>(lag + 1)]) {
        pick = lag;
        break;
      }
    }
    if (pick < 0) continue;
    const double a = r[static_cast<std::size_t>(pick - 1)];
    const double b = r[static_cast<std::size_t>(pick)];
    const double c = r[static_cast<std::size_t>(pick + 1)];
    const double curv = a - 2 * b + c;
    const double shift = curv < 0 ? std::clamp(0.5 * (a - c) / curv, -0.5, 0.5) : 0.0;
    const double f0 = wav.sample_rate_hz / (pick + shift);
    if (f0 < kF0MinHz || f0 > kF0MaxHz) continue;
    track.log_f0(t) = std::log(f0);
    track.voicing[static_cast<std::size_t>(t)] = true;
  }

  // Seven-frame lower median over voiced neighbours removes the isolated
  // upward jumps where a window straddles a segment boundary.
  const Vector raw = track.log_f0;
  std::vector<double> near;
  for (Index t = 0; t < frames; ++t) {
    if (!track.voicing[static_cast<std::size_t>(t)]) continue;
    near.clear();
    for (Index k = std::max<Index>(0, t - 3); k <= std::min<Index>(frames - 1, t + 3); ++k)
      if (track.voicing[static_cast<std::size_t>(k)]) near.push_back(raw(k));
    if (near.size() < 2) continue;
    const std::size_t mid = (near.size() - 1) / 2;
    std::nth_element(near.begin(), near.begin() + static_cast<std::ptrdiff_t>(mid), near.end());
    track.log_f0(t) = near[mid];
  }
  return track;
}

void reconcile_lengths(F0Track& f0, MelSpectrogram& mel) {
  const Index n = std::min(f0.frames(), mel.frames());
  if (f0.frames() > n) {
    f0.log_f0.conservativeResize(n);
    f0.voicing.resize(static_cast<std::size_t>(n));
  }
  if (mel.frames() > n) mel.values.conservativeResize(n, Eigen::NoChange);
}

Vector interpolate_log_f0(const F0Track& f0, double fallback) {
  const Index n = f0.frames();
  Vector out = Vector::Constant(n, fallback);
  std::vector<Index> voiced;
  for (Index t = 0; t < n; ++t)
    if (f0.voicing[static_cast<std::size_t>(t)]) voiced.push_back(t);
  if (voiced.empty()) return out;
  for (Index t = 0; t <= voiced.front(); ++t) out(t) = f0.log_f0(voiced.front());
  for (Index t = voiced.back(); t < n; ++t) out(t) = f0.log_f0(voiced.back());
  for (std::size_t i = 0; i + 1 < voiced.size(); ++i) {
    const Index a = voiced[i];
    const Index b = voiced[i + 1];
    for (Index t = a; t <= b; ++t) {
      const double w = static_cast<double>(t - a) / static_cast<double>(b - a);
      out(t) = (1.0 - w) * f0.log_f0(a) + w * f0.log_f0(b);
    }
  }
  return out;
}

NormStats compute_stats(std::span<const Matrix> features) {
  if (features.empty()) throw Error("compute_stats: empty collection");
  const Index dims = features[0].cols();
  Vector sum = Vector::Zero(dims);
  Index count = 0;
  for (const auto& f : features) {
    if (f.cols() != dims) throw ShapeError("compute_stats: dimension mismatch");
    sum += f.colwise().sum().transpose();
    count += f.rows();
  }
  if (count == 0) throw Error("compute_stats: no rows");
  NormStats stats;
  stats.mean = sum / static_cast<double>(count);
  Vector sq = Vector::Zero(dims);
  for (const auto& f : features)
    sq += (f.rowwise() - stats.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  stats.std = (sq / static_cast<double>(count)).array().sqrt().max(kStdFloor).matrix();
  return stats;
}

Matrix normalize(const Matrix& x, const NormStats& stats) {
  if (x.cols() != stats.dims()) throw ShapeError("normalize: dimension mismatch");
  return ((x.rowwise() - stats.mean.transpose()).array().rowwise() / stats.std.transpose().array())
      .matrix();
}

Matrix denormalize(const Matrix& x, const NormStats& stats) {
  if (x.cols() != stats.dims()) throw ShapeError("denormalize: dimension mismatch");
  return ((x.array().rowwise() * stats.std.transpose().array()).rowwise() +
          stats.mean.transpose().array())
      .matrix();
}

namespace {

constexpr const char* kStatsMagic = "dsr-stats";
constexpr int kStatsVersion = 1;

void write_vector(std::ostream& out, const char* label, const Vector& v) {
  out << label;
  char buf[64];
  for (Index i = 0; i < v.size(); ++i) {
    auto res = std::to_chars(buf, buf + sizeof(buf), v(i));
    out << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
  }
  out << '\n';
}

Vector read_vector(std::istream& in, const char* label, Index dims) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("stats: truncated file");
  std::istringstream ls(line);
  std::string head;
  ls >> head;
  if (head != label) throw FormatError(std::string("stats: expected '") + label + "' line");
  Vector v(dims);
  std::string tok;
  for (Index i = 0; i < dims; ++i) {
    if (!(ls >> tok)) throw FormatError("stats: too few values");
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v(i));
    if (res.ec != std::errc()) throw FormatError("stats: bad number '" + tok + "'");
  }
  if (ls >> tok) throw FormatError("stats: too many values");
  return v;
}

}  // namespace

void save_stats(const std::filesystem::path& path, const StatsTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << kStatsMagic << ' ' << kStatsVersion << '\n';
  for (const auto& [name, stats] : table) {
    out << "block " << name << ' ' << stats.dims() << '\n';
    write_vector(out, "mean", stats.mean);
    write_vector(out, "std", stats.std);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

StatsTable load_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kStatsMagic) throw FormatError("stats: bad header in " + path.string());
  if (version != kStatsVersion) throw VersionError("stats: unsupported version " + std::to_string(version));
  in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
  StatsTable table;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kw, name;
    Index dims = 0;
    ls >> kw >> name >> dims;
    if (kw != "block" || name.empty() || dims <= 0) throw FormatError("stats: malformed block header");
    NormStats stats;
    stats.mean = read_vector(in, "mean", dims);
    stats.std = read_vector(in, "std", dims);
    table[name] = std::move(stats);
  }
  return table;
}

PhonemeAlignment parse_alignment(const std::string& text, const PhonemeInventory& inventory,
                                 Index expected_frames) {
  using Kind = AlignmentError::Kind;
  PhonemeAlignment alignment;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw AlignmentError(Kind::kMalformed, "alignment line " + std::to_string(line_no) + ": missing tab");
    const std::string symbol = line.substr(0, tab);
    const std::string dur = line.substr(tab + 1);
    auto id = inventory.find(symbol);
    if (!id || *id == inventory.eos())
      throw AlignmentError(Kind::kUnknownSymbol, "alignment line " + std::to_string(line_no) +
                                                     ": unknown phoneme '" + symbol + "'");
    long frames = 0;
    auto res = std::from_chars(dur.data(), dur.data() + dur.size(), frames);
    if (res.ec != std::errc() || res.ptr != dur.data() + dur.size())
      throw AlignmentError(Kind::kMalformed, "alignment line " + std::to_string(line_no) +
                                                 ": bad duration '" + dur + "'");
    if (frames <= 0)
      throw AlignmentError(Kind::kBadDuration, "alignment line " + std::to_string(line_no) +
                                                   ": duration must be positive");
    alignment.entries.push_back({*id, static_cast<int>(frames)});
  }
  if (alignment.entries.empty()) throw AlignmentError(Kind::kEmpty, "empty alignment");
  if (expected_frames >= 0 && alignment.total_frames() != expected_frames)
    throw AlignmentError(Kind::kFrameMismatch,
                         "alignment covers " + std::to_string(alignment.total_frames()) +
                             " frames but utterance has " + std::to_string(expected_frames));
  return alignment;
}

PhonemeAlignment load_alignment(const std::filesystem::path& path, const PhonemeInventory& inventory,
                                Index expected_frames) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read alignment " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_alignment(buf.str(), inventory, expected_frames);
}

void save_alignment(const std::filesystem::path& path, const PhonemeAlignment& alignment,
                    const PhonemeInventory& inventory) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : alignment.entries)
    out << inventory.symbol(e.phoneme) << '\t' << e.duration_frames << '\n';
}

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void write_wav(const std::filesystem::path& path, const Waveform& wav) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(wav.samples.size() * 2);
  out.write("RIFF", 4);
  put<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put<std::uint32_t>(out, 16);
  put<std::uint16_t>(out, 1);
  put<std::uint16_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(wav.sample_rate_hz));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(wav.sample_rate_hz * 2));
  put<std::uint16_t>(out, 2);
  put<std::uint16_t>(out, 16);
  out.write("data", 4);
  put<std::uint32_t>(out, data_bytes);
  for (double s : wav.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError(path.string() + ": not a RIFF/WAVE file");
  std::size_t pos = 12;
  int channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= bytes.size()) {
    const std::string id(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    const auto size = get<std::uint32_t>(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw FormatError(path.string() + ": truncated chunk " + id);
    if (id == "fmt ") {
      if (size < 16) throw FormatError(path.string() + ": short fmt chunk");
      format = get<std::uint16_t>(bytes.data() + body);
      channels = get<std::uint16_t>(bytes.data() + body + 2);
      rate = get<std::uint32_t>(bytes.data() + body + 4);
      bits = get<std::uint16_t>(bytes.data() + body + 14);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(path.string() + ": data before fmt");
      if (format != 1 || channels != 1 || bits != 16)
        throw FormatError(path.string() + ": only mono 16-bit PCM is supported");
      Waveform wav;
      wav.sample_rate_hz = static_cast<int>(rate);
      wav.samples.resize(size / 2);
      for (std::size_t i = 0; i < wav.samples.size(); ++i)
        wav.samples[i] = static_cast<std::int16_t>(get<std::uint16_t>(bytes.data() + body + 2 * i)) / 32767.0;
      return wav;
    }
    pos = body + size + (size & 1);
  }
  throw FormatError(path.string() + ": no data chunk");
}

}  // namespace dsr
