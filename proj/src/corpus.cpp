#include "dsr/corpus.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace dsr::corpus {

namespace fs = std::filesystem;

namespace {

struct Acoustics {
  const char* symbol;
  double f1, f2;     // Hz; for noise phonemes the band centre and width
  bool voiced;
  double rms;        // segment level
  double log_f0;     // contour offset relative to the speaker base
  int mean_frames;
};

// Order matches PhonemeInventory::toy().
constexpr std::array<Acoustics, 10> kTable{{
    {"AA", 730, 1090, true, 0.10, -0.05, 12},
    {"IY", 270, 2290, true, 0.09, 0.12, 10},
    {"UW", 300, 870, true, 0.09, 0.08, 11},
    {"EH", 530, 1840, true, 0.10, 0.00, 9},
    {"B", 200, 1100, true, 0.03, -0.10, 5},
    {"M", 250, 1200, true, 0.05, -0.08, 7},
    {"N", 250, 1700, true, 0.05, -0.06, 6},
    {"L", 360, 1300, true, 0.07, -0.03, 6},
    {"S", 5500, 2000, false, 0.04, 0.0, 9},
    {"F", 3500, 4000, false, 0.02, 0.0, 8},
}};
constexpr int kSilenceFrames = 8;
constexpr double kSilenceRms = 0.001;
constexpr double kSubstitutionPull = 0.7;
constexpr std::array<double, 2> kRateRange{0.85, 1.35};

const Acoustics& acoustics(const PhonemeInventory& inv, int id) {
  const auto& sym = inv.symbol(id);
  for (const auto& a : kTable)
    if (sym == a.symbol) return a;
  throw Error("no acoustics for phoneme " + sym);
}

// Two-pole resonator with unit peak gain.
class Resonator {
 public:
  Resonator(double freq, double bandwidth) {
    const double r = std::exp(-std::numbers::pi * bandwidth / kSampleRate);
    const double theta = 2 * std::numbers::pi * std::min(freq, 7800.0) / kSampleRate;
    a1_ = -2 * r * std::cos(theta);
    a2_ = r * r;
    gain_ = (1 - r) * std::sqrt(1 - 2 * r * std::cos(2 * theta) + r * r);
  }
  double operator()(double x) {
    const double y = gain_ * x - a1_ * y1_ - a2_ * y2_;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double a1_, a2_, gain_;
  double y1_ = 0, y2_ = 0;
};

void scale_to_rms(std::vector<double>& seg, double target) {
  double sq = 0;
  for (double v : seg) sq += v * v;
  const double rms = std::sqrt(sq / std::max<std::size_t>(seg.size(), 1));
  if (rms <= 0) return;
  for (double& v : seg) v *= target / rms;
}

// For each affected phoneme, the phoneme of the same voicing class its
// formants drift toward. Returns -1 when the class has no other member.
int substitution_target(int id, const PhonemeInventory& inv) {
  std::vector<int> same;
  for (int k = 0; k < inv.silence(); ++k)
    if (acoustics(inv, k).voiced == acoustics(inv, id).voiced) same.push_back(k);
  if (same.size() < 2) return -1;
  const auto pos = std::find(same.begin(), same.end(), id) - same.begin();
  const auto step = std::max<std::ptrdiff_t>(1, static_cast<std::ptrdiff_t>(same.size()) / 2);
  return same[static_cast<std::size_t>((pos + step) % static_cast<std::ptrdiff_t>(same.size()))];
}

std::string fmt_index(int i, int width) {
  std::string s = std::to_string(i);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

std::vector<int> random_text(const ToyCorpusConfig& cfg, const PhonemeInventory& inv, Rng& rng) {
  const int len = std::uniform_int_distribution<int>(cfg.min_phonemes, cfg.max_phonemes)(rng);
  std::uniform_int_distribution<int> pick(0, inv.silence() - 1);
  std::vector<int> text{inv.silence()};
  while (static_cast<int>(text.size()) < len + 1) {
    const int p = pick(rng);
    if (p != text.back()) text.push_back(p);
  }
  text.push_back(inv.silence());
  return text;
}

SpeakerTraits healthy_traits(int index, int count, std::uint64_t seed) {
  Rng rng = derive_rng(seed, stream_id("healthy-traits"), static_cast<std::uint64_t>(index));
  const double pos = count > 1 ? static_cast<double>(index) / (count - 1) : 0.5;
  SpeakerTraits t;
  t.base_f0_hz = 80.0 * std::pow(3.25, pos) * (1 + 0.04 * uniform(rng, -1, 1));
  // Tilt and formant scale are spread independently of F0.
  t.tilt = 0.05 + 0.85 * std::fmod(pos * 5.0 / 3.0 + 0.25, 1.0);
  t.formant_scale = 0.82 + 0.36 * std::fmod(pos * 7.0 / 5.0 + 0.6, 1.0);
  return t;
}

SpeakerTraits dysarthric_traits(int index, const DysarthriaProfile& profile) {
  SpeakerTraits t;
  const bool low = index % 2 == 0;
  t.base_f0_hz = low ? 85.0 : 250.0;
  t.tilt = low ? 0.9 : 0.05;
  t.formant_scale = low ? 0.84 : 1.16;
  t.breathiness = profile.breathiness;
  return t;
}

}  // namespace

void ToyCorpusConfig::validate() const {
  if (healthy_speakers < 1 || dysarthric_speakers < 1 || utterances_per_speaker < 1 || reference_utterances < 1)
    throw Error("corpus: all counts must be at least 1");
  if (phoneme_inventory_size < 3 || phoneme_inventory_size > static_cast<int>(kTable.size()) + 2)
    throw Error("corpus: phoneme inventory size must be in [3, 12]");
  if (min_phonemes < 1 || max_phonemes < min_phonemes) throw Error("corpus: bad utterance length range");
  if (phoneme_inventory_size == 3 && max_phonemes > 1) throw Error("corpus: one phoneme cannot form longer texts");
  if (test_fraction < 0 || test_fraction >= 1) throw Error("corpus: test fraction must be in [0, 1)");
  if (dysarthria.tempo_factor < 1) throw Error("corpus: tempo factor must be >= 1");
  if (dysarthria.pitch_flatten < 0 || dysarthria.pitch_flatten > 1) throw Error("corpus: pitch flatten must be in [0, 1]");
  if (dysarthria.substitution_rate < 0 || dysarthria.substitution_rate > 1)
    throw Error("corpus: substitution rate must be in [0, 1]");
}

PhonemeInventory toy_inventory(int size) {
  if (size < 3 || size > static_cast<int>(kTable.size()) + 2) throw Error("toy inventory size must be in [3, 12]");
  std::vector<std::string> symbols;
  for (int i = 0; i < size - 2; ++i) symbols.emplace_back(kTable[static_cast<std::size_t>(i)].symbol);
  return PhonemeInventory(std::move(symbols));
}

std::string to_string(Role role) {
  switch (role) {
    case Role::kHealthy: return "healthy";
    case Role::kProsodyReference: return "prosody_reference";
    case Role::kDysarthric: return "dysarthric";
  }
  return "?";
}

Role role_from_string(const std::string& name) {
  if (name == "healthy") return Role::kHealthy;
  if (name == "prosody_reference") return Role::kProsodyReference;
  if (name == "dysarthric") return Role::kDysarthric;
  throw FormatError("unknown speaker role '" + name + "'");
}

DysarthriaProfile healthy_profile() { return {1.0, 0.0, 0.0, 0.0}; }

std::vector<int> healthy_durations(const std::vector<int>& text, const PhonemeInventory& inv, Rng& rng) {
  std::uniform_int_distribution<int> jitter(-1, 1);
  std::vector<int> out;
  for (int p : text) {
    const int mean = p == inv.silence() ? kSilenceFrames : acoustics(inv, p).mean_frames;
    out.push_back(std::max(1, mean + jitter(rng)));
  }
  return out;
}

Rendering render_utterance(const std::vector<int>& text, const std::vector<int>& base_durations,
                           const SpeakerTraits& traits, const DysarthriaProfile& profile,
                           const std::vector<int>& substituted, const PhonemeInventory& inv, Rng& rng) {
  if (text.empty() || text.size() != base_durations.size()) throw Error("render: text and durations differ");
  const FrameConfig fc;
  Rendering out;
  Index frames = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const int d = std::max(1, static_cast<int>(std::lround(base_durations[i] * profile.tempo_factor)));
    out.alignment.entries.push_back({text[i], d});
    frames += d;
  }

  // Frame-level targets.
  std::vector<int> frame_phone(static_cast<std::size_t>(frames));
  {
    Index at = 0;
    for (const auto& e : out.alignment.entries)
      for (int k = 0; k < e.duration_frames; ++k) frame_phone[static_cast<std::size_t>(at++)] = e.phoneme;
  }
  const double base = std::log(traits.base_f0_hz);
  const double utt_shift = 0.02 * uniform(rng, -1, 1);
  Vector target(frames);
  for (Index t = 0; t < frames; ++t) {
    const int p = frame_phone[static_cast<std::size_t>(t)];
    const double offset = p == inv.silence() ? 0.0 : acoustics(inv, p).log_f0;
    target(t) = base + utt_shift + (1 - profile.pitch_flatten) * offset;
  }
  Vector smooth(frames);
  for (Index t = 0; t < frames; ++t) {
    const Index lo = std::max<Index>(0, t - 2), hi = std::min<Index>(frames - 1, t + 2);
    smooth(t) = target.segment(lo, hi - lo + 1).mean();
  }
  out.f0.log_f0 = Vector::Zero(frames);
  out.f0.voicing.assign(static_cast<std::size_t>(frames), false);
  for (Index t = 0; t < frames; ++t) {
    const int p = frame_phone[static_cast<std::size_t>(t)];
    if (p != inv.silence() && acoustics(inv, p).voiced) {
      out.f0.voicing[static_cast<std::size_t>(t)] = true;
      out.f0.log_f0(t) = smooth(t);
    }
  }

  const Index n = samples_for_frames(frames, fc);
  auto frame_of = [&](Index s) {
    const double f = std::round(static_cast<double>(s - fc.window_len / 2) / fc.hop_len);
    return std::clamp<Index>(static_cast<Index>(f), 0, frames - 1);
  };
  std::vector<double> samples(static_cast<std::size_t>(n), 0.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  double phase = 0.0;
  Index start = 0;
  while (start < n) {
    const int p = frame_phone[static_cast<std::size_t>(frame_of(start))];
    Index end = start;
    while (end < n && frame_phone[static_cast<std::size_t>(frame_of(end))] == p) ++end;
    std::vector<double> seg(static_cast<std::size_t>(end - start));
    if (p == inv.silence()) {
      for (auto& v : seg) v = noise(rng);
      scale_to_rms(seg, kSilenceRms);
    } else {
      const Acoustics& a = acoustics(inv, p);
      double f1 = a.f1, f2 = a.f2;
      if (std::find(substituted.begin(), substituted.end(), p) != substituted.end()) {
        const int to = substitution_target(p, inv);
        if (to >= 0) {
          const Acoustics& b = acoustics(inv, to);
          f1 += kSubstitutionPull * (b.f1 - f1);
          f2 += kSubstitutionPull * (b.f2 - f2);
        }
      }
      if (a.voiced) {
        Resonator r1(f1 * traits.formant_scale, 80), r2(f2 * traits.formant_scale, 120);
        Resonator r3(2600 * traits.formant_scale, 200);
        for (Index s = start; s < end; ++s) {
          const double hz = std::exp(smooth(frame_of(s)));
          phase += hz / kSampleRate;
          double x = 0.0;
          if (phase >= 1.0) {
            phase -= 1.0;
            x = 1.0;
          }
          x += traits.breathiness * 0.05 * noise(rng);
          const double y = r3(r2(r1(x)));
          seg[static_cast<std::size_t>(s - start)] = y;
        }
      } else {
        Resonator band(f1 * traits.formant_scale, f2);
        for (auto& v : seg) v = band(noise(rng));
      }
      scale_to_rms(seg, a.rms);
    }
    std::copy(seg.begin(), seg.end(), samples.begin() + start);
    start = end;
  }

  // Speaker tilt, then peak normalisation.
  double prev = 0.0;
  for (auto& v : samples) {
    prev = v + traits.tilt * prev;
    v = prev;
  }
  double peak = 0.0;
  for (double v : samples) peak = std::max(peak, std::abs(v));
  if (peak > 0)
    for (auto& v : samples) v *= 0.6 / peak;
  out.wav.samples = std::move(samples);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

void Manifest::validate(bool check_files) const {
  std::set<std::string> ids;
  std::map<std::string, Role> roles;
  for (const auto& e : entries) {
    if (e.utt_id.empty() || e.speaker.empty()) throw FormatError("manifest: empty utterance id or speaker");
    if (!ids.insert(e.utt_id).second) throw FormatError("manifest: duplicate utterance id " + e.utt_id);
    if (e.split != "train" && e.split != "test") throw FormatError("manifest: bad split '" + e.split + "'");
    auto [it, fresh] = roles.emplace(e.speaker, e.role);
    if (!fresh && it->second != e.role) throw FormatError("manifest: speaker " + e.speaker + " has two roles");
    if (check_files) {
      for (const auto& p : {e.wav, e.alignment, e.labels, e.f0})
        if (!fs::exists(resolve(p))) throw IoError("manifest: missing file " + resolve(p).string());
    }
  }
  int refs = 0;
  for (const auto& [spk, role] : roles) refs += role == Role::kProsodyReference;
  if (refs != 1)
    throw FormatError("manifest: expected exactly one prosody_reference speaker, found " + std::to_string(refs));
}

std::vector<std::string> Manifest::speakers(Role role) const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (e.role == role && std::find(out.begin(), out.end(), e.speaker) == out.end()) out.push_back(e.speaker);
  return out;
}

std::string Manifest::prosody_reference() const {
  auto refs = speakers(Role::kProsodyReference);
  if (refs.size() != 1) throw FormatError("manifest: expected exactly one prosody_reference speaker");
  return refs.front();
}

std::vector<const ManifestEntry*> Manifest::select(const std::string& speaker, const std::string& split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.speaker == speaker && (split.empty() || e.split == split)) out.push_back(&e);
  return out;
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw VersionError("manifest: missing or unsupported header in " + path.string());
  Manifest m;
  m.root = path.parent_path();
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, '\t')) f.push_back(tok);
    if (f.size() != 8)
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected 8 fields, got " + std::to_string(f.size()));
    if (f[0] == "utt_id") continue;
    m.entries.push_back({f[0], f[1], role_from_string(f[2]), f[3], f[4], f[5], f[6], f[7]});
  }
  m.validate();
  return m;
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << kManifestHeader << "\nutt_id\tspeaker\trole\tsplit\twav\talignment\tlabels\tf0\n";
  for (const auto& e : manifest.entries)
    out << e.utt_id << '\t' << e.speaker << '\t' << to_string(e.role) << '\t' << e.split << '\t'
        << e.wav.generic_string() << '\t' << e.alignment.generic_string() << '\t' << e.labels.generic_string()
        << '\t' << e.f0.generic_string() << '\n';
  if (!out) throw IoError("failed writing manifest " + path.string());
}

void save_f0(const fs::path& path, const F0Track& f0) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[64];
  for (Index t = 0; t < f0.frames(); ++t) {
    auto res = std::to_chars(buf, buf + sizeof(buf), f0.log_f0(t));
    out.write(buf, res.ptr - buf);
    out << '\t' << (f0.voicing[static_cast<std::size_t>(t)] ? 1 : 0) << '\n';
  }
}

F0Track load_f0(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<double> values;
  F0Track f0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("f0 file " + path.string() + ": malformed line");
    double v = 0;
    auto res = std::from_chars(line.data(), line.data() + tab, v);
    if (res.ec != std::errc{}) throw FormatError("f0 file " + path.string() + ": bad number");
    const std::string flag = line.substr(tab + 1);
    if (flag != "0" && flag != "1") throw FormatError("f0 file " + path.string() + ": bad voicing flag");
    values.push_back(v);
    f0.voicing.push_back(flag == "1");
  }
  f0.log_f0 = Eigen::Map<Vector>(values.data(), static_cast<Index>(values.size()));
  return f0;
}

std::vector<int> load_labels(const fs::path& path, const PhonemeInventory& inv) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto ids = inv.parse_sequence(ss.str());
  if (ids.empty()) throw FormatError("label file " + path.string() + " is empty");
  return ids;
}

Manifest synthesize_toy_corpus(const ToyCorpusConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const PhonemeInventory inv = toy_inventory(cfg.phoneme_inventory_size);
  std::error_code ec;
  for (const char* sub : {"wav", "align", "lab", "f0"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }

  struct Speaker {
    std::string name;
    Role role;
    SpeakerTraits traits;
    int utterances;
    DysarthriaProfile profile;
    std::vector<int> substituted;
  };
  std::vector<Speaker> speakers;
  for (int i = 0; i < cfg.healthy_speakers; ++i)
    speakers.push_back({"h" + fmt_index(i + 1, 2), Role::kHealthy, healthy_traits(i, cfg.healthy_speakers, cfg.seed),
                        cfg.utterances_per_speaker, healthy_profile(), {}});
  speakers.push_back({"ref", Role::kProsodyReference, SpeakerTraits{}, cfg.reference_utterances, healthy_profile(), {}});
  for (int i = 0; i < cfg.dysarthric_speakers; ++i) {
    Speaker s{"d" + fmt_index(i + 1, 2), Role::kDysarthric, dysarthric_traits(i, cfg.dysarthria),
              cfg.utterances_per_speaker, cfg.dysarthria, {}};
    // A fixed, speaker-specific set of mispronounced phonemes.
    Rng rng = derive_rng(cfg.seed, stream_id("substitutions"), static_cast<std::uint64_t>(i));
    std::vector<int> order(static_cast<std::size_t>(inv.silence()));
    for (int k = 0; k < inv.silence(); ++k) order[static_cast<std::size_t>(k)] = k;
    std::shuffle(order.begin(), order.end(), rng);
    const auto count = static_cast<std::size_t>(std::lround(cfg.dysarthria.substitution_rate * inv.silence()));
    s.substituted.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    speakers.push_back(std::move(s));
  }

  Manifest m;
  m.root = out_dir;
  for (const auto& spk : speakers) {
    const int test_count = static_cast<int>(std::lround(cfg.test_fraction * spk.utterances));
    for (int u = 0; u < spk.utterances; ++u) {
      const std::string id = spk.name + "_" + fmt_index(u, 3);
      Rng rng = derive_rng(cfg.seed, stream_id("utterance"), stream_id(id));
      const auto text = random_text(cfg, inv, rng);
      const auto base = healthy_durations(text, inv, rng);
      DysarthriaProfile profile = spk.profile;
      // Healthy speakers vary their rate; the prosody reference keeps a steady one.
      if (spk.role == Role::kHealthy) profile.tempo_factor = uniform(rng, kRateRange[0], kRateRange[1]);
      const Rendering r = render_utterance(text, base, spk.traits, profile, spk.substituted, inv, rng);

      ManifestEntry e{id, spk.name, spk.role, u >= spk.utterances - test_count ? "test" : "train",
                      fs::path("wav") / (id + ".wav"), fs::path("align") / (id + ".tsv"),
                      fs::path("lab") / (id + ".lab"), fs::path("f0") / (id + ".f0")};
      write_wav(out_dir / e.wav, r.wav);
      save_alignment(out_dir / e.alignment, r.alignment, inv);
      {
        std::ofstream lab(out_dir / e.labels);
        if (!lab) throw IoError("cannot write " + (out_dir / e.labels).string());
        lab << inv.format_sequence(text) << '\n';
      }
      save_f0(out_dir / e.f0, r.f0);
      m.entries.push_back(std::move(e));
    }
  }
  save_manifest(out_dir / "manifest.tsv", m);
  m.validate();
  return m;
}

}  // namespace dsr::corpus
