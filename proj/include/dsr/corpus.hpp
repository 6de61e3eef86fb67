#pragma once

// Synthetic toy corpus and its manifest.
//
// Every "phoneme" is a pair of formant resonances (or a noise band) so that
// phoneme identity, speaker timbre and prosody can be set independently and
// their ground truth written next to the audio.

#include "dsr/phonemes.hpp"
#include "dsr/signal.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dsr::corpus {

struct DysarthriaProfile {
  double tempo_factor = 1.8;
  double pitch_flatten = 0.6;
  double substitution_rate = 0.15;
  double breathiness = 0.25;
};

struct ToyCorpusConfig {
  int healthy_speakers = 8;
  int dysarthric_speakers = 2;
  int utterances_per_speaker = 40;
  int reference_utterances = 80;
  int phoneme_inventory_size = 12;
  int min_phonemes = 5;
  int max_phonemes = 9;
  double test_fraction = 0.2;
  std::uint64_t seed = 1;
  DysarthriaProfile dysarthria;

  void validate() const;
};

/// First size-2 toy phonemes plus SIL and </s>.
PhonemeInventory toy_inventory(int size);

enum class Role { kHealthy, kProsodyReference, kDysarthric };
std::string to_string(Role role);
Role role_from_string(const std::string& name);

struct SpeakerTraits {
  double base_f0_hz = 140.0;
  double tilt = 0.5;           // one-pole low-pass coefficient applied to the output
  double formant_scale = 1.0;  // vocal-tract length stand-in
  double breathiness = 0.0;    // noise mixed into voiced excitation
};

/// A phoneme sequence rendered to audio with exact ground truth.
struct Rendering {
  Waveform wav;
  PhonemeAlignment alignment;
  F0Track f0;  // generated contour, one value per frame
};

/// Healthy per-phoneme durations: inventory mean plus jitter in [-1, 1].
std::vector<int> healthy_durations(const std::vector<int>& text, const PhonemeInventory& inv, Rng& rng);

/// `substituted` lists phoneme ids rendered with formants pulled toward a
/// neighbouring phoneme. Tempo and F0 flattening come from `profile`; pass
/// an identity profile (tempo 1, flatten 0) for healthy speech.
Rendering render_utterance(const std::vector<int>& text, const std::vector<int>& base_durations,
                           const SpeakerTraits& traits, const DysarthriaProfile& profile,
                           const std::vector<int>& substituted, const PhonemeInventory& inv, Rng& rng);

DysarthriaProfile healthy_profile();

struct ManifestEntry {
  std::string utt_id;
  std::string speaker;
  Role role = Role::kHealthy;
  std::string split;  // "train" or "test"
  std::filesystem::path wav;
  std::filesystem::path alignment;
  std::filesystem::path labels;
  std::filesystem::path f0;
};

struct Manifest {
  std::filesystem::path root;  // paths in entries are relative to this
  std::vector<ManifestEntry> entries;

  /// Throws FormatError on any violated invariant: unknown split, duplicate
  /// ids, a speaker with two roles, missing files, or a prosody reference
  /// count other than one.
  void validate(bool check_files = true) const;
  std::vector<std::string> speakers(Role role) const;
  std::string prosody_reference() const;
  std::vector<const ManifestEntry*> select(const std::string& speaker, const std::string& split = "") const;
  std::filesystem::path resolve(const std::filesystem::path& p) const { return root / p; }
};

inline constexpr const char* kManifestHeader = "#dsr-manifest v1";

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Writes wav/, align/, lab/, f0/ and manifest.tsv under `out_dir`.
Manifest synthesize_toy_corpus(const ToyCorpusConfig& cfg, const std::filesystem::path& out_dir);

/// One value per line: "log_f0<TAB>0|1".
void save_f0(const std::filesystem::path& path, const F0Track& f0);
F0Track load_f0(const std::filesystem::path& path);

std::vector<int> load_labels(const std::filesystem::path& path, const PhonemeInventory& inv);

}  // namespace dsr::corpus
