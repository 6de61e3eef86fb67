#pragma once

// Corpus utterances turned into normalised model inputs and targets.

#include "dsr/corpus.hpp"
#include "dsr/signal.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dsr::data {

inline constexpr const char* kFeatureBlock = "feat120";
inline constexpr const char* kMel80Block = "mel80";
inline constexpr const char* kMel40Block = "mel40";
inline constexpr const char* kLogF0Block = "log_f0";

/// Unnormalised analysis of one waveform, all with the same frame count.
struct Analysis {
  Matrix mel80;
  Matrix mel40;
  Matrix features;  // 120 columns
  F0Track f0;
};
Analysis analyse(const Waveform& wav);

struct Utterance {
  std::string id;
  std::string speaker;
  corpus::Role role = corpus::Role::kHealthy;
  std::string split;
  std::vector<int> labels;  // includes the SIL tokens
  PhonemeAlignment alignment;
  Matrix features;  // normalised, T x 120
  Matrix mel80;     // normalised, T x 80
  Matrix mel40;     // normalised, T x 40
  F0Track f0;       // extracted
  Vector pitch;     // normalised log-F0, interpolated over unvoiced frames
  F0Track true_f0;  // generated ground truth

  Index frames() const { return mel80.rows(); }
  std::vector<int> durations() const { return alignment.durations(); }
};

/// An utterance with no alignment, labels or ground-truth F0; enough for
/// reconstruction in the fully predicted mode.
Utterance from_waveform(const Waveform& wav, const StatsTable& stats, const std::string& id = "input");

/// Global statistics over the healthy and prosody-reference training split.
StatsTable corpus_stats(const corpus::Manifest& manifest);

class Dataset {
 public:
  Dataset(corpus::Manifest manifest, StatsTable stats, PhonemeInventory inventory);
  static Dataset open(const std::filesystem::path& manifest, const std::filesystem::path& stats,
                      int phoneme_inventory_size);

  /// Loaded on first use and cached. Throws AlignmentError when the
  /// alignment disagrees with the audio.
  const Utterance& get(const std::string& id) const;

  /// Ids filtered by role/speaker/split; empty strings match everything.
  std::vector<std::string> ids(std::optional<corpus::Role> role, const std::string& speaker = "",
                               const std::string& split = "") const;
  /// Healthy plus prosody-reference ids of a split.
  std::vector<std::string> healthy_ids(const std::string& split) const;

  const corpus::Manifest& manifest() const { return manifest_; }
  const StatsTable& stats() const { return stats_; }
  const NormStats& block(const std::string& name) const;
  const PhonemeInventory& inventory() const { return inventory_; }

 private:
  corpus::Manifest manifest_;
  StatsTable stats_;
  PhonemeInventory inventory_;
  mutable std::map<std::string, std::unique_ptr<Utterance>> cache_;
};

}  // namespace dsr::data
