#include "dsr/data.hpp"

#include <optional>

namespace dsr::data {

Analysis analyse(const Waveform& wav) {
  Analysis a;
  MelSpectrogram m80 = mel_spectrogram(wav, FrameConfig::with_mels(80));
  MelSpectrogram m40 = mel_spectrogram(wav, FrameConfig::with_mels(40));
  a.f0 = extract_f0(wav, FrameConfig{});
  reconcile_lengths(a.f0, m80);
  reconcile_lengths(a.f0, m40);
  a.mel80 = std::move(m80.values);
  a.features = append_deltas(m40).values;
  a.mel40 = std::move(m40.values);
  return a;
}

StatsTable corpus_stats(const corpus::Manifest& manifest) {
  std::vector<Matrix> feats, m80, m40, f0;
  for (const auto& e : manifest.entries) {
    if (e.role == corpus::Role::kDysarthric || e.split != "train") continue;
    Analysis a = analyse(read_wav(manifest.resolve(e.wav)));
    std::vector<double> voiced;
    for (Index t = 0; t < a.f0.frames(); ++t)
      if (a.f0.voicing[static_cast<std::size_t>(t)]) voiced.push_back(a.f0.log_f0(t));
    if (!voiced.empty()) f0.push_back(Eigen::Map<Matrix>(voiced.data(), static_cast<Index>(voiced.size()), 1));
    feats.push_back(std::move(a.features));
    m80.push_back(std::move(a.mel80));
    m40.push_back(std::move(a.mel40));
  }
  if (feats.empty()) throw Error("corpus has no healthy training utterances");
  if (f0.empty()) throw Error("corpus has no voiced frames in the healthy training split");
  return {{kFeatureBlock, compute_stats(feats)},
          {kMel80Block, compute_stats(m80)},
          {kMel40Block, compute_stats(m40)},
          {kLogF0Block, compute_stats(f0)}};
}

namespace {

const NormStats& find_block(const StatsTable& stats, const std::string& name) {
  auto it = stats.find(name);
  if (it == stats.end()) throw FormatError("stats file lacks block '" + name + "'");
  return it->second;
}

void fill_acoustics(Utterance& u, Analysis a, const StatsTable& stats) {
  u.features = normalize(a.features, find_block(stats, kFeatureBlock));
  u.mel80 = normalize(a.mel80, find_block(stats, kMel80Block));
  u.mel40 = normalize(a.mel40, find_block(stats, kMel40Block));
  const NormStats& f0s = find_block(stats, kLogF0Block);
  u.pitch = (interpolate_log_f0(a.f0, f0s.mean(0)).array() - f0s.mean(0)) / f0s.std(0);
  u.f0 = std::move(a.f0);
}

}  // namespace

Utterance from_waveform(const Waveform& wav, const StatsTable& stats, const std::string& id) {
  Utterance u;
  u.id = id;
  u.split = "test";
  u.role = corpus::Role::kDysarthric;
  fill_acoustics(u, analyse(wav), stats);
  return u;
}

Dataset::Dataset(corpus::Manifest manifest, StatsTable stats, PhonemeInventory inventory)
    : manifest_(std::move(manifest)), stats_(std::move(stats)), inventory_(std::move(inventory)) {
  for (const char* b : {kFeatureBlock, kMel80Block, kMel40Block, kLogF0Block}) block(b);
}

Dataset Dataset::open(const std::filesystem::path& manifest, const std::filesystem::path& stats,
                      int phoneme_inventory_size) {
  return Dataset(corpus::load_manifest(manifest), load_stats(stats), corpus::toy_inventory(phoneme_inventory_size));
}

const NormStats& Dataset::block(const std::string& name) const {
  return find_block(stats_, name);
}

const Utterance& Dataset::get(const std::string& id) const {
  if (auto it = cache_.find(id); it != cache_.end()) return *it->second;
  const corpus::ManifestEntry* entry = nullptr;
  for (const auto& e : manifest_.entries)
    if (e.utt_id == id) entry = &e;
  if (!entry) throw Error("unknown utterance id " + id);

  auto u = std::make_unique<Utterance>();
  u->id = entry->utt_id;
  u->speaker = entry->speaker;
  u->role = entry->role;
  u->split = entry->split;
  Analysis a = analyse(read_wav(manifest_.resolve(entry->wav)));
  const Index frames = a.mel80.rows();
  u->alignment = load_alignment(manifest_.resolve(entry->alignment), inventory_, frames);
  u->labels = corpus::load_labels(manifest_.resolve(entry->labels), inventory_);
  if (u->labels != u->alignment.phonemes())
    throw FormatError(id + ": label file and alignment disagree on the phoneme sequence");
  u->true_f0 = corpus::load_f0(manifest_.resolve(entry->f0));
  fill_acoustics(*u, std::move(a), stats_);
  return *cache_.emplace(id, std::move(u)).first->second;
}

std::vector<std::string> Dataset::ids(std::optional<corpus::Role> role, const std::string& speaker,
                                      const std::string& split) const {
  std::vector<std::string> out;
  for (const auto& e : manifest_.entries)
    if ((!role || e.role == *role) && (speaker.empty() || e.speaker == speaker) && (split.empty() || e.split == split))
      out.push_back(e.utt_id);
  return out;
}

std::vector<std::string> Dataset::healthy_ids(const std::string& split) const {
  std::vector<std::string> out;
  for (const auto& e : manifest_.entries)
    if (e.role != corpus::Role::kDysarthric && (split.empty() || e.split == split)) out.push_back(e.utt_id);
  return out;
}

}  // namespace dsr::data
