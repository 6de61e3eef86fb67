#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dsr/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dsr;
using namespace dsr::corpus;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("dsr_test_corpus_" + name);
  fs::remove_all(p);
  return p;
}

ToyCorpusConfig small_config() {
  ToyCorpusConfig cfg;
  cfg.healthy_speakers = 2;
  cfg.dysarthric_speakers = 1;
  cfg.utterances_per_speaker = 5;
  cfg.reference_utterances = 5;
  cfg.seed = 17;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("same config and seed give bit-identical corpora") {
  const auto a = scratch("a"), b = scratch("b");
  const Manifest ma = synthesize_toy_corpus(small_config(), a);
  synthesize_toy_corpus(small_config(), b);
  CHECK(ma.entries.size() == 20);
  for (const auto& e : ma.entries)
    for (const auto& f : {e.wav, e.alignment, e.labels, e.f0}) CHECK(slurp(a / f) == slurp(b / f));
  CHECK(slurp(a / "manifest.tsv") == slurp(b / "manifest.tsv"));

  const Manifest loaded = load_manifest(a / "manifest.tsv");
  REQUIRE(loaded.entries.size() == ma.entries.size());
  CHECK(loaded.prosody_reference() == "ref");
  CHECK(loaded.speakers(Role::kDysarthric) == std::vector<std::string>{"d01"});
  CHECK(loaded.select("h01", "test").size() == 1);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("ground truth files agree with the audio") {
  const auto dir = scratch("truth");
  const Manifest m = synthesize_toy_corpus(small_config(), dir);
  const auto inv = toy_inventory(12);
  for (const auto& e : m.entries) {
    const Waveform wav = read_wav(dir / e.wav);
    const Index frames = frame_count(wav.size(), FrameConfig{});
    const auto align = load_alignment(dir / e.alignment, inv, frames);
    CHECK(align.phonemes() == load_labels(dir / e.labels, inv));
    CHECK(load_f0(dir / e.f0).frames() == frames);
  }
  fs::remove_all(dir);
}

TEST_CASE("dysarthric tempo stretches every phoneme") {
  const auto inv = toy_inventory(12);
  Rng rng(5);
  const std::vector<int> text{10, 0, 4, 1, 8, 2, 10};
  const auto base = healthy_durations(text, inv, rng);
  DysarthriaProfile slow;
  Rng r1(1), r2(1);
  const auto healthy = render_utterance(text, base, SpeakerTraits{}, healthy_profile(), {}, inv, r1);
  const auto dys = render_utterance(text, base, SpeakerTraits{}, slow, {0}, inv, r2);
  REQUIRE(healthy.alignment.entries.size() == dys.alignment.entries.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const double expect = slow.tempo_factor * healthy.alignment.entries[i].duration_frames;
    CHECK(std::abs(dys.alignment.entries[i].duration_frames - expect) <= 1.0);
  }

  SUBCASE("degenerate profile reproduces the healthy alignment") {
    DysarthriaProfile none = slow;
    none.tempo_factor = 1.0;
    none.substitution_rate = 0.0;
    Rng r3(1);
    const auto same = render_utterance(text, base, SpeakerTraits{}, none, {}, inv, r3);
    CHECK(same.alignment.durations() == healthy.alignment.durations());
    CHECK(same.alignment.phonemes() == healthy.alignment.phonemes());
  }
}

TEST_CASE("F0 tracker follows the generated contour") {
  const auto inv = toy_inventory(12);
  for (double base_hz : {85.0, 140.0, 250.0}) {
    SpeakerTraits t;
    t.base_f0_hz = base_hz;
    Rng rng(3);
    const std::vector<int> text{10, 0, 5, 1, 7, 3, 2, 10};
    const auto r = render_utterance(text, healthy_durations(text, inv, rng), t, healthy_profile(), {}, inv, rng);
    const F0Track est = extract_f0(r.wav, FrameConfig{});
    REQUIRE(est.frames() == r.f0.frames());
    double sq = 0;
    int n = 0, agree = 0, voiced = 0;
    for (Index i = 0; i < est.frames(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (r.f0.voicing[k]) {
        ++voiced;
        agree += est.voicing[k];
        if (est.voicing[k]) {
          sq += std::pow(est.log_f0(i) - r.f0.log_f0(i), 2);
          ++n;
        }
      }
    }
    INFO("base " << base_hz << " rmse " << std::sqrt(sq / n) << " voiced agree " << agree << "/" << voiced);
    CHECK(std::sqrt(sq / n) < 0.05);
    CHECK(agree > 0.8 * voiced);
  }
}

TEST_CASE("manifest validation") {
  const auto dir = scratch("validate");
  Manifest m = synthesize_toy_corpus(small_config(), dir);
  SUBCASE("two prosody references are rejected") {
    for (auto& e : m.entries)
      if (e.speaker == "h01") e.role = Role::kProsodyReference;
    CHECK_THROWS_AS(m.validate(), FormatError);
  }
  SUBCASE("missing files are reported") {
    fs::remove(dir / m.entries.front().wav);
    CHECK_THROWS_AS(load_manifest(dir / "manifest.tsv"), IoError);
  }
  SUBCASE("header version is checked") {
    std::string text = slurp(dir / "manifest.tsv");
    text.replace(0, std::string(kManifestHeader).size(), "#dsr-manifest v9");
    std::ofstream(dir / "manifest.tsv") << text;
    CHECK_THROWS_AS(load_manifest(dir / "manifest.tsv"), VersionError);
  }
  SUBCASE("bad config is rejected") {
    ToyCorpusConfig bad = small_config();
    bad.dysarthria.tempo_factor = 0.5;
    CHECK_THROWS(synthesize_toy_corpus(bad, dir / "x"));
  }
  fs::remove_all(dir);
}
