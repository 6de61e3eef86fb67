#pragma once

// Objective metrics for reconstruction systems.

#include "dsr/data.hpp"
#include "dsr/models.hpp"
#include "dsr/reconstruct.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dsr::eval {

/// Levenshtein distance over the reference length. Throws on an empty
/// reference.
double phoneme_error_rate(std::span<const int> hypothesis, std::span<const int> reference);
std::size_t edit_distance(std::span<const int> a, std::span<const int> b);

/// Mean per-frame Euclidean distance. Equal lengths are compared frame by
/// frame; otherwise a DTW path is found first and the mean is taken along
/// it. Symmetric in its arguments.
double mel_distortion(const Matrix& a, const Matrix& b);

/// Cosine similarity of two row vectors.
double cosine(const RowVector& a, const RowVector& b);

/// Embeds a normalised 80-bin mel with a speaker encoder that reads
/// normalised 40-bin mels, going through the linear spectrum.
RowVector embed_mel80(const ModelParams& speaker_encoder, const Matrix& normalized_mel80, const StatsTable& stats);

/// Cosine between `embedding` and the renormalised mean of `references`.
double speaker_similarity(const RowVector& embedding, const std::vector<RowVector>& references);

/// Equal error rate over scored trials (true = same speaker). Needs at
/// least one trial of each kind.
double equal_error_rate(std::span<const double> scores, const std::vector<bool>& target);
/// EER of all utterance pairs among `ids`, scored by cosine.
double speaker_eer(const data::Dataset& data, const ModelParams& speaker_encoder, const std::vector<std::string>& ids);

/// Toy phoneme recogniser used as a stand-in listener: nearest class mean
/// of utterance-mean-normalised 80-bin mel frames, learned from healthy
/// alignments, followed by run smoothing. SIL is never emitted.
/// Toy stand-in for an ASR system trained on healthy speech: a softmax frame
/// classifier over +-2 stacked frames of utterance-mean-removed mel80, fitted
/// to healthy alignments, then run smoothing and repeat collapsing.
class Recognizer {
 public:
  static Recognizer train(const data::Dataset& data, const std::vector<std::string>& ids, int iterations = 300);
  std::vector<int> recognize(const Matrix& normalized_mel80) const;
  /// Per-frame class decisions before smoothing.
  std::vector<int> classify_frames(const Matrix& normalized_mel80) const;
  /// Labels without SIL, the reference the recogniser is scored against.
  std::vector<int> reference(const std::vector<int>& labels) const;

 private:
  Matrix weights_;  // (5*80 + 1) x classes
  int sil_ = -1;
};

/// Mean absolute error in frames between predicted and alignment durations
/// (aligned posteriors as input).
double duration_mae(const data::Dataset& data, const SystemBundle& system, const std::vector<std::string>& ids);
/// RMSE of predicted vs extracted log-F0 over voiced frames, in log-Hz.
double pitch_rmse(const data::Dataset& data, const SystemBundle& system, const std::vector<std::string>& ids);

struct UtteranceScore {
  std::string id;
  std::string system;
  double similarity = 0.0;
  double distortion = 0.0;
  double per = 0.0;
  double per_input = 0.0;  // recogniser on the unprocessed input
  std::optional<double> f_d;
  bool failed = false;     // reconstruction raised
  std::string error;
};

struct SystemSummary {
  std::string system;
  std::size_t utterances = 0;
  std::size_t failures = 0;
  double similarity = 0.0;
  double distortion = 0.0;
  double per = 0.0;
  double per_input = 0.0;
  std::optional<double> f_d;
};

struct EvalReport {
  std::string speaker;
  std::string mode;
  std::vector<UtteranceScore> utterances;
  std::vector<SystemSummary> systems;
  std::map<std::string, double> extra;  // EER, prosody errors, ...

  std::string table() const;
  void write_jsonl(const std::filesystem::path& path) const;
};

struct EvalOptions {
  ReconstructionMode mode = ReconstructionMode::kGP;
  const ModelParams* discriminator = nullptr;  // adds mean f_d when set
};

/// Scores each named system on `ids`. Similarity is measured with the
/// first system's speaker encoder (the SV-DSR one) against the speaker's
/// training utterances.
EvalReport evaluate(const data::Dataset& data, const std::vector<std::pair<std::string, const SystemBundle*>>& systems,
                    const std::string& speaker, const std::vector<std::string>& ids, const Recognizer& recognizer,
                    const EvalOptions& options = {});

}  // namespace dsr::eval
