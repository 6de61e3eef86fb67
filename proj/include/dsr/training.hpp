#pragma once

// Stage-wise training of the SV-DSR components.
//
// Every stage draws its batch for global step k from
// derive_rng(seed, stage, k), so resuming from a saved Progress replays
// exactly the batches an uninterrupted run would have seen.

#include "dsr/config.hpp"
#include "dsr/data.hpp"
#include "dsr/models.hpp"
#include "dsr/optim.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace dsr::training {

/// Appends one JSON object per step: {"stage", "step", losses..., "time"}.
class ReportWriter {
 public:
  ReportWriter() = default;
  explicit ReportWriter(const std::filesystem::path& path, bool append = true);
  void write(const std::string& stage, long step, const std::map<std::string, double>& losses);
  bool is_open() const { return out_.is_open(); }

 private:
  std::ofstream out_;
};

struct TrainReport {
  std::string stage;
  std::vector<double> losses;  // primary loss, one entry per step run
  std::map<std::string, std::vector<double>> columns;
  double seconds = 0.0;

  void record(const std::map<std::string, double>& values, const std::string& primary);
};

/// A trainable parameter set with its optimizer moments.
struct Progress {
  ModelParams params;
  ModelParams optimizer;  // tag kOptimizerState

  long step() const;
};

Progress start(ModelParams params, const StageConfig& stage);
void save_progress(const std::filesystem::path& path, const Progress& progress);
Progress load_progress(const std::filesystem::path& path);

struct StageContext {
  const data::Dataset& data;
  const StageConfig& stage;
  ReportWriter* report = nullptr;
};

/// Phoneme posteriors of the alignment's label sequence (teacher forced),
/// one row per aligned phoneme.
Matrix aligned_posteriors(const ModelParams& speech_encoder, const data::Utterance& utt);

// Speech encoder -----------------------------------------------------------

/// Cross-entropy training on the given utterances. Throws on an empty set.
TrainReport train_speech_encoder(const StageContext& ctx, const std::vector<std::string>& ids, Progress& progress,
                                 long steps);
/// Healthy + reference training split.
TrainReport pretrain_speech_encoder(const StageContext& ctx, Progress& progress, long steps);
/// Same objective restricted to one speaker; Progress should start from a
/// copy of the pretrained parameters. Throws if `ids` span several speakers.
TrainReport finetune_speech_encoder(const StageContext& ctx, const std::vector<std::string>& ids, Progress& progress,
                                    long steps);

// Prosody corrector ---------------------------------------------------------

/// MSE on log(alignment duration) from aligned posteriors.
TrainReport train_duration_predictor(const StageContext& ctx, const ModelParams& speech_encoder,
                                     const std::vector<std::string>& ids, Progress& progress, long steps);
/// MSE on normalised interpolated log-F0 from duration-expanded posteriors.
TrainReport train_pitch_predictor(const StageContext& ctx, const ModelParams& speech_encoder,
                                  const std::vector<std::string>& ids, Progress& progress, long steps);

// Speaker encoder -----------------------------------------------------------

struct Ge2eBatching {
  int speakers = 4;
  int utterances = 4;
  int crop = 48;
};

/// GE2E over N x M random crops. Needs at least N speakers with M
/// utterances each.
TrainReport train_speaker_encoder(const StageContext& ctx, const std::vector<std::string>& ids,
                                  const Ge2eBatching& batching, Progress& progress, long steps);

// Generator -----------------------------------------------------------------

/// Inputs and target of one generator example.
struct Triple {
  Matrix p;        // T x |P| expanded posteriors
  Vector v;        // T normalised log-F0
  RowVector e;     // speaker embedding of the target
  Matrix m;        // T x 80 normalised target mel
};

/// Aligned posteriors expanded by the alignment durations, the utterance's
/// own F0 and its speaker embedding.
Triple make_triple(const data::Utterance& utt, const ModelParams& speech_encoder, const ModelParams& speaker_encoder);

/// generation_loss over triples; the speaker encoder is used frozen.
TrainReport train_generator(const StageContext& ctx, const ModelParams& speech_encoder,
                            const ModelParams& speaker_encoder, const std::vector<std::string>& ids,
                            Progress& progress, long steps);

/// Mean generation loss of `gen` over the triples of `ids`.
double mean_generation_loss(const data::Dataset& data, const ModelParams& gen, const ModelParams& speech_encoder,
                            const ModelParams& speaker_encoder, const std::vector<std::string>& ids);

/// Indices of a batch of `size` distinct items drawn from [0, n).
std::vector<std::size_t> draw_batch(std::size_t n, std::size_t size, Rng& rng);

}  // namespace dsr::training
