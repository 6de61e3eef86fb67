#pragma once

// The six networks of the reconstruction system and their forward passes.
//
// Each network is described by a config struct, initialised into a
// ModelParams (which records the config as hyper-parameters), and evaluated
// through free functions over a bound ParamSet so the same code serves
// training (trainable leaves) and inference (constants).

#include "dsr/autodiff.hpp"
#include "dsr/params.hpp"

#include <cstdint>
#include <vector>

namespace dsr::models {

inline constexpr int kEmbeddingDim = 256;
inline constexpr int kGeneratorMels = 80;
inline constexpr int kSpeakerMels = 40;
inline constexpr int kDiscriminatorCrop = 64;
inline constexpr double kDiscriminatorEps = 1e-7;

// ---------------------------------------------------------------------------
// Speech encoder: strided convolutions (x4 in time), two bidirectional LSTM
// layers, location-aware attention and a one-layer LSTM decoder over the
// phoneme inventory.

struct SpeechEncoderConfig {
  int phonemes = 12;
  int input_dim = 120;
  int conv_channels = 128;
  int encoder_hidden = 128;  // per direction
  int decoder_hidden = 128;
  int attention_dim = 128;
  int token_embedding = 32;
  int location_filters = 8;
  int location_kernel = 15;
};

ModelParams init_speech_encoder(const SpeechEncoderConfig& cfg, std::uint64_t seed);

/// Encoder time steps produced for `frames` input frames.
Index encoder_steps(Index frames);

struct DecoderOutput {
  ad::Var logits;       // steps x |P|
  Matrix attention;     // steps x encoder_steps
};

/// Teacher-forced decoding of `labels` followed by EOS.
DecoderOutput speech_encoder_teacher_forced(const ParamSet& params, const ad::Var& features,
                                            const std::vector<int>& labels);

/// Mean per-position cross-entropy of labels + EOS under teacher forcing.
ad::Var speech_encoder_loss(const ParamSet& params, const Matrix& features, const std::vector<int>& labels);

struct DecodedPhonemes {
  std::vector<int> ids;  // without EOS
  Matrix posteriors;     // ids.size() x |P|, rows on the simplex
};

/// Greedy decoding. Throws Error("decode runaway") past 3x the encoder steps.
DecodedPhonemes speech_encoder_decode(const ModelParams& params, const Matrix& features);

/// Posterior rows for a known phoneme sequence (one row per label),
/// obtained by teacher forcing. Used when an alignment fixes the sequence.
Matrix speech_encoder_forced_posteriors(const ModelParams& params, const Matrix& features,
                                        const std::vector<int>& labels);

/// Repeats row i of `embeddings` durations[i] times.
Matrix expand_by_duration(const Matrix& embeddings, const std::vector<int>& durations);

// ---------------------------------------------------------------------------
// Prosody corrector: duration predictor (per phoneme, log frames) and pitch
// predictor (per frame, normalised log-F0). Two convolutions and a linear
// head each.

struct PredictorConfig {
  int phonemes = 12;
  int channels = 64;
  int kernel = 3;
};

ModelParams init_duration_predictor(const PredictorConfig& cfg, std::uint64_t seed);
ModelParams init_pitch_predictor(const PredictorConfig& cfg, std::uint64_t seed);

/// N x 1 predicted log-durations.
ad::Var duration_forward(const ParamSet& params, const ad::Var& embeddings);
/// round(exp(log-duration)), at least 1.
std::vector<int> predict_durations(const ModelParams& params, const Matrix& embeddings);

/// T x 1 predicted (normalised) log-F0.
ad::Var pitch_forward(const ParamSet& params, const ad::Var& expanded);
Vector predict_pitch(const ModelParams& params, const Matrix& expanded);

// ---------------------------------------------------------------------------
// Speaker encoder: stacked LSTM over 40-bin log-mel frames, final hidden
// state, linear projection to 256 and L2 normalisation. Also carries the
// GE2E scale and offset.

struct SpeakerEncoderConfig {
  int input_dim = kSpeakerMels;
  int hidden = 64;
  int layers = 3;
  int embedding = kEmbeddingDim;
};

ModelParams init_speaker_encoder(const SpeakerEncoderConfig& cfg, std::uint64_t seed);
/// 1 x embedding unit vector.
ad::Var speaker_forward(const ParamSet& params, const ad::Var& mel40);
RowVector embed_speaker(const ModelParams& params, const Matrix& mel40);
/// Keeps the GE2E scale strictly positive after an update.
void clamp_ge2e_scale(ModelParams& params);

// ---------------------------------------------------------------------------
// Speech generator: [p | v | e] per frame -> 1-D conv stack with residual
// connections -> linear projection to 80 mel bins.

struct GeneratorConfig {
  int phonemes = 12;
  int embedding = kEmbeddingDim;
  int channels = 64;
  int kernel = 5;
  int layers = 4;
  int mels = kGeneratorMels;
};

ModelParams init_generator(const GeneratorConfig& cfg, std::uint64_t seed);
/// expanded: T x |P|; log_f0: T x 1; embedding: 1 x E. Returns T x mels.
ad::Var generator_forward(const ParamSet& params, const ad::Var& expanded, const ad::Var& log_f0,
                          const ad::Var& embedding);
Matrix generate(const ModelParams& params, const Matrix& expanded, const Vector& log_f0,
                const RowVector& embedding);

// ---------------------------------------------------------------------------
// System discriminator: strided 2-D convolutions over a fixed-length mel crop,
// patch logits averaged, sigmoid, clamped to [eps, 1 - eps].

struct DiscriminatorConfig {
  int crop = kDiscriminatorCrop;
  int mels = kGeneratorMels;
  int channels = 8;  // doubled at each strided layer
  int strided_layers = 3;
};

ModelParams init_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);
/// crop x mels input; 1 x 1 probability that the crop came from SV-DSR.
ad::Var discriminator_forward(const ParamSet& params, const ad::Var& mel);
double discriminate(const ModelParams& params, const Matrix& mel);

/// Contiguous `length`-frame window starting at `offset`; inputs shorter than
/// `length` are first tiled by repetition.
Matrix crop_frames(const Matrix& mel, Index length, Index offset);
/// Offset for crop_frames drawn uniformly from the valid range.
Index draw_crop_offset(Index frames, Index length, Rng& rng);
ad::Var crop_frames(const ad::Var& mel, Index length, Index offset);

}  // namespace dsr::models
