#pragma once

// Reduced network sizes and random inputs for unit tests.

#include "dsr/models.hpp"

namespace dsr::testing {

inline Matrix rnd(Index r, Index c, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian_matrix(rng, r, c, 1.0);
}

inline Matrix simplex_rows(Index r, Index c, std::uint64_t seed) {
  Matrix m = rnd(r, c, seed).array().exp();
  for (Index i = 0; i < r; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

inline models::SpeechEncoderConfig small_se() {
  models::SpeechEncoderConfig c;
  c.phonemes = 5;
  c.input_dim = 6;
  c.conv_channels = 8;
  c.encoder_hidden = 4;
  c.decoder_hidden = 8;
  c.attention_dim = 8;
  c.token_embedding = 4;
  c.location_filters = 2;
  c.location_kernel = 3;
  return c;
}

inline models::SpeakerEncoderConfig small_spk() { return {6, 8, 2, 8}; }

inline models::GeneratorConfig small_gen() {
  models::GeneratorConfig c;
  c.phonemes = 5;
  c.embedding = 8;
  c.channels = 8;
  c.kernel = 3;
  c.layers = 3;
  c.mels = 10;
  return c;
}

inline models::DiscriminatorConfig small_disc() { return {16, 10, 2, 2}; }

}  // namespace dsr::testing
