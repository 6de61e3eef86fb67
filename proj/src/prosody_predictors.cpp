#include "dsr/models.hpp"

#include "model_init.hpp"

#include <cmath>

namespace dsr::models {

namespace {

ModelParams init_predictor(ModuleTag tag, const PredictorConfig& cfg, std::uint64_t seed) {
  Rng rng = derive_rng(seed, stream_id(to_string(tag)));
  ModelParams p;
  p.tag = tag;
  p.hyper = {{"phonemes", cfg.phonemes}, {"channels", cfg.channels}, {"kernel", cfg.kernel}};
  p.tensors["conv1_w"] = detail::glorot(rng, cfg.kernel * cfg.phonemes, cfg.channels);
  p.tensors["conv1_b"] = detail::zeros_row(cfg.channels);
  p.tensors["conv2_w"] = detail::glorot(rng, cfg.kernel * cfg.channels, cfg.channels);
  p.tensors["conv2_b"] = detail::zeros_row(cfg.channels);
  p.tensors["head_w"] = detail::glorot(rng, cfg.channels, 1);
  p.tensors["head_b"] = detail::zeros_row(1);
  return p;
}

ad::Var predictor_forward(const ParamSet& p, const ad::Var& x) {
  if (x.rows() == 0) throw ShapeError(to_string(p.params().tag) + ": empty input");
  if (x.cols() != p.hyper("phonemes")) throw ShapeError(to_string(p.params().tag) + ": wrong inventory width");
  const int k = static_cast<int>(p.hyper("kernel"));
  ad::Var h = ad::relu(ad::conv1d(x, p["conv1_w"], p["conv1_b"], k, 1, k / 2));
  h = ad::relu(ad::conv1d(h, p["conv2_w"], p["conv2_b"], k, 1, k / 2));
  return ad::add(ad::matmul(h, p["head_w"]), p["head_b"]);
}

}  // namespace

ModelParams init_duration_predictor(const PredictorConfig& cfg, std::uint64_t seed) {
  auto p = init_predictor(ModuleTag::kDurationPredictor, cfg, seed);
  // Start near a plausible phoneme length (~7 frames).
  p.tensors["head_b"](0, 0) = 2.0;
  return p;
}

ModelParams init_pitch_predictor(const PredictorConfig& cfg, std::uint64_t seed) {
  return init_predictor(ModuleTag::kPitchPredictor, cfg, seed);
}

ad::Var duration_forward(const ParamSet& params, const ad::Var& embeddings) {
  return predictor_forward(params, embeddings);
}

std::vector<int> predict_durations(const ModelParams& params, const Matrix& embeddings) {
  ParamSet p(params, false);
  const Matrix log_d = duration_forward(p, ad::constant(embeddings)).value();
  std::vector<int> out;
  for (Index i = 0; i < log_d.rows(); ++i) {
    const double frames = std::exp(std::min(log_d(i, 0), 10.0));
    out.push_back(std::max(1, static_cast<int>(std::lround(frames))));
  }
  return out;
}

ad::Var pitch_forward(const ParamSet& params, const ad::Var& expanded) {
  return predictor_forward(params, expanded);
}

Vector predict_pitch(const ModelParams& params, const Matrix& expanded) {
  ParamSet p(params, false);
  return pitch_forward(p, ad::constant(expanded)).value().col(0);
}

}  // namespace dsr::models
