#include "dsr/models.hpp"

#include "model_init.hpp"

namespace dsr::models {

ModelParams init_speaker_encoder(const SpeakerEncoderConfig& cfg, std::uint64_t seed) {
  Rng rng = derive_rng(seed, stream_id("speaker_encoder"));
  ModelParams p;
  p.tag = ModuleTag::kSpeakerEncoder;
  p.hyper = {{"input_dim", cfg.input_dim},
             {"hidden", cfg.hidden},
             {"layers", cfg.layers},
             {"embedding", cfg.embedding}};
  for (int l = 0; l < cfg.layers; ++l)
    detail::init_lstm(p.tensors, rng, "lstm" + std::to_string(l), l == 0 ? cfg.input_dim : cfg.hidden, cfg.hidden);
  p.tensors["proj_w"] = detail::glorot(rng, cfg.hidden, cfg.embedding);
  p.tensors["proj_b"] = detail::zeros_row(cfg.embedding);
  p.tensors["ge2e_w"] = Matrix::Constant(1, 1, 10.0);
  p.tensors["ge2e_b"] = Matrix::Constant(1, 1, -5.0);
  return p;
}

ad::Var speaker_forward(const ParamSet& params, const ad::Var& mel40) {
  if (mel40.rows() == 0) throw ShapeError("speaker encoder: empty input");
  if (mel40.cols() != params.hyper("input_dim")) throw ShapeError("speaker encoder: wrong mel width");
  ad::Var h = mel40;
  for (long l = 0; l < params.hyper("layers"); ++l) {
    const std::string pre = "lstm" + std::to_string(l);
    h = ad::lstm(h, params[pre + "_wx"], params[pre + "_wh"], params[pre + "_b"]);
  }
  ad::Var last = ad::slice_rows(h, h.rows() - 1, 1);
  return ad::normalize_rows(ad::add(ad::matmul(last, params["proj_w"]), params["proj_b"]));
}

RowVector embed_speaker(const ModelParams& params, const Matrix& mel40) {
  ParamSet p(params, false);
  return speaker_forward(p, ad::constant(mel40)).value().row(0);
}

void clamp_ge2e_scale(ModelParams& params) {
  auto& w = params.at("ge2e_w");
  w(0, 0) = std::max(w(0, 0), 1e-6);
}

}  // namespace dsr::models
