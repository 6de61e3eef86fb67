#include "dsr/models.hpp"

#include "model_init.hpp"

#include <array>

namespace dsr::models {

ModelParams init_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  Rng rng = derive_rng(seed, stream_id("generator"));
  ModelParams p;
  p.tag = ModuleTag::kGenerator;
  p.hyper = {{"phonemes", cfg.phonemes}, {"embedding", cfg.embedding}, {"channels", cfg.channels},
             {"kernel", cfg.kernel},     {"layers", cfg.layers},       {"mels", cfg.mels}};
  const int input = cfg.phonemes + 1 + cfg.embedding;
  for (int l = 0; l < cfg.layers; ++l) {
    const int fan_in = (l == 0 ? input : cfg.channels) * cfg.kernel;
    p.tensors["conv" + std::to_string(l) + "_w"] = detail::glorot(rng, fan_in, cfg.channels);
    p.tensors["conv" + std::to_string(l) + "_b"] = detail::zeros_row(cfg.channels);
  }
  p.tensors["out_w"] = detail::glorot(rng, cfg.channels, cfg.mels);
  p.tensors["out_b"] = detail::zeros_row(cfg.mels);
  return p;
}

ad::Var generator_forward(const ParamSet& params, const ad::Var& expanded, const ad::Var& log_f0,
                          const ad::Var& embedding) {
  const Index frames = expanded.rows();
  if (frames == 0) throw ShapeError("generator: empty input");
  if (log_f0.rows() != frames || log_f0.cols() != 1)
    throw ShapeError("generator: phoneme and F0 frame counts differ (" + std::to_string(frames) + " vs " +
                     std::to_string(log_f0.rows()) + ")");
  if (expanded.cols() != params.hyper("phonemes")) throw ShapeError("generator: wrong inventory width");
  if (embedding.rows() != 1 || embedding.cols() != params.hyper("embedding"))
    throw ShapeError("generator: wrong speaker embedding shape");
  const int k = static_cast<int>(params.hyper("kernel"));
  // Only the contour shape enters; the level is left to the speaker embedding.
  const ad::Var contour = ad::sub(log_f0, ad::broadcast_rows(ad::mean_rows(log_f0), frames));
  const std::array<ad::Var, 3> parts{expanded, contour, ad::broadcast_rows(embedding, frames)};
  ad::Var h = ad::relu(ad::conv1d(ad::concat_cols(parts), params["conv0_w"], params["conv0_b"], k, 1, k / 2));
  for (long l = 1; l < params.hyper("layers"); ++l) {
    const std::string pre = "conv" + std::to_string(l);
    h = ad::add(h, ad::relu(ad::conv1d(h, params[pre + "_w"], params[pre + "_b"], k, 1, k / 2)));
  }
  return ad::add(ad::matmul(h, params["out_w"]), params["out_b"]);
}

Matrix generate(const ModelParams& params, const Matrix& expanded, const Vector& log_f0,
                const RowVector& embedding) {
  ParamSet p(params, false);
  return generator_forward(p, ad::constant(expanded), ad::constant(log_f0), ad::constant(embedding)).value();
}

}  // namespace dsr::models
