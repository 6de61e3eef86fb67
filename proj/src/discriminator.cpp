#include "dsr/models.hpp"

#include "model_init.hpp"

namespace dsr::models {

namespace {

constexpr int kStridedKernel = 4;
constexpr int kHeadKernel = 3;
constexpr double kLeakySlope = 0.01;

}  // namespace

ModelParams init_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  Rng rng = derive_rng(seed, stream_id("discriminator"));
  ModelParams p;
  p.tag = ModuleTag::kDiscriminator;
  p.hyper = {{"crop", cfg.crop}, {"mels", cfg.mels}, {"channels", cfg.channels}, {"strided_layers", cfg.strided_layers}};
  int in = 1;
  int out = cfg.channels;
  for (int l = 0; l < cfg.strided_layers; ++l) {
    p.tensors["conv" + std::to_string(l) + "_w"] = detail::glorot(rng, kStridedKernel * kStridedKernel * in, out);
    p.tensors["conv" + std::to_string(l) + "_b"] = detail::zeros_row(out);
    in = out;
    out *= 2;
  }
  p.tensors["head_w"] = detail::glorot(rng, kHeadKernel * kHeadKernel * in, 1);
  p.tensors["head_b"] = detail::zeros_row(1);
  return p;
}

ad::Var discriminator_forward(const ParamSet& params, const ad::Var& mel) {
  if (mel.rows() != params.hyper("crop"))
    throw ShapeError("discriminator: crop length mismatch (" + std::to_string(mel.rows()) + " frames, expected " +
                     std::to_string(params.hyper("crop")) + ")");
  if (mel.cols() != params.hyper("mels")) throw ShapeError("discriminator: wrong mel width");
  ad::Image shape{mel.rows(), mel.cols()};
  ad::Var h = ad::flatten_rows(mel);
  for (long l = 0; l < params.hyper("strided_layers"); ++l) {
    const std::string pre = "conv" + std::to_string(l);
    h = ad::leaky_relu(ad::conv2d(h, shape, params[pre + "_w"], params[pre + "_b"], kStridedKernel, 2, 1), kLeakySlope);
    shape = ad::conv2d_output(shape, kStridedKernel, 2, 1);
  }
  ad::Var logits = ad::conv2d(h, shape, params["head_w"], params["head_b"], kHeadKernel, 1, 1);
  return ad::clamp(ad::sigmoid(ad::mean(logits)), kDiscriminatorEps, 1.0 - kDiscriminatorEps);
}

double discriminate(const ModelParams& params, const Matrix& mel) {
  ParamSet p(params, false);
  return discriminator_forward(p, ad::constant(mel)).scalar();
}

Matrix crop_frames(const Matrix& mel, Index length, Index offset) {
  if (mel.rows() == 0) throw ShapeError("crop_frames: empty input");
  Matrix out(length, mel.cols());
  for (Index i = 0; i < length; ++i) out.row(i) = mel.row((offset + i) % mel.rows());
  return out;
}

Index draw_crop_offset(Index frames, Index length, Rng& rng) {
  if (frames <= length) return 0;
  return std::uniform_int_distribution<Index>(0, frames - length)(rng);
}

ad::Var crop_frames(const ad::Var& mel, Index length, Index offset) {
  if (mel.rows() == 0) throw ShapeError("crop_frames: empty input");
  if (offset + length <= mel.rows()) return ad::slice_rows(mel, offset, length);
  std::vector<ad::Var> parts;
  Index remaining = length;
  Index at = offset % mel.rows();
  while (remaining > 0) {
    const Index take = std::min(remaining, mel.rows() - at);
    parts.push_back(ad::slice_rows(mel, at, take));
    remaining -= take;
    at = 0;
  }
  return ad::concat_rows(parts);
}

}  // namespace dsr::models
