#include "dsr/models.hpp"

#include "model_init.hpp"

#include <array>

namespace dsr::models {

using detail::glorot;

ModelParams init_speech_encoder(const SpeechEncoderConfig& cfg, std::uint64_t seed) {
  Rng rng = derive_rng(seed, stream_id("speech_encoder"));
  ModelParams p;
  p.tag = ModuleTag::kSpeechEncoder;
  p.hyper = {{"phonemes", cfg.phonemes},
             {"input_dim", cfg.input_dim},
             {"conv_channels", cfg.conv_channels},
             {"encoder_hidden", cfg.encoder_hidden},
             {"decoder_hidden", cfg.decoder_hidden},
             {"attention_dim", cfg.attention_dim},
             {"token_embedding", cfg.token_embedding},
             {"location_filters", cfg.location_filters},
             {"location_kernel", cfg.location_kernel}};
  auto& t = p.tensors;
  const int c = cfg.conv_channels;
  const int h = cfg.encoder_hidden;
  const int d = cfg.decoder_hidden;
  const int a = cfg.attention_dim;
  t["conv1_w"] = glorot(rng, 3 * cfg.input_dim, c);
  t["conv1_b"] = detail::zeros_row(c);
  t["conv2_w"] = glorot(rng, 3 * c, c);
  t["conv2_b"] = detail::zeros_row(c);
  detail::init_lstm(t, rng, "enc1_fwd", c, h);
  detail::init_lstm(t, rng, "enc1_bwd", c, h);
  detail::init_lstm(t, rng, "enc2_fwd", 2 * h, h);
  detail::init_lstm(t, rng, "enc2_bwd", 2 * h, h);
  t["token_embed"] = gaussian_matrix(rng, cfg.phonemes, cfg.token_embedding, 0.3);
  detail::init_lstm(t, rng, "dec", cfg.token_embedding + 2 * h, d);
  t["att_keys"] = glorot(rng, 2 * h, a);
  t["att_query"] = glorot(rng, d, a);
  t["att_location"] = glorot(rng, cfg.location_filters, a);
  t["att_bias"] = detail::zeros_row(a);
  t["att_score"] = glorot(rng, a, 1);
  t["loc_conv"] = glorot(rng, 2 * cfg.location_kernel, cfg.location_filters);
  t["out_w"] = glorot(rng, d + 2 * h, cfg.phonemes);
  t["out_b"] = detail::zeros_row(cfg.phonemes);
  return p;
}

Index encoder_steps(Index frames) {
  auto down = [](Index n) { return (n - 1) / 2 + 1; };
  return down(down(frames));
}

namespace {

ad::Var bidirectional(const ParamSet& p, const ad::Var& x, const std::string& prefix) {
  const std::array<ad::Var, 2> parts{
      ad::lstm(x, p[prefix + "_fwd_wx"], p[prefix + "_fwd_wh"], p[prefix + "_fwd_b"], false),
      ad::lstm(x, p[prefix + "_bwd_wx"], p[prefix + "_bwd_wh"], p[prefix + "_bwd_b"], true)};
  return ad::concat_cols(parts);
}

ad::Var encode(const ParamSet& p, const ad::Var& features) {
  if (features.rows() == 0) throw ShapeError("speech encoder: zero-length input");
  if (features.cols() != p.hyper("input_dim"))
    throw ShapeError("speech encoder: expected " + std::to_string(p.hyper("input_dim")) + " feature columns");
  ad::Var h = ad::relu(ad::conv1d(features, p["conv1_w"], p["conv1_b"], 3, 2, 1));
  h = ad::relu(ad::conv1d(h, p["conv2_w"], p["conv2_b"], 3, 2, 1));
  return bidirectional(p, bidirectional(p, h, "enc1"), "enc2");
}

// Attention decoder state carried between steps.
class Decoder {
 public:
  Decoder(const ParamSet& p, ad::Var encoded) : p_(p), encoded_(std::move(encoded)) {
    const Index steps = encoded_.rows();
    const Index d = p.hyper("decoder_hidden");
    keys_ = ad::add(ad::matmul(encoded_, p["att_keys"]), p["att_bias"]);
    state_ = ad::constant(Matrix::Zero(1, d));
    cell_ = ad::constant(Matrix::Zero(1, d));
    context_ = ad::constant(Matrix::Zero(1, encoded_.cols()));
    Matrix init = Matrix::Zero(steps, 2);
    init(0, 0) = 1.0;
    init(0, 1) = 1.0;
    attention_state_ = ad::constant(init);
  }

  /// Consumes the previous token, returns 1 x |P| logits.
  ad::Var step(int prev_token) {
    const Index d = p_.hyper("decoder_hidden");
    const int kernel = static_cast<int>(p_.hyper("location_kernel"));
    const std::array<ad::Var, 2> in{ad::slice_rows(p_["token_embed"], prev_token, 1), context_};
    ad::Var z = ad::add(ad::add(ad::matmul(ad::concat_cols(in), p_["dec_wx"]), ad::matmul(state_, p_["dec_wh"])),
                        p_["dec_b"]);
    ad::Var i = ad::sigmoid(ad::slice_cols(z, 0, d));
    ad::Var f = ad::sigmoid(ad::slice_cols(z, d, d));
    ad::Var g = ad::tanh(ad::slice_cols(z, 2 * d, d));
    ad::Var o = ad::sigmoid(ad::slice_cols(z, 3 * d, d));
    cell_ = ad::add(ad::cmul(f, cell_), ad::cmul(i, g));
    state_ = ad::cmul(o, ad::tanh(cell_));

    ad::Var location = ad::conv1d(attention_state_, p_["loc_conv"], {}, kernel, 1, kernel / 2);
    ad::Var pre = ad::add(ad::add(keys_, ad::matmul(location, p_["att_location"])), ad::matmul(state_, p_["att_query"]));
    ad::Var energies = ad::matmul(ad::tanh(pre), p_["att_score"]);
    ad::Var weights = ad::transpose(ad::softmax_rows(ad::transpose(energies)));
    context_ = ad::matmul(ad::transpose(weights), encoded_);
    const std::array<ad::Var, 2> att{weights, ad::add(ad::slice_cols(attention_state_, 1, 1), weights)};
    attention_state_ = ad::concat_cols(att);
    last_weights_ = weights.value().transpose();

    const std::array<ad::Var, 2> out{state_, context_};
    return ad::add(ad::matmul(ad::concat_cols(out), p_["out_w"]), p_["out_b"]);
  }

  const Matrix& last_weights() const { return last_weights_; }

 private:
  const ParamSet& p_;
  ad::Var encoded_;
  ad::Var keys_;
  ad::Var state_;
  ad::Var cell_;
  ad::Var context_;
  ad::Var attention_state_;
  Matrix last_weights_;
};

int eos_of(const ParamSet& p) { return static_cast<int>(p.hyper("phonemes")) - 1; }

}  // namespace

DecoderOutput speech_encoder_teacher_forced(const ParamSet& params, const ad::Var& features,
                                            const std::vector<int>& labels) {
  const int eos = eos_of(params);
  Decoder decoder(params, encode(params, features));
  std::vector<ad::Var> logits;
  DecoderOutput out;
  int prev = eos;
  for (std::size_t i = 0; i <= labels.size(); ++i) {
    logits.push_back(decoder.step(prev));
    if (out.attention.size() == 0) out.attention.resize(static_cast<Index>(labels.size() + 1), decoder.last_weights().cols());
    out.attention.row(static_cast<Index>(i)) = decoder.last_weights();
    if (i < labels.size()) {
      if (labels[i] < 0 || labels[i] >= eos) throw ShapeError("speech encoder: label id out of range");
      prev = labels[i];
    }
  }
  out.logits = ad::concat_rows(logits);
  return out;
}

ad::Var speech_encoder_loss(const ParamSet& params, const Matrix& features, const std::vector<int>& labels) {
  auto out = speech_encoder_teacher_forced(params, ad::constant(features), labels);
  std::vector<int> targets = labels;
  targets.push_back(eos_of(params));
  return ad::scale(ad::cross_entropy_rows(out.logits, targets), 1.0 / static_cast<double>(targets.size()));
}

DecodedPhonemes speech_encoder_decode(const ModelParams& params, const Matrix& features) {
  ParamSet p(params, false);
  const int eos = eos_of(p);
  const ad::Var encoded = encode(p, ad::constant(features));
  const Index max_len = 3 * encoded.rows();
  Decoder decoder(p, encoded);
  DecodedPhonemes out;
  std::vector<RowVector> rows;
  int prev = eos;
  for (Index step = 0;; ++step) {
    if (step > max_len) throw Error("decode runaway");
    ad::Var probs = ad::softmax_rows(decoder.step(prev));
    Index best;
    probs.value().row(0).maxCoeff(&best);
    if (best == eos) break;
    out.ids.push_back(static_cast<int>(best));
    rows.push_back(probs.value().row(0));
    prev = static_cast<int>(best);
  }
  out.posteriors.resize(static_cast<Index>(rows.size()), p.hyper("phonemes"));
  for (std::size_t i = 0; i < rows.size(); ++i) out.posteriors.row(static_cast<Index>(i)) = rows[i];
  return out;
}

Matrix speech_encoder_forced_posteriors(const ModelParams& params, const Matrix& features,
                                        const std::vector<int>& labels) {
  ParamSet p(params, false);
  auto out = speech_encoder_teacher_forced(p, ad::constant(features), labels);
  Matrix probs = ad::softmax_rows(out.logits).value();
  return probs.topRows(static_cast<Index>(labels.size()));
}

Matrix expand_by_duration(const Matrix& embeddings, const std::vector<int>& durations) {
  if (static_cast<Index>(durations.size()) != embeddings.rows())
    throw ShapeError("expand_by_duration: " + std::to_string(durations.size()) + " durations for " +
                     std::to_string(embeddings.rows()) + " rows");
  Index total = 0;
  for (int d : durations) {
    if (d <= 0) throw Error("expand_by_duration: durations must be positive");
    total += d;
  }
  Matrix out(total, embeddings.cols());
  Index at = 0;
  for (std::size_t i = 0; i < durations.size(); ++i)
    for (int k = 0; k < durations[i]; ++k) out.row(at++) = embeddings.row(static_cast<Index>(i));
  return out;
}

}  // namespace dsr::models
