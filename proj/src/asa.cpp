#include "dsr/asa.hpp"

#include "dsr/losses.hpp"

#include <chrono>

namespace dsr::asa {

namespace {

constexpr const char* kStream = "asa";

Index crop_length(const ModelParams& discriminator) { return discriminator.hyper_at("crop"); }

ad::Var mean_of(const std::vector<ad::Var>& terms) {
  return ad::scale(ad::sum(ad::concat_rows(terms)), 1.0 / static_cast<double>(terms.size()));
}

// Discriminator outputs on the two crops of every batch item. The ASA crop
// comes from `asa_tilde`, which may be wrapped (e.g. in a grl) by the caller.
struct Scores {
  ad::Var f_sv;
  ad::Var f_asa;
};

Scores score(const ParamSet& disc, const std::vector<ad::Var>& sv_tilde, const std::vector<ad::Var>& asa_tilde,
             const Batch& batch) {
  const Index crop = disc.hyper("crop");
  std::vector<ad::Var> sv, asa;
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    sv.push_back(models::discriminator_forward(disc, models::crop_frames(sv_tilde[i], crop, batch.offsets[i])));
    asa.push_back(models::discriminator_forward(disc, models::crop_frames(asa_tilde[i], crop, batch.offsets[i])));
  }
  return {ad::concat_rows(sv), ad::concat_rows(asa)};
}

void check_batch(const std::vector<AdaptationSample>& samples, const Batch& batch) {
  if (batch.items.empty()) throw Error("asa: empty batch");
  if (batch.items.size() != batch.offsets.size()) throw Error("asa: batch and crop offsets differ in length");
  for (auto i : batch.items)
    if (i >= samples.size()) throw Error("asa: batch index out of range");
}

}  // namespace

SystemBundle clone_system(const SystemBundle& sv) {
  sv.validate();
  if (sv.label != SystemLabel::kSvDsr) throw Error("asa: the source system must be SV-DSR");
  SystemBundle copy = sv;
  copy.label = SystemLabel::kAsaDsr;
  return copy;
}

std::vector<AdaptationSample> prepare_adaptation_set(const data::Dataset& data, const std::vector<std::string>& ids,
                                                     const SystemBundle& sv) {
  if (ids.empty()) throw Error("asa: empty adaptation set");
  std::vector<AdaptationSample> out;
  for (const auto& id : ids) {
    const data::Utterance& u = data.get(id);
    AdaptationSample s;
    s.id = id;
    s.mel40 = u.mel40;
    s.target = u.mel80;
    const Matrix post = training::aligned_posteriors(sv.speech_encoder, u);
    s.p = models::expand_by_duration(post, u.durations());
    s.v = u.pitch;
    s.p_tilde = models::expand_by_duration(post, models::predict_durations(sv.duration_predictor, post));
    s.v_tilde = models::predict_pitch(sv.pitch_predictor, s.p_tilde);
    s.z_sv_tilde =
        models::generate(sv.generator, s.p_tilde, s.v_tilde, models::embed_speaker(sv.speaker_encoder, u.mel40));
    out.push_back(std::move(s));
  }
  return out;
}

ForwardTriple forward_triple(const AdaptationSample& sample, const SystemBundle& sv, const ParamSet& speaker_asa) {
  const ParamSet gen(sv.generator, false);
  const ParamSet spk_sv(sv.speaker_encoder, false);
  ForwardTriple f;
  const ad::Var mel40 = ad::constant(sample.mel40);
  const ad::Var p = ad::constant(sample.p), v = ad::constant(sample.v);
  const ad::Var pt = ad::constant(sample.p_tilde), vt = ad::constant(sample.v_tilde);
  f.e_asa = models::speaker_forward(speaker_asa, mel40);
  f.z_sv_tilde = models::generator_forward(gen, pt, vt, models::speaker_forward(spk_sv, mel40));
  f.z_asa_tilde = models::generator_forward(gen, pt, vt, f.e_asa);
  f.z_asa = models::generator_forward(gen, p, v, f.e_asa);
  return f;
}

Batch draw_asa_batch(const std::vector<AdaptationSample>& samples, int batch_size, int crop, Rng& rng) {
  if (samples.empty()) throw Error("asa: empty adaptation set");
  Batch b;
  b.items = training::draw_batch(samples.size(), static_cast<std::size_t>(batch_size), rng);
  for (auto i : b.items) b.offsets.push_back(models::draw_crop_offset(samples[i].z_sv_tilde.rows(), crop, rng));
  return b;
}

Gradients discriminator_gradient(const std::vector<AdaptationSample>& samples, const Batch& batch,
                                 const SystemBundle& sv, const ModelParams& speaker_asa,
                                 const ModelParams& discriminator, StepLosses* losses) {
  check_batch(samples, batch);
  const ParamSet gen(sv.generator, false);
  const ParamSet spk(speaker_asa, false);
  const ParamSet disc(discriminator, true);
  std::vector<ad::Var> sv_tilde, asa_tilde;
  for (auto i : batch.items) {
    const AdaptationSample& s = samples[i];
    sv_tilde.push_back(ad::constant(s.z_sv_tilde));
    const ad::Var e = models::speaker_forward(spk, ad::constant(s.mel40));
    asa_tilde.push_back(models::generator_forward(gen, ad::constant(s.p_tilde), ad::constant(s.v_tilde), e));
  }
  const Scores sc = score(disc, sv_tilde, asa_tilde, batch);
  const ad::Var dis = losses::discrimination_loss(sc.f_sv, sc.f_asa);
  if (!std::isfinite(dis.scalar())) throw Error("asa: discrimination loss became non-finite");
  ad::backward(dis);
  if (losses) {
    losses->dis = dis.scalar();
    losses->f_sv = sc.f_sv.value().mean();
    losses->f_asa = sc.f_asa.value().mean();
  }
  return disc.gradients();
}

Gradients speaker_gradient(const std::vector<AdaptationSample>& samples, const Batch& batch, const SystemBundle& sv,
                           const ModelParams& speaker_asa, const ModelParams& discriminator, double lambda,
                           bool use_grl, StepLosses* losses) {
  check_batch(samples, batch);
  if (lambda < 0.0) throw Error("asa: lambda must be non-negative");
  const ParamSet gen(sv.generator, false);
  const ParamSet spk(speaker_asa, true);
  const ParamSet disc(discriminator, false);
  std::vector<ad::Var> sv_tilde, asa_tilde, adapt;
  for (auto i : batch.items) {
    const AdaptationSample& s = samples[i];
    const ad::Var e = models::speaker_forward(spk, ad::constant(s.mel40));
    const ad::Var z = models::generator_forward(gen, ad::constant(s.p), ad::constant(s.v), e);
    adapt.push_back(losses::adaptation_loss(z, ad::constant(s.target)));
    const ad::Var zt = models::generator_forward(gen, ad::constant(s.p_tilde), ad::constant(s.v_tilde), e);
    asa_tilde.push_back(use_grl ? ad::grl(zt) : zt);
    sv_tilde.push_back(ad::constant(s.z_sv_tilde));
  }
  const ad::Var l_adapt = mean_of(adapt);
  const Scores sc = score(disc, sv_tilde, asa_tilde, batch);
  const ad::Var l_dis = losses::discrimination_loss(sc.f_sv, sc.f_asa);
  // With the reversal in place the sign flip happens inside backward, so
  // the scalar being differentiated is L_adapt + lambda * L_dis.
  const ad::Var total =
      use_grl ? ad::add(l_adapt, ad::scale(l_dis, lambda)) : losses::mtl_loss(l_adapt, l_dis, lambda);
  if (!std::isfinite(total.scalar())) throw Error("asa: adaptation loss became non-finite");
  ad::backward(total);
  if (losses) {
    losses->adapt = l_adapt.scalar();
    losses->dis = l_dis.scalar();
    losses->mtl = losses::mtl_loss(l_adapt.scalar(), l_dis.scalar(), lambda);
    losses->f_sv = sc.f_sv.value().mean();
    losses->f_asa = sc.f_asa.value().mean();
  }
  return spk.gradients();
}

FrozenChecksums frozen_checksums(const SystemBundle& sv) {
  return {{"speech_encoder", sv.speech_encoder.checksum()},
          {"duration_predictor", sv.duration_predictor.checksum()},
          {"pitch_predictor", sv.pitch_predictor.checksum()},
          {"speaker_encoder_sv", sv.speaker_encoder.checksum()},
          {"generator", sv.generator.checksum()}};
}

void verify_frozen(const SystemBundle& sv, const FrozenChecksums& expected) {
  const FrozenChecksums now = frozen_checksums(sv);
  for (const auto& [name, sum] : expected) {
    auto it = now.find(name);
    if (it == now.end() || it->second != sum) throw InvariantError("asa: frozen module '" + name + "' changed");
  }
}

double mean_adaptation_loss(const std::vector<AdaptationSample>& samples, const SystemBundle& sv,
                            const ModelParams& speaker_asa) {
  if (samples.empty()) throw Error("asa: empty adaptation set");
  double total = 0.0;
  for (const auto& s : samples) {
    const Matrix z = models::generate(sv.generator, s.p, s.v, models::embed_speaker(speaker_asa, s.mel40));
    total += losses::adaptation_loss(z, s.target);
  }
  return total / static_cast<double>(samples.size());
}

Adapter::Adapter(SystemBundle sv, ModelParams discriminator, const StageConfig& stage, double lambda, bool use_grl)
    : sv_(std::move(sv)),
      speaker_(sv_.speaker_encoder),
      discriminator_(std::move(discriminator)),
      stage_(stage),
      lambda_(lambda),
      use_grl_(use_grl),
      speaker_opt_(stage.optimizer),
      discriminator_opt_(stage.optimizer) {
  sv_.validate();
  if (sv_.label != SystemLabel::kSvDsr) throw Error("asa: adaptation starts from an SV-DSR system");
  if (discriminator_.tag != ModuleTag::kDiscriminator) throw Error("asa: expected discriminator parameters");
  if (discriminator_.hyper_at("mels") != sv_.generator.hyper_at("mels"))
    throw Error("asa: discriminator and generator disagree on mel bins");
  if (lambda < 0.0) throw Error("asa: lambda must be non-negative");
  checksums_ = frozen_checksums(sv_);
}

StepLosses Adapter::step(const std::vector<AdaptationSample>& samples) {
  Rng rng = derive_rng(stage_.seed, stream_id(kStream), static_cast<std::uint64_t>(steps_));
  const Batch batch = draw_asa_batch(samples, stage_.batch_size, static_cast<int>(crop_length(discriminator_)), rng);
  StepLosses disc_losses;
  discriminator_opt_.step(discriminator_,
                          discriminator_gradient(samples, batch, sv_, speaker_, discriminator_, &disc_losses));
  StepLosses out;
  speaker_opt_.step(speaker_, speaker_gradient(samples, batch, sv_, speaker_, discriminator_, lambda_, use_grl_, &out));
  models::clamp_ge2e_scale(speaker_);
  verify_frozen(sv_, checksums_);
  ++steps_;
  return out;
}

training::TrainReport Adapter::run(const std::vector<AdaptationSample>& samples, long steps,
                                   training::ReportWriter* report) {
  if (steps < 0) throw Error("asa: negative step count");
  training::TrainReport r;
  r.stage = stage_.name;
  const auto t0 = std::chrono::steady_clock::now();
  for (long i = 0; i < steps; ++i) {
    const StepLosses l = step(samples);
    const std::map<std::string, double> values{
        {"L_adapt", l.adapt}, {"L_dis", l.dis}, {"L_MTL", l.mtl}, {"f_sv", l.f_sv}, {"f_asa", l.f_asa}};
    r.record(values, "L_MTL");
    if (report) report->write(stage_.name, steps_, values);
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

SystemBundle Adapter::adapted() const {
  SystemBundle b = clone_system(sv_);
  b.speaker_encoder = speaker_;
  return b;
}

}  // namespace dsr::asa
