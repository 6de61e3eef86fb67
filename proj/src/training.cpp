#include "dsr/training.hpp"

#include "dsr/losses.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>

#include "json.hpp"

namespace dsr::training {

using models::expand_by_duration;

ReportWriter::ReportWriter(const std::filesystem::path& path, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc) {
  if (!out_) throw IoError("cannot open report " + path.string());
}

void ReportWriter::write(const std::string& stage, long step, const std::map<std::string, double>& losses) {
  if (!out_.is_open()) return;
  nlohmann::json j;
  j["stage"] = stage;
  j["step"] = step;
  for (const auto& [k, v] : losses) j[k] = v;
  j["time"] = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
  out_ << j.dump() << '\n';
  out_.flush();
}

void TrainReport::record(const std::map<std::string, double>& values, const std::string& primary) {
  for (const auto& [k, v] : values) columns[k].push_back(v);
  losses.push_back(values.at(primary));
}

long Progress::step() const {
  auto it = optimizer.hyper.find("step");
  return it == optimizer.hyper.end() ? 0 : it->second;
}

Progress start(ModelParams params, const StageConfig& stage) {
  return {std::move(params), optim::Optimizer(stage.optimizer).state()};
}

void save_progress(const std::filesystem::path& path, const Progress& progress) {
  save_checkpoint(path, {progress.params, progress.optimizer}, "progress");
}

Progress load_progress(const std::filesystem::path& path) {
  auto c = load_checkpoint(path);
  if (c.label != "progress" || c.modules.size() != 2 || c.modules[1].tag != ModuleTag::kOptimizerState)
    throw FormatError(path.string() + " is not a training progress checkpoint");
  return {std::move(c.modules[0]), std::move(c.modules[1])};
}

std::vector<std::size_t> draw_batch(std::size_t n, std::size_t size, Rng& rng) {
  if (n == 0) throw Error("cannot draw a batch from an empty set");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  size = std::min(size, n);
  // Partial Fisher-Yates: the first `size` entries are the batch.
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(size);
  return idx;
}

namespace {

using LossFn = std::function<std::map<std::string, double>(const ParamSet&, Rng&, ad::Var&)>;

// Shared optimisation loop. `fn` builds the step's loss into its last
// argument and returns the values to report; the first key listed in
// `primary` is the traced loss.
TrainReport run_loop(const StageContext& ctx, Progress& progress, long steps, const std::string& primary,
                     const LossFn& fn, const std::function<void(ModelParams&)>& after_update = {}) {
  if (steps < 0) throw Error(ctx.stage.name + ": negative step count");
  TrainReport report;
  report.stage = ctx.stage.name;
  const auto t0 = std::chrono::steady_clock::now();
  optim::Optimizer opt(ctx.stage.optimizer);
  opt.load_state(progress.optimizer);
  for (long i = 0; i < steps; ++i) {
    const long k = opt.steps();
    Rng rng = derive_rng(ctx.stage.seed, stream_id(ctx.stage.name), static_cast<std::uint64_t>(k));
    Gradients grads;
    std::map<std::string, double> values;
    {
      ParamSet p(progress.params, true);
      ad::Var loss;
      values = fn(p, rng, loss);
      if (!std::isfinite(loss.scalar())) throw Error(ctx.stage.name + ": loss became non-finite at step " + std::to_string(k));
      ad::backward(loss);
      grads = p.gradients();
    }
    opt.step(progress.params, grads);
    if (after_update) after_update(progress.params);
    report.record(values, primary);
    if (ctx.report) ctx.report->write(ctx.stage.name, k + 1, values);
  }
  progress.optimizer = opt.state();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::vector<const data::Utterance*> load_all(const data::Dataset& data, const std::vector<std::string>& ids,
                                             const std::string& stage) {
  if (ids.empty()) throw Error(stage + ": empty training set");
  std::vector<const data::Utterance*> out;
  for (const auto& id : ids) out.push_back(&data.get(id));
  return out;
}

// Feature-space perturbation for the speech encoder: a frequency warp of each
// 40-bin block (vocal tract length), a tempo change by linear resampling of
// the frames, then two time and two frequency masks set to the mean (zero).
Matrix augment_features(const Matrix& x, Rng& rng) {
  const Index bins = 40;
  const Index blocks = x.cols() / bins;
  const double warp = uniform(rng, 0.85, 1.15);
  const double tempo = uniform(rng, 0.8, 1.5);
  Matrix w(x.rows(), x.cols());
  for (Index j = 0; j < bins; ++j) {
    const double src = std::clamp(j / warp, 0.0, static_cast<double>(bins - 1));
    const Index lo = std::min<Index>(static_cast<Index>(src), bins - 2);
    const double a = src - static_cast<double>(lo);
    for (Index b = 0; b < blocks; ++b)
      w.col(b * bins + j) = (1 - a) * x.col(b * bins + lo) + a * x.col(b * bins + lo + 1);
  }
  const Index frames = std::max<Index>(2, std::lround(static_cast<double>(x.rows()) * tempo));
  Matrix y(frames, x.cols());
  for (Index t = 0; t < frames; ++t) {
    const double src = static_cast<double>(t) * static_cast<double>(x.rows() - 1) / static_cast<double>(frames - 1);
    const Index lo = std::min<Index>(static_cast<Index>(src), x.rows() - 2);
    const double a = src - static_cast<double>(lo);
    y.row(t) = (1 - a) * w.row(lo) + a * w.row(lo + 1);
  }
  for (int m = 0; m < 2; ++m) {
    const Index len = std::uniform_int_distribution<Index>(0, std::min<Index>(8, frames / 8))(rng);
    const Index at = std::uniform_int_distribution<Index>(0, frames - len)(rng);
    y.middleRows(at, len).setZero();
  }
  for (int m = 0; m < 2; ++m) {
    const Index len = std::uniform_int_distribution<Index>(0, 5)(rng);
    const Index at = std::uniform_int_distribution<Index>(0, bins - len)(rng);
    for (Index b = 0; b < blocks; ++b) y.middleCols(b * bins + at, len).setZero();
  }
  return y;
}

}  // namespace

Matrix aligned_posteriors(const ModelParams& speech_encoder, const data::Utterance& utt) {
  if (utt.alignment.entries.empty()) throw Error(utt.id + ": no alignment available");
  return models::speech_encoder_forced_posteriors(speech_encoder, utt.features, utt.alignment.phonemes());
}

TrainReport train_speech_encoder(const StageContext& ctx, const std::vector<std::string>& ids, Progress& progress,
                                 long steps) {
  const auto utts = load_all(ctx.data, ids, ctx.stage.name);
  return run_loop(ctx, progress, steps, "loss", [&](const ParamSet& p, Rng& rng, ad::Var& loss) {
    const auto batch = draw_batch(utts.size(), static_cast<std::size_t>(ctx.stage.batch_size), rng);
    std::vector<ad::Var> terms;
    for (auto i : batch)
      terms.push_back(models::speech_encoder_loss(p, augment_features(utts[i]->features, rng), utts[i]->labels));
    loss = ad::scale(ad::sum(ad::concat_rows(terms)), 1.0 / static_cast<double>(terms.size()));
    return std::map<std::string, double>{{"loss", loss.scalar()}};
  });
}

TrainReport pretrain_speech_encoder(const StageContext& ctx, Progress& progress, long steps) {
  return train_speech_encoder(ctx, ctx.data.healthy_ids("train"), progress, steps);
}

TrainReport finetune_speech_encoder(const StageContext& ctx, const std::vector<std::string>& ids, Progress& progress,
                                    long steps) {
  std::set<std::string> speakers;
  for (const auto& id : ids) speakers.insert(ctx.data.get(id).speaker);
  if (speakers.size() != 1)
    throw Error("fine-tuning needs utterances of exactly one speaker, got " + std::to_string(speakers.size()));
  return train_speech_encoder(ctx, ids, progress, steps);
}

TrainReport train_duration_predictor(const StageContext& ctx, const ModelParams& speech_encoder,
                                     const std::vector<std::string>& ids, Progress& progress, long steps) {
  const auto utts = load_all(ctx.data, ids, ctx.stage.name);
  std::vector<Matrix> inputs;
  std::vector<Matrix> targets;
  for (const auto* u : utts) {
    inputs.push_back(aligned_posteriors(speech_encoder, *u));
    const auto d = u->durations();
    Matrix t(static_cast<Index>(d.size()), 1);
    for (std::size_t i = 0; i < d.size(); ++i) t(static_cast<Index>(i), 0) = std::log(static_cast<double>(d[i]));
    targets.push_back(std::move(t));
  }
  return run_loop(ctx, progress, steps, "loss", [&](const ParamSet& p, Rng& rng, ad::Var& loss) {
    const auto batch = draw_batch(utts.size(), static_cast<std::size_t>(ctx.stage.batch_size), rng);
    std::vector<ad::Var> diffs;
    for (auto i : batch)
      diffs.push_back(ad::sub(models::duration_forward(p, ad::constant(inputs[i])), ad::constant(targets[i])));
    ad::Var d = ad::concat_rows(diffs);
    loss = ad::mean(ad::cmul(d, d));
    return std::map<std::string, double>{{"loss", loss.scalar()}};
  });
}

TrainReport train_pitch_predictor(const StageContext& ctx, const ModelParams& speech_encoder,
                                  const std::vector<std::string>& ids, Progress& progress, long steps) {
  const auto utts = load_all(ctx.data, ids, ctx.stage.name);
  std::vector<Matrix> inputs;
  for (const auto* u : utts) inputs.push_back(expand_by_duration(aligned_posteriors(speech_encoder, *u), u->durations()));
  return run_loop(ctx, progress, steps, "loss", [&](const ParamSet& p, Rng& rng, ad::Var& loss) {
    const auto batch = draw_batch(utts.size(), static_cast<std::size_t>(ctx.stage.batch_size), rng);
    std::vector<ad::Var> diffs;
    for (auto i : batch)
      diffs.push_back(ad::sub(models::pitch_forward(p, ad::constant(inputs[i])), ad::constant(utts[i]->pitch)));
    ad::Var d = ad::concat_rows(diffs);
    loss = ad::mean(ad::cmul(d, d));
    return std::map<std::string, double>{{"loss", loss.scalar()}};
  });
}

TrainReport train_speaker_encoder(const StageContext& ctx, const std::vector<std::string>& ids,
                                  const Ge2eBatching& batching, Progress& progress, long steps) {
  const auto utts = load_all(ctx.data, ids, ctx.stage.name);
  std::map<std::string, std::vector<const data::Utterance*>> by_speaker;
  for (const auto* u : utts) by_speaker[u->speaker].push_back(u);
  std::vector<const std::vector<const data::Utterance*>*> eligible;
  for (const auto& [spk, list] : by_speaker)
    if (static_cast<int>(list.size()) >= batching.utterances) eligible.push_back(&list);
  if (batching.speakers < 2 || batching.utterances < 2) throw Error("GE2E batches need N >= 2 and M >= 2");
  if (static_cast<int>(eligible.size()) < batching.speakers)
    throw Error("speaker training needs " + std::to_string(batching.speakers) + " speakers with " +
                std::to_string(batching.utterances) + " utterances each, found " + std::to_string(eligible.size()));

  return run_loop(
      ctx, progress, steps, "loss",
      [&](const ParamSet& p, Rng& rng, ad::Var& loss) {
        const auto spk = draw_batch(eligible.size(), static_cast<std::size_t>(batching.speakers), rng);
        std::vector<ad::Var> rows;
        for (auto s : spk) {
          const auto& list = *eligible[s];
          for (auto u : draw_batch(list.size(), static_cast<std::size_t>(batching.utterances), rng)) {
            const Matrix& mel = list[u]->mel40;
            const Index len = std::min<Index>(batching.crop, mel.rows());
            const Index off = models::draw_crop_offset(mel.rows(), len, rng);
            rows.push_back(models::speaker_forward(p, ad::constant(mel.middleRows(off, len))));
          }
        }
        loss = losses::ge2e_loss(ad::concat_rows(rows), batching.speakers, batching.utterances, p["ge2e_w"],
                                 p["ge2e_b"]);
        return std::map<std::string, double>{{"loss", loss.scalar()}};
      },
      models::clamp_ge2e_scale);
}

Triple make_triple(const data::Utterance& utt, const ModelParams& speech_encoder, const ModelParams& speaker_encoder) {
  Triple t;
  t.p = expand_by_duration(aligned_posteriors(speech_encoder, utt), utt.durations());
  t.v = utt.pitch;
  t.e = models::embed_speaker(speaker_encoder, utt.mel40);
  t.m = utt.mel80;
  return t;
}

TrainReport train_generator(const StageContext& ctx, const ModelParams& speech_encoder,
                            const ModelParams& speaker_encoder, const std::vector<std::string>& ids,
                            Progress& progress, long steps) {
  const auto utts = load_all(ctx.data, ids, ctx.stage.name);
  std::vector<Triple> triples;
  for (const auto* u : utts) triples.push_back(make_triple(*u, speech_encoder, speaker_encoder));
  return run_loop(ctx, progress, steps, "loss", [&](const ParamSet& p, Rng& rng, ad::Var& loss) {
    const auto batch = draw_batch(triples.size(), static_cast<std::size_t>(ctx.stage.batch_size), rng);
    std::vector<ad::Var> terms;
    for (auto i : batch) {
      const Triple& t = triples[i];
      ad::Var z = models::generator_forward(p, ad::constant(t.p), ad::constant(t.v), ad::constant(t.e));
      terms.push_back(losses::generation_loss(z, ad::constant(t.m)));
    }
    loss = ad::scale(ad::sum(ad::concat_rows(terms)), 1.0 / static_cast<double>(terms.size()));
    return std::map<std::string, double>{{"loss", loss.scalar()}};
  });
}

double mean_generation_loss(const data::Dataset& data, const ModelParams& gen, const ModelParams& speech_encoder,
                            const ModelParams& speaker_encoder, const std::vector<std::string>& ids) {
  if (ids.empty()) throw Error("mean_generation_loss: no utterances");
  double total = 0.0;
  for (const auto& id : ids) {
    const Triple t = make_triple(data.get(id), speech_encoder, speaker_encoder);
    total += losses::generation_loss(models::generate(gen, t.p, t.v, t.e), t.m);
  }
  return total / static_cast<double>(ids.size());
}

}  // namespace dsr::training
