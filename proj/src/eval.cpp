#include "dsr/eval.hpp"

#include "dsr/optim.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace dsr::eval {

std::size_t edit_distance(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double phoneme_error_rate(std::span<const int> hypothesis, std::span<const int> reference) {
  if (reference.empty()) throw Error("phoneme_error_rate: empty reference");
  return static_cast<double>(edit_distance(hypothesis, reference)) / static_cast<double>(reference.size());
}

double mel_distortion(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("mel_distortion: band counts differ");
  if (a.rows() == 0 || b.rows() == 0) throw ShapeError("mel_distortion: empty input");
  if (a.rows() == b.rows()) return (a - b).rowwise().norm().mean();
  // Symmetric DTW: diagonal steps weigh twice, normalised by n + m.
  const Index n = a.rows(), m = b.rows();
  const double inf = std::numeric_limits<double>::infinity();
  Matrix acc = Matrix::Constant(n + 1, m + 1, inf);
  acc(0, 0) = 0.0;
  for (Index i = 1; i <= n; ++i)
    for (Index j = 1; j <= m; ++j) {
      const double d = (a.row(i - 1) - b.row(j - 1)).norm();
      acc(i, j) = std::min({acc(i - 1, j - 1) + 2.0 * d, acc(i - 1, j) + d, acc(i, j - 1) + d});
    }
  return acc(n, m) / static_cast<double>(n + m);
}

double cosine(const RowVector& a, const RowVector& b) {
  if (a.size() != b.size()) throw ShapeError("cosine: length mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw Error("cosine: zero vector");
  return a.dot(b) / (na * nb);
}

RowVector embed_mel80(const ModelParams& speaker_encoder, const Matrix& normalized_mel80, const StatsTable& stats) {
  const Matrix log_mel80 = denormalize(normalized_mel80, stats.at(data::kMel80Block));
  const Matrix mel40 = normalize(remap_mel(log_mel80, models::kSpeakerMels), stats.at(data::kMel40Block));
  return models::embed_speaker(speaker_encoder, mel40);
}

double speaker_similarity(const RowVector& embedding, const std::vector<RowVector>& references) {
  if (references.empty()) throw Error("speaker_similarity: no reference embeddings");
  RowVector centroid = RowVector::Zero(embedding.size());
  for (const auto& r : references) centroid += r;
  return cosine(embedding, centroid);
}

double equal_error_rate(std::span<const double> scores, const std::vector<bool>& target) {
  if (scores.size() != target.size()) throw Error("equal_error_rate: scores and labels differ in length");
  const auto positives = static_cast<double>(std::count(target.begin(), target.end(), true));
  const double negatives = static_cast<double>(target.size()) - positives;
  if (positives == 0 || negatives == 0) throw Error("equal_error_rate: needs target and non-target trials");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return scores[x] > scores[y]; });
  // Sweep the threshold down through the sorted scores; accept everything
  // above it. Interpolate where the miss and false-alarm curves cross.
  double accepted_pos = 0, accepted_neg = 0;
  double prev_miss = 1.0, prev_fa = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (target[order[k]] ? accepted_pos : accepted_neg) += 1;
    if (k + 1 < order.size() && scores[order[k + 1]] == scores[order[k]]) continue;
    const double miss = 1.0 - accepted_pos / positives;
    const double fa = accepted_neg / negatives;
    if (fa >= miss) {
      const double d0 = prev_miss - prev_fa, d1 = miss - fa;
      const double t = d0 == d1 ? 0.0 : d0 / (d0 - d1);
      return prev_fa + t * (fa - prev_fa);
    }
    prev_miss = miss;
    prev_fa = fa;
  }
  return 0.0;
}

double speaker_eer(const data::Dataset& data, const ModelParams& speaker_encoder, const std::vector<std::string>& ids) {
  std::vector<RowVector> emb;
  std::vector<std::string> spk;
  for (const auto& id : ids) {
    const auto& u = data.get(id);
    emb.push_back(models::embed_speaker(speaker_encoder, u.mel40));
    spk.push_back(u.speaker);
  }
  std::vector<double> scores;
  std::vector<bool> target;
  for (std::size_t i = 0; i < emb.size(); ++i)
    for (std::size_t j = i + 1; j < emb.size(); ++j) {
      scores.push_back(cosine(emb[i], emb[j]));
      target.push_back(spk[i] == spk[j]);
    }
  return equal_error_rate(scores, target);
}

namespace {

constexpr int kMinRun = 3;

constexpr int kContext = 2;
constexpr double kWeightDecay = 1e-3;

Matrix mean_removed(const Matrix& mel) { return mel.rowwise() - mel.colwise().mean(); }

// Frames t-2..t+2 side by side (edges repeat), plus a bias column.
Matrix context_stack(const Matrix& x) {
  const Index w = x.cols();
  Matrix s(x.rows(), w * (2 * kContext + 1) + 1);
  for (Index t = 0; t < x.rows(); ++t) {
    for (int c = -kContext; c <= kContext; ++c)
      s.block(t, (c + kContext) * w, 1, w) = x.row(std::clamp<Index>(t + c, 0, x.rows() - 1));
    s(t, s.cols() - 1) = 1.0;
  }
  return s;
}

}  // namespace

Recognizer Recognizer::train(const data::Dataset& data, const std::vector<std::string>& ids, int iterations) {
  if (ids.empty()) throw Error("recognizer: no training utterances");
  const Index classes = data.inventory().silence() + 1;  // </s> never labels a frame
  std::vector<Matrix> parts;
  std::vector<int> labels;
  Index rows = 0;
  for (const auto& id : ids) {
    const auto& u = data.get(id);
    if (u.alignment.entries.empty()) throw Error("recognizer: " + id + " has no alignment");
    parts.push_back(context_stack(mean_removed(u.mel80)));
    rows += parts.back().rows();
    for (const auto& seg : u.alignment.entries) labels.insert(labels.end(), seg.duration_frames, seg.phoneme);
    if (static_cast<Index>(labels.size()) != rows) throw Error("recognizer: alignment of " + id + " does not cover its frames");
  }
  Matrix x(rows, parts.front().cols());
  Index at = 0;
  for (const auto& p : parts) {
    x.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  Matrix y = Matrix::Zero(rows, classes);
  for (Index t = 0; t < rows; ++t) y(t, labels[static_cast<std::size_t>(t)]) = 1.0;

  // Full-batch softmax regression with a little weight decay; deterministic.
  ModelParams w;
  w.tensors["w"] = Matrix::Zero(x.cols(), classes);
  optim::Optimizer opt({optim::Kind::kAdam, 0.05});
  for (int it = 0; it < iterations; ++it) {
    Matrix z = x * w.tensors["w"];
    z = z.colwise() - z.rowwise().maxCoeff();
    Matrix prob = z.array().exp();
    prob.array().colwise() /= prob.rowwise().sum().array();
    opt.step(w, {{"w", x.transpose() * (prob - y) / static_cast<double>(rows) + kWeightDecay * w.tensors["w"]}});
  }
  Recognizer r;
  r.weights_ = std::move(w.tensors["w"]);
  r.sil_ = data.inventory().silence();
  return r;
}

std::vector<int> Recognizer::classify_frames(const Matrix& normalized_mel80) const {
  if (normalized_mel80.cols() != models::kGeneratorMels) throw ShapeError("recognizer: wrong mel width");
  if (normalized_mel80.rows() == 0) return {};
  const Matrix z = context_stack(mean_removed(normalized_mel80)) * weights_;
  std::vector<int> frames(static_cast<std::size_t>(z.rows()));
  for (Index t = 0; t < z.rows(); ++t) {
    Index k = 0;
    z.row(t).maxCoeff(&k);
    frames[static_cast<std::size_t>(t)] = static_cast<int>(k);
  }
  return frames;
}

std::vector<int> Recognizer::recognize(const Matrix& normalized_mel80) const {
  const auto frames = classify_frames(normalized_mel80);
  // Runs shorter than kMinRun frames are treated as transitions; SIL runs
  // still separate repeated phonemes.
  std::vector<int> out;
  int last = sil_;
  for (std::size_t i = 0; i < frames.size();) {
    std::size_t j = i;
    while (j < frames.size() && frames[j] == frames[i]) ++j;
    if (j - i >= static_cast<std::size_t>(kMinRun)) {
      if (frames[i] != sil_ && frames[i] != last) out.push_back(frames[i]);
      last = frames[i];
    }
    i = j;
  }
  return out;
}

std::vector<int> Recognizer::reference(const std::vector<int>& labels) const {
  std::vector<int> out;
  for (int p : labels)
    if (p != sil_) out.push_back(p);
  return out;
}

double duration_mae(const data::Dataset& data, const SystemBundle& system, const std::vector<std::string>& ids) {
  double err = 0.0;
  std::size_t n = 0;
  for (const auto& id : ids) {
    const auto& u = data.get(id);
    const Matrix post = models::speech_encoder_forced_posteriors(system.speech_encoder, u.features, u.labels);
    const auto pred = models::predict_durations(system.duration_predictor, post);
    const auto truth = u.durations();
    for (std::size_t i = 0; i < truth.size(); ++i, ++n) err += std::abs(pred[i] - truth[i]);
  }
  if (n == 0) throw Error("duration_mae: nothing to score");
  return err / static_cast<double>(n);
}

double pitch_rmse(const data::Dataset& data, const SystemBundle& system, const std::vector<std::string>& ids) {
  const NormStats& f0s = data.block(data::kLogF0Block);
  double err = 0.0;
  std::size_t n = 0;
  for (const auto& id : ids) {
    const auto& u = data.get(id);
    const Matrix post = models::speech_encoder_forced_posteriors(system.speech_encoder, u.features, u.labels);
    const Vector pred = models::predict_pitch(system.pitch_predictor, models::expand_by_duration(post, u.durations()));
    for (Index t = 0; t < u.f0.frames(); ++t) {
      if (!u.f0.voicing[static_cast<std::size_t>(t)]) continue;
      const double d = pred(t) * f0s.std(0) + f0s.mean(0) - u.f0.log_f0(t);
      err += d * d;
      ++n;
    }
  }
  if (n == 0) throw Error("pitch_rmse: no voiced frames");
  return std::sqrt(err / static_cast<double>(n));
}

EvalReport evaluate(const data::Dataset& data, const std::vector<std::pair<std::string, const SystemBundle*>>& systems,
                    const std::string& speaker, const std::vector<std::string>& ids, const Recognizer& recognizer,
                    const EvalOptions& options) {
  if (systems.empty()) throw Error("evaluate: no systems given");
  if (ids.empty()) throw Error("evaluate: no utterances given");
  const ModelParams& judge = systems.front().second->speaker_encoder;
  const StatsTable& stats = data.stats();

  std::vector<RowVector> refs;
  for (const auto& id : data.ids(std::nullopt, speaker, "train"))
    refs.push_back(embed_mel80(judge, data.get(id).mel80, stats));
  if (refs.empty()) throw Error("evaluate: speaker " + speaker + " has no training utterances");

  EvalReport report;
  report.speaker = speaker;
  report.mode = to_string(options.mode);
  for (const auto& [name, system] : systems) {
    SystemSummary sum;
    sum.system = name;
    double fd_total = 0.0;
    std::size_t ok = 0;
    for (const auto& id : ids) {
      const auto& u = data.get(id);
      UtteranceScore s;
      s.id = id;
      s.system = name;
      const auto ref = recognizer.reference(u.labels);
      s.per_input = phoneme_error_rate(recognizer.recognize(u.mel80), ref);
      try {
        const Reconstruction r = reconstruct(*system, u, options.mode);
        s.similarity = speaker_similarity(embed_mel80(judge, r.mel, stats), refs);
        s.distortion = mel_distortion(r.mel, u.mel80);
        s.per = phoneme_error_rate(recognizer.recognize(r.mel), ref);
        if (options.discriminator)
          s.f_d = models::discriminate(*options.discriminator,
                                       models::crop_frames(r.mel, options.discriminator->hyper_at("crop"), 0));
        sum.similarity += s.similarity;
        sum.distortion += s.distortion;
        if (s.f_d) fd_total += *s.f_d;
        ++ok;
      } catch (const Error& e) {
        s.failed = true;
        s.error = e.what();
        s.per = 1.0;
        ++sum.failures;
      }
      sum.per += s.per;
      sum.per_input += s.per_input;
      report.utterances.push_back(s);
    }
    sum.utterances = ids.size();
    const double n = static_cast<double>(ids.size());
    sum.per /= n;
    sum.per_input /= n;
    if (ok > 0) {
      sum.similarity /= static_cast<double>(ok);
      sum.distortion /= static_cast<double>(ok);
      if (options.discriminator) sum.f_d = fd_total / static_cast<double>(ok);
    }
    report.systems.push_back(sum);
  }
  return report;
}

std::string EvalReport::table() const {
  std::ostringstream os;
  char line[256];
  os << "speaker " << speaker << ", mode " << mode << "\n";
  std::snprintf(line, sizeof line, "%-10s %6s %6s %10s %10s %8s %8s %8s\n", "system", "utts", "fail", "similarity",
                "distortion", "PER", "PER_in", "f_d");
  os << line;
  for (const auto& s : systems) {
    std::snprintf(line, sizeof line, "%-10s %6zu %6zu %10.4f %10.4f %8.4f %8.4f %8s\n", s.system.c_str(),
                  s.utterances, s.failures, s.similarity, s.distortion, s.per, s.per_input,
                  s.f_d ? std::to_string(*s.f_d).substr(0, 6).c_str() : "-");
    os << line;
  }
  for (const auto& [k, v] : extra) {
    std::snprintf(line, sizeof line, "%-22s %.4f\n", k.c_str(), v);
    os << line;
  }
  return os.str();
}

void EvalReport::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& u : utterances) {
    nlohmann::json j{{"kind", "utterance"},     {"speaker", speaker},       {"mode", mode},
                     {"system", u.system},      {"id", u.id},               {"similarity", u.similarity},
                     {"distortion", u.distortion}, {"per", u.per},          {"per_input", u.per_input},
                     {"failed", u.failed}};
    if (u.f_d) j["f_d"] = *u.f_d;
    if (u.failed) j["error"] = u.error;
    out << j.dump() << "\n";
  }
  for (const auto& s : systems) {
    nlohmann::json j{{"kind", "summary"},          {"speaker", speaker},   {"mode", mode},
                     {"system", s.system},         {"utterances", s.utterances}, {"failures", s.failures},
                     {"similarity", s.similarity}, {"distortion", s.distortion}, {"per", s.per},
                     {"per_input", s.per_input}};
    if (s.f_d) j["f_d"] = *s.f_d;
    out << j.dump() << "\n";
  }
  if (!extra.empty()) {
    nlohmann::json j{{"kind", "extra"}, {"speaker", speaker}};
    for (const auto& [k, v] : extra) j[k] = v;
    out << j.dump() << "\n";
  }
}

}  // namespace dsr::eval
