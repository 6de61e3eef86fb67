#pragma once

// Adversarial speaker adaptation.
//
// Starting from a trained SV-DSR system, only a copy of the speaker encoder
// (theta_s^asa) and a system discriminator (phi) are trained. Everything
// else, including the original speaker encoder theta_s^sv, stays frozen and
// is checked by checksum after each step.
//
// Per step: one discriminator update minimising L_dis, then one speaker
// encoder update minimising L_MTL = L_adapt - lambda * L_dis with phi fixed.

#include "dsr/config.hpp"
#include "dsr/data.hpp"
#include "dsr/models.hpp"
#include "dsr/optim.hpp"
#include "dsr/training.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dsr::asa {

/// Deep copy of an SV-DSR bundle relabelled as ASA-DSR.
SystemBundle clone_system(const SystemBundle& sv);

/// Everything ASA needs about one dysarthric training utterance. Only the
/// speaker embedding depends on trainable weights, so the rest is computed
/// once.
struct AdaptationSample {
  std::string id;
  Matrix mel40;       // speaker-encoder input
  Matrix target;      // m_k, normalised 80-bin mel
  Matrix p;           // posteriors expanded by the alignment durations
  Vector v;           // the utterance's own normalised log-F0
  Matrix p_tilde;     // posteriors expanded by predicted durations
  Vector v_tilde;     // predicted log-F0
  Matrix z_sv_tilde;  // SV-DSR reconstruction f_g(p~, v~, e^sv)
};

std::vector<AdaptationSample> prepare_adaptation_set(const data::Dataset& data, const std::vector<std::string>& ids,
                                                     const SystemBundle& sv);

struct ForwardTriple {
  ad::Var e_asa;
  ad::Var z_sv_tilde;   // frozen path only
  ad::Var z_asa_tilde;  // f_g(p~, v~, e^asa)
  ad::Var z_asa;        // f_g(p, v, e^asa)
};

/// Builds the three reconstructions of one sample. z_sv_tilde is recomputed
/// from the frozen bundle, not taken from the cache.
ForwardTriple forward_triple(const AdaptationSample& sample, const SystemBundle& sv, const ParamSet& speaker_asa);

/// Sample indices and per-sample crop offsets of one step. The same offset
/// is used for both reconstructions of a sample.
struct Batch {
  std::vector<std::size_t> items;
  std::vector<Index> offsets;
};
Batch draw_asa_batch(const std::vector<AdaptationSample>& samples, int batch_size, int crop, Rng& rng);

struct StepLosses {
  double adapt = 0.0;
  double dis = 0.0;
  double mtl = 0.0;
  double f_sv = 0.0;   // mean discriminator output on SV-DSR crops
  double f_asa = 0.0;  // ... and on ASA-DSR crops
};

/// Gradient of L_dis with respect to phi; theta_s^asa enters as a constant.
Gradients discriminator_gradient(const std::vector<AdaptationSample>& samples, const Batch& batch,
                                 const SystemBundle& sv, const ModelParams& speaker_asa,
                                 const ModelParams& discriminator, StepLosses* losses = nullptr);

/// Gradient of L_MTL with respect to theta_s^asa; phi enters as a constant.
/// `use_grl` computes it in one backward pass through a gradient reversal
/// (L_adapt + lambda * L_dis(grl(z~asa))) instead of the explicit sign.
Gradients speaker_gradient(const std::vector<AdaptationSample>& samples, const Batch& batch, const SystemBundle& sv,
                           const ModelParams& speaker_asa, const ModelParams& discriminator, double lambda,
                           bool use_grl, StepLosses* losses = nullptr);

using FrozenChecksums = std::map<std::string, std::uint64_t>;
FrozenChecksums frozen_checksums(const SystemBundle& sv);
/// Throws InvariantError naming the first module whose checksum moved.
void verify_frozen(const SystemBundle& sv, const FrozenChecksums& expected);

/// Mean L_adapt over a whole adaptation set.
double mean_adaptation_loss(const std::vector<AdaptationSample>& samples, const SystemBundle& sv,
                            const ModelParams& speaker_asa);

class Adapter {
 public:
  /// `sv` must be an SV-DSR bundle; theta_s^asa starts as a copy of its
  /// speaker encoder.
  Adapter(SystemBundle sv, ModelParams discriminator, const StageConfig& stage, double lambda, bool use_grl);

  StepLosses step(const std::vector<AdaptationSample>& samples);
  training::TrainReport run(const std::vector<AdaptationSample>& samples, long steps,
                            training::ReportWriter* report = nullptr);

  const SystemBundle& frozen() const { return sv_; }
  const ModelParams& speaker() const { return speaker_; }
  const ModelParams& discriminator() const { return discriminator_; }
  const FrozenChecksums& checksums() const { return checksums_; }
  long steps_done() const { return steps_; }
  /// The ASA-DSR system: the frozen networks with theta_s^asa.
  SystemBundle adapted() const;

 private:
  const SystemBundle sv_;
  ModelParams speaker_;
  ModelParams discriminator_;
  StageConfig stage_;
  double lambda_;
  bool use_grl_;
  optim::Optimizer speaker_opt_;
  optim::Optimizer discriminator_opt_;
  FrozenChecksums checksums_;
  long steps_ = 0;
};

}  // namespace dsr::asa
