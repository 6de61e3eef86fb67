#pragma once

// Training objectives shared by the SV-DSR stages and adaptation.

#include "dsr/autodiff.hpp"

namespace dsr::losses {

/// Mean over frames of the per-frame Euclidean distance ||z_t - m_t||.
ad::Var generation_loss(const ad::Var& z, const ad::Var& m);
double generation_loss(const Matrix& z, const Matrix& m);

/// Same metric, between the dysarthric reconstruction and its target.
inline ad::Var adaptation_loss(const ad::Var& z, const ad::Var& m) { return generation_loss(z, m); }
inline double adaptation_loss(const Matrix& z, const Matrix& m) { return generation_loss(z, m); }

/// Softmax-contrast GE2E loss summed over all N*M utterances.
///
/// `embeddings` holds N*M rows ordered speaker-major (rows j*M .. j*M+M-1
/// belong to speaker j). `w` and `b` are 1x1. The own-speaker centroid
/// leaves the scored utterance out.
ad::Var ge2e_loss(const ad::Var& embeddings, Index speakers, Index utterances, const ad::Var& w, const ad::Var& b);

/// log(1 - f_sv) + log(f_asa), each averaged over the batch. Inputs are
/// B x 1 columns of discriminator outputs.
ad::Var discrimination_loss(const ad::Var& f_sv, const ad::Var& f_asa);
double discrimination_loss(double f_sv, double f_asa);

/// L_adapt - lambda * L_dis.
ad::Var mtl_loss(const ad::Var& adapt, const ad::Var& dis, double lambda = 1.0);
double mtl_loss(double adapt, double dis, double lambda = 1.0);

}  // namespace dsr::losses
