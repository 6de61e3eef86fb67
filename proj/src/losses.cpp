#include "dsr/losses.hpp"

#include <cmath>
#include <vector>

namespace dsr::losses {

ad::Var generation_loss(const ad::Var& z, const ad::Var& m) {
  if (z.rows() != m.rows() || z.cols() != m.cols())
    throw ShapeError("generation_loss: shape mismatch (" + std::to_string(z.rows()) + "x" + std::to_string(z.cols()) +
                     " vs " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")");
  if (z.rows() == 0) throw ShapeError("generation_loss: empty input");
  return ad::mean(ad::row_norms(ad::sub(z, m)));
}

double generation_loss(const Matrix& z, const Matrix& m) {
  return generation_loss(ad::constant(z), ad::constant(m)).scalar();
}

ad::Var ge2e_loss(const ad::Var& embeddings, Index speakers, Index utterances, const ad::Var& w, const ad::Var& b) {
  if (speakers < 2 || utterances < 2) throw Error("ge2e_loss: need at least 2 speakers and 2 utterances each");
  const Index n = speakers * utterances;
  if (embeddings.rows() != n) throw ShapeError("ge2e_loss: embedding rows differ from N*M");
  const Index dim = embeddings.cols();

  // One-hot speaker membership, n x N.
  Matrix member = Matrix::Zero(n, speakers);
  std::vector<int> targets(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) {
    member(r, r / utterances) = 1.0;
    targets[static_cast<std::size_t>(r)] = static_cast<int>(r / utterances);
  }
  const ad::Var a = ad::constant(member);
  const ad::Var e = ad::normalize_rows(embeddings);

  const ad::Var sums = ad::matmul(ad::transpose(a), embeddings);  // N x E
  const ad::Var centroids = ad::normalize_rows(sums);
  const ad::Var cross = ad::matmul(e, ad::transpose(centroids));  // n x N

  const ad::Var own_sums = ad::sub(ad::matmul(a, sums), embeddings);
  const ad::Var loo = ad::normalize_rows(own_sums);
  const ad::Var own = ad::matmul(ad::cmul(e, loo), ad::constant(Matrix::Ones(dim, 1)));  // n x 1

  const ad::Var sim = ad::add(ad::cmul(cross, ad::constant(Matrix::Ones(n, speakers) - member)),
                              ad::cmul(ad::matmul(own, ad::constant(Matrix::Ones(1, speakers))), a));
  const ad::Var logits = ad::add(ad::mul_scalar(sim, w), b);
  return ad::cross_entropy_rows(logits, targets);
}

ad::Var discrimination_loss(const ad::Var& f_sv, const ad::Var& f_asa) {
  if (f_sv.cols() != 1 || f_asa.cols() != 1 || f_sv.rows() != f_asa.rows() || f_sv.rows() == 0)
    throw ShapeError("discrimination_loss: expected matching B x 1 inputs");
  return ad::add(ad::mean(ad::log(ad::add_scalar(ad::neg(f_sv), 1.0))), ad::mean(ad::log(f_asa)));
}

double discrimination_loss(double f_sv, double f_asa) { return std::log(1.0 - f_sv) + std::log(f_asa); }

ad::Var mtl_loss(const ad::Var& adapt, const ad::Var& dis, double lambda) {
  if (lambda < 0) throw Error("mtl_loss: lambda must be non-negative");
  return ad::sub(adapt, ad::scale(dis, lambda));
}

double mtl_loss(double adapt, double dis, double lambda) {
  if (lambda < 0) throw Error("mtl_loss: lambda must be non-negative");
  return adapt - lambda * dis;
}

}  // namespace dsr::losses
