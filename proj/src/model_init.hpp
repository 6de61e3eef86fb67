#pragma once

// Shared initialisers for the network definitions.

#include "dsr/core.hpp"

#include <cmath>
#include <map>
#include <string>

namespace dsr::models::detail {

inline Matrix glorot(Rng& rng, Index fan_in, Index fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_matrix(rng, fan_in, fan_out, limit);
}

inline Matrix zeros_row(Index cols) { return Matrix::Zero(1, cols); }

/// LSTM weights uniform in +-1/sqrt(H), forget-gate bias 1.
inline void init_lstm(std::map<std::string, Matrix>& t, Rng& rng, const std::string& prefix, Index input,
                      Index hidden) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
  t[prefix + "_wx"] = uniform_matrix(rng, input, 4 * hidden, limit);
  t[prefix + "_wh"] = uniform_matrix(rng, hidden, 4 * hidden, limit);
  Matrix b = Matrix::Zero(1, 4 * hidden);
  b.middleCols(hidden, hidden).setOnes();
  t[prefix + "_b"] = b;
}

}  // namespace dsr::models::detail
