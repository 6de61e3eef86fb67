#pragma once

// Adadelta and Adam over the tensors of one ModelParams.

#include "dsr/params.hpp"

#include <string>

namespace dsr::optim {

enum class Kind { kAdadelta, kAdam };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& name);

struct OptimizerConfig {
  Kind kind = Kind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double rho = 0.95;
  double adadelta_eps = 1e-6;
  double clip_norm = 0.0;  // global gradient norm clip, 0 = off
};

/// Moment estimates live in a ModelParams tagged kOptimizerState so they
/// are checkpointed by the same container as the weights.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  /// Applies one update. Tensors absent from `grads` are left alone.
  void step(ModelParams& params, const Gradients& grads);

  long steps() const;
  const ModelParams& state() const { return state_; }
  void load_state(const ModelParams& state);
  const OptimizerConfig& config() const { return cfg_; }

 private:
  Matrix& slot(const std::string& prefix, const std::string& name, const Matrix& like);

  OptimizerConfig cfg_;
  ModelParams state_;
};

/// Global L2 norm over all gradient tensors.
double gradient_norm(const Gradients& grads);

}  // namespace dsr::optim
