#include "dsr/optim.hpp"

#include <cmath>

namespace dsr::optim {

std::string to_string(Kind kind) { return kind == Kind::kAdam ? "adam" : "adadelta"; }

Kind kind_from_string(const std::string& name) {
  if (name == "adam") return Kind::kAdam;
  if (name == "adadelta") return Kind::kAdadelta;
  throw Error("unknown optimizer '" + name + "'");
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
  state_.tag = ModuleTag::kOptimizerState;
  state_.hyper["kind"] = static_cast<long>(cfg_.kind);
  state_.hyper["step"] = 0;
}

long Optimizer::steps() const { return state_.hyper_at("step"); }

void Optimizer::load_state(const ModelParams& state) {
  if (state.tag != ModuleTag::kOptimizerState) throw Error("optimizer: not an optimizer state");
  if (state.hyper_at("kind") != static_cast<long>(cfg_.kind))
    throw Error("optimizer: saved state belongs to a different optimizer");
  state_ = state;
}

Matrix& Optimizer::slot(const std::string& prefix, const std::string& name, const Matrix& like) {
  auto [it, inserted] = state_.tensors.try_emplace(prefix + "/" + name);
  if (inserted) it->second = Matrix::Zero(like.rows(), like.cols());
  if (it->second.rows() != like.rows() || it->second.cols() != like.cols())
    throw ShapeError("optimizer: state shape differs for '" + name + "'");
  return it->second;
}

double gradient_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

void Optimizer::step(ModelParams& params, const Gradients& grads) {
  const long t = steps() + 1;
  state_.hyper["step"] = t;
  double scale = 1.0;
  if (cfg_.clip_norm > 0) {
    const double norm = gradient_norm(grads);
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }
  for (const auto& [name, raw] : grads) {
    Matrix& w = params.at(name);
    if (raw.rows() != w.rows() || raw.cols() != w.cols())
      throw ShapeError("optimizer: gradient shape differs for '" + name + "'");
    const Matrix g = raw * scale;
    if (cfg_.kind == Kind::kAdam) {
      Matrix& m = slot("m", name, w);
      Matrix& v = slot("v", name, w);
      m = cfg_.beta1 * m + (1 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1 - cfg_.beta2) * g.cwiseAbs2();
      const double c1 = 1 - std::pow(cfg_.beta1, static_cast<double>(t));
      const double c2 = 1 - std::pow(cfg_.beta2, static_cast<double>(t));
      w.array() -= cfg_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.adam_eps);
    } else {
      Matrix& eg = slot("eg", name, w);
      Matrix& ex = slot("ex", name, w);
      eg = cfg_.rho * eg + (1 - cfg_.rho) * g.cwiseAbs2();
      const Matrix dx =
          (-((ex.array() + cfg_.adadelta_eps).sqrt() / (eg.array() + cfg_.adadelta_eps).sqrt()) * g.array()).matrix();
      ex = cfg_.rho * ex + (1 - cfg_.rho) * dx.cwiseAbs2();
      w += cfg_.learning_rate * dx;
    }
  }
}

}  // namespace dsr::optim
