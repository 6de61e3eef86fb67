#pragma once

// Reverse-mode differentiation over dense double matrices.
//
// A forward pass builds a graph of Nodes; backward() walks it in reverse
// topological order. Nodes that do not depend on any gradient-requiring leaf
// keep no parents and no backward closure, so gradients that cannot flow are
// exactly zero rather than numerically small.
//
// Sequence tensors are laid out time-major: one row per frame, one column per
// feature.

#include "dsr/core.hpp"

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace dsr::ad {

struct Node {
  Matrix value;
  Matrix grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  Matrix& grad_ref() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  /// Accumulated gradient; a zero matrix if nothing reached this node.
  Matrix grad() const {
    if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
    return node_->grad;
  }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  double scalar() const;
  bool valid() const { return static_cast<bool>(node_); }
  const NodePtr& node() const { return node_; }
  void zero_grad() { node_->grad.resize(0, 0); }

 private:
  NodePtr node_;
};

Var constant(Matrix value);
Var leaf(Matrix value);

/// Seeds the (1x1) root with 1 and accumulates gradients into every
/// gradient-requiring node reachable from it.
void backward(const Var& root);
void backward(const Var& root, const Matrix& seed);

// Elementwise / broadcasting arithmetic. add() accepts b with the same shape
// as a, a 1xC row broadcast over a's rows, or a 1x1 scalar.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var cmul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, const Var& s);  // s is 1x1
Var neg(const Var& a);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var exp(const Var& a);
Var log(const Var& a);
Var clamp(const Var& a, double lo, double hi);

Var sum(const Var& a);
Var mean(const Var& a);
/// Column means, 1xC.
Var mean_rows(const Var& a);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
/// Euclidean norm of every row, Rx1. The gradient at a zero row is zero.
Var row_norms(const Var& a);
Var normalize_rows(const Var& a, double eps = 1e-12);
/// Sum over rows of -log softmax(logits)[target].
Var cross_entropy_rows(const Var& logits, std::span<const int> targets);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
/// Repeats a 1xC row `count` times.
Var broadcast_rows(const Var& row, Index count);
/// Row-major flatten of an R x C matrix into (R*C) x 1 (entry r*C + c).
Var flatten_rows(const Var& a);

/// Gradient reversal: identity forward, gradient multiplied by -1 backward.
Var grl(const Var& a);

/// 1-D convolution over time. x: T x Cin; weight: (K*Cin) x Cout laid out
/// tap-major; bias: 1 x Cout (may be invalid for no bias).
Var conv1d(const Var& x, const Var& weight, const Var& bias, int kernel, int stride,
           int pad);

struct Image {
  Index height;
  Index width;
};

/// 2-D convolution. x: (H*W) x Cin with row index h*W+w; weight:
/// (K*K*Cin) x Cout; bias: 1 x Cout. Output is (Ho*Wo) x Cout.
Var conv2d(const Var& x, Image shape, const Var& weight, const Var& bias, int kernel,
           int stride, int pad);
Image conv2d_output(Image in, int kernel, int stride, int pad);

/// Single-layer LSTM over a sequence. x: T x I; w_input: I x 4H;
/// w_hidden: H x 4H; bias: 1 x 4H; gate order (input, forget, cell, output).
/// Returns T x H hidden states in time order; `reverse` runs right to left.
Var lstm(const Var& x, const Var& w_input, const Var& w_hidden, const Var& bias,
         bool reverse = false);

}  // namespace dsr::ad
