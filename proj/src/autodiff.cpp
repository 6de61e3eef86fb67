#include "dsr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace dsr::ad {

namespace {

Var make_node(Matrix value, std::vector<NodePtr> parents,
              std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  node->requires_grad = needs;
  if (needs) {
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
}

template <typename Expr>
void accumulate(const NodePtr& p, const Expr& delta) {
  if (p && p->requires_grad) p->grad_ref() += delta;
}

}  // namespace

double Var::scalar() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("scalar(): value is not 1x1");
  return value()(0, 0);
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var leaf(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void backward(const Var& root) { backward(root, Matrix::Ones(root.rows(), root.cols())); }

void backward(const Var& root, const Matrix& seed) {
  if (seed.rows() != root.rows() || seed.cols() != root.cols())
    throw ShapeError("backward: seed shape mismatch");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_ref() += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
}

Var add(const Var& a, const Var& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    return make_node(a.value() + b.value(), {a.node(), b.node()}, [](Node& n) {
      accumulate(n.parents[0], n.grad);
      accumulate(n.parents[1], n.grad);
    });
  }
  if (b.rows() == 1 && b.cols() == a.cols()) {
    Matrix v = a.value().rowwise() + b.value().row(0);
    return make_node(std::move(v), {a.node(), b.node()}, [](Node& n) {
      accumulate(n.parents[0], n.grad);
      accumulate(n.parents[1], n.grad.colwise().sum());
    });
  }
  if (b.rows() == 1 && b.cols() == 1) {
    Matrix v = a.value().array() + b.value()(0, 0);
    return make_node(std::move(v), {a.node(), b.node()}, [](Node& n) {
      accumulate(n.parents[0], n.grad);
      if (n.parents[1]->requires_grad) n.parents[1]->grad_ref()(0, 0) += n.grad.sum();
    });
  }
  require_same_shape(a, b, "add");
  return {};
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_node(a.value() - b.value(), {a.node(), b.node()}, [](Node& n) {
    accumulate(n.parents[0], n.grad);
    accumulate(n.parents[1], -n.grad);
  });
}

Var cmul(const Var& a, const Var& b) {
  require_same_shape(a, b, "cmul");
  return make_node(a.value().cwiseProduct(b.value()), {a.node(), b.node()}, [](Node& n) {
    accumulate(n.parents[0], n.grad.cwiseProduct(n.parents[1]->value));
    accumulate(n.parents[1], n.grad.cwiseProduct(n.parents[0]->value));
  });
}

Var scale(const Var& a, double s) {
  return make_node(a.value() * s, {a.node()},
                   [s](Node& n) { accumulate(n.parents[0], n.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  return make_node(a.value().array() + s, {a.node()},
                   [](Node& n) { accumulate(n.parents[0], n.grad); });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("mul_scalar: s must be 1x1");
  return make_node(a.value() * s.value()(0, 0), {a.node(), s.node()}, [](Node& n) {
    accumulate(n.parents[0], n.grad * n.parents[1]->value(0, 0));
    if (n.parents[1]->requires_grad)
      n.parents[1]->grad_ref()(0, 0) += n.grad.cwiseProduct(n.parents[0]->value).sum();
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  Matrix v = a.value() * b.value();
  return make_node(std::move(v), {a.node(), b.node()}, [](Node& n) {
    if (n.parents[0]->requires_grad)
      n.parents[0]->grad_ref().noalias() += n.grad * n.parents[1]->value.transpose();
    if (n.parents[1]->requires_grad)
      n.parents[1]->grad_ref().noalias() += n.parents[0]->value.transpose() * n.grad;
  });
}

Var transpose(const Var& a) {
  return make_node(a.value().transpose(), {a.node()},
                   [](Node& n) { accumulate(n.parents[0], n.grad.transpose()); });
}

Var tanh(const Var& a) {
  Matrix v = a.value().array().tanh();
  return make_node(std::move(v), {a.node()}, [](Node& n) {
    accumulate(n.parents[0], (n.grad.array() * (1.0 - n.value.array().square())).matrix());
  });
}

Var sigmoid(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make_node(std::move(v), {a.node()}, [](Node& n) {
    accumulate(n.parents[0],
               (n.grad.array() * n.value.array() * (1.0 - n.value.array())).matrix());
  });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var leaky_relu(const Var& a, double slope) {
  Matrix v = a.value().unaryExpr([slope](double x) { return x > 0 ? x : slope * x; });
  return make_node(std::move(v), {a.node()}, [slope](Node& n) {
    const Matrix& x = n.parents[0]->value;
    accumulate(n.parents[0],
               n.grad.binaryExpr(x, [slope](double g, double xi) { return xi > 0 ? g : slope * g; }));
  });
}

Var exp(const Var& a) {
  Matrix v = a.value().array().exp();
  return make_node(std::move(v), {a.node()}, [](Node& n) {
    accumulate(n.parents[0], n.grad.cwiseProduct(n.value));
  });
}

Var log(const Var& a) {
  Matrix v = a.value().array().log();
  return make_node(std::move(v), {a.node()}, [](Node& n) {
    accumulate(n.parents[0], n.grad.cwiseQuotient(n.parents[0]->value));
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Matrix v = a.value().cwiseMax(lo).cwiseMin(hi);
  return make_node(std::move(v), {a.node()}, [lo, hi](Node& n) {
    const Matrix& x = n.parents[0]->value;
    accumulate(n.parents[0], n.grad.binaryExpr(x, [lo, hi](double g, double xi) {
      return (xi < lo || xi > hi) ? 0.0 : g;
    }));
  });
}

Var sum(const Var& a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return make_node(std::move(v), {a.node()}, [](Node& n) {
    const auto& p = n.parents[0];
    accumulate(p, Matrix::Constant(p->value.rows(), p->value.cols(), n.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw ShapeError("mean_rows: empty input");
  const double inv = 1.0 / static_cast<double>(a.rows());
  Matrix v = a.value().colwise().sum() * inv;
  return make_node(std::move(v), {a.node()}, [inv](Node& n) {
    const auto& p = n.parents[0];
    accumulate(p, (n.grad * inv).replicate(p->value.rows(), 1));
  });
}

Var softmax_rows(const Var& a) {
  Matrix v = a.value();
  for (Index r = 0; r < v.rows(); ++r) {
    const double mx = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - mx).exp();
    v.row(r) /= v.row(r).sum();
  }
  return make_node(std::move(v), {a.node()}, [](Node& n) {
    // dx = y * (g - <g, y>)
    Vector dots = n.grad.cwiseProduct(n.value).rowwise().sum();
    Matrix d = n.value.array() * (n.grad.colwise() - dots).array();
    accumulate(n.parents[0], d);
  });
}

Var log_softmax_rows(const Var& a) {
  Matrix v = a.value();
  for (Index r = 0; r < v.rows(); ++r) {
    const double mx = v.row(r).maxCoeff();
    const double lse = mx + std::log((v.row(r).array() - mx).exp().sum());
    v.row(r).array() -= lse;
  }
  return make_node(std::move(v), {a.node()}, [](Node& n) {
    // dx = g - softmax * sum(g)
    Vector sums = n.grad.rowwise().sum();
    Matrix d = n.grad - (n.value.array().exp().colwise() * sums.array()).matrix();
    accumulate(n.parents[0], d);
  });
}

Var row_norms(const Var& a) {
  Matrix v = a.value().rowwise().norm();
  return make_node(std::move(v), {a.node()}, [](Node& n) {
    const Matrix& x = n.parents[0]->value;
    Matrix d(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
      const double norm = n.value(r, 0);
      if (norm > 0)
        d.row(r) = x.row(r) * (n.grad(r, 0) / norm);
      else
        d.row(r).setZero();
    }
    accumulate(n.parents[0], d);
  });
}

Var normalize_rows(const Var& a, double eps) {
  const Matrix& x = a.value();
  Vector norms = x.rowwise().norm();
  Matrix v(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) v.row(r) = x.row(r) / std::max(norms(r), eps);
  return make_node(std::move(v), {a.node()}, [norms, eps](Node& n) {
    Matrix d(n.value.rows(), n.value.cols());
    for (Index r = 0; r < n.value.rows(); ++r) {
      const double nr = std::max(norms(r), eps);
      if (norms(r) > eps) {
        const double dot = n.grad.row(r).dot(n.value.row(r));
        d.row(r) = (n.grad.row(r) - n.value.row(r) * dot) / nr;
      } else {
        d.row(r) = n.grad.row(r) / nr;
      }
    }
    accumulate(n.parents[0], d);
  });
}

Var cross_entropy_rows(const Var& logits, std::span<const int> targets) {
  if (static_cast<Index>(targets.size()) != logits.rows())
    throw ShapeError("cross_entropy_rows: target count differs from row count");
  const Matrix& x = logits.value();
  Matrix probs(x.rows(), x.cols());
  double loss = 0.0;
  for (Index r = 0; r < x.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= x.cols()) throw ShapeError("cross_entropy_rows: target out of range");
    const double mx = x.row(r).maxCoeff();
    probs.row(r) = (x.row(r).array() - mx).exp();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    loss -= x(r, t) - mx - std::log(z);
  }
  Matrix v(1, 1);
  v(0, 0) = loss;
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_node(std::move(v), {logits.node()},
                   [probs = std::move(probs), tgt = std::move(tgt)](Node& n) {
                     Matrix d = probs;
                     for (Index r = 0; r < d.rows(); ++r) d(r, tgt[static_cast<std::size_t>(r)]) -= 1.0;
                     accumulate(n.parents[0], d * n.grad(0, 0));
                   });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  std::vector<NodePtr> parents;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
    widths.push_back(p.cols());
    parents.push_back(p.node());
  }
  Matrix v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_node(std::move(v), std::move(parents), [widths](Node& n) {
    Index offset = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      accumulate(n.parents[i], n.grad.middleCols(offset, widths[i]));
      offset += widths[i];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  std::vector<NodePtr> parents;
  std::vector<Index> heights;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
    heights.push_back(p.rows());
    parents.push_back(p.node());
  }
  Matrix v(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_node(std::move(v), std::move(parents), [heights](Node& n) {
    Index offset = 0;
    for (std::size_t i = 0; i < heights.size(); ++i) {
      accumulate(n.parents[i], n.grad.middleRows(offset, heights[i]));
      offset += heights[i];
    }
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
  return make_node(a.value().middleRows(start, count), {a.node()}, [start, count](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad_ref().middleRows(start, count) += n.grad;
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  return make_node(a.value().middleCols(start, count), {a.node()}, [start, count](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad_ref().middleCols(start, count) += n.grad;
  });
}

Var broadcast_rows(const Var& row, Index count) {
  if (row.rows() != 1) throw ShapeError("broadcast_rows: input must be a single row");
  return make_node(row.value().replicate(count, 1), {row.node()}, [](Node& n) {
    accumulate(n.parents[0], n.grad.colwise().sum());
  });
}

Var flatten_rows(const Var& a) {
  const Index r = a.rows();
  const Index c = a.cols();
  Matrix v(r * c, 1);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) v(i * c + j, 0) = a.value()(i, j);
  return make_node(std::move(v), {a.node()}, [r, c](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Matrix& d = n.parents[0]->grad_ref();
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) d(i, j) += n.grad(i * c + j, 0);
  });
}

Var grl(const Var& a) {
  return make_node(a.value(), {a.node()}, [](Node& n) { accumulate(n.parents[0], -n.grad); });
}

namespace {

Index conv_out_len(Index in, int kernel, int stride, int pad) {
  const Index span = in + 2 * pad - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

}  // namespace

Var conv1d(const Var& x, const Var& weight, const Var& bias, int kernel, int stride, int pad) {
  const Index t_in = x.rows();
  const Index c_in = x.cols();
  if (weight.rows() != kernel * c_in)
    throw ShapeError("conv1d: weight rows must equal kernel * input channels");
  const Index c_out = weight.cols();
  const Index t_out = conv_out_len(t_in, kernel, stride, pad);
  if (t_out <= 0) throw ShapeError("conv1d: input shorter than kernel");

  Matrix cols = Matrix::Zero(t_out, kernel * c_in);
  const Matrix& xv = x.value();
  for (Index t = 0; t < t_out; ++t) {
    for (int k = 0; k < kernel; ++k) {
      const Index src = t * stride - pad + k;
      if (src >= 0 && src < t_in) cols.block(t, k * c_in, 1, c_in) = xv.row(src);
    }
  }
  Matrix v = cols * weight.value();
  const bool has_bias = bias.valid();
  if (has_bias) {
    if (bias.rows() != 1 || bias.cols() != c_out) throw ShapeError("conv1d: bias shape");
    v.rowwise() += bias.value().row(0);
  }
  std::vector<NodePtr> parents{x.node(), weight.node()};
  if (has_bias) parents.push_back(bias.node());
  return make_node(std::move(v), std::move(parents),
                   [cols = std::move(cols), kernel, stride, pad, t_in, c_in, has_bias](Node& n) {
                     if (n.parents[1]->requires_grad)
                       n.parents[1]->grad_ref().noalias() += cols.transpose() * n.grad;
                     if (has_bias) accumulate(n.parents[2], n.grad.colwise().sum());
                     if (n.parents[0]->requires_grad) {
                       Matrix dcols = n.grad * n.parents[1]->value.transpose();
                       Matrix& dx = n.parents[0]->grad_ref();
                       for (Index t = 0; t < dcols.rows(); ++t) {
                         for (int k = 0; k < kernel; ++k) {
                           const Index src = t * stride - pad + k;
                           if (src >= 0 && src < t_in) dx.row(src) += dcols.block(t, k * c_in, 1, c_in);
                         }
                       }
                     }
                   });
}

Image conv2d_output(Image in, int kernel, int stride, int pad) {
  return {conv_out_len(in.height, kernel, stride, pad), conv_out_len(in.width, kernel, stride, pad)};
}

Var conv2d(const Var& x, Image shape, const Var& weight, const Var& bias, int kernel, int stride,
           int pad) {
  const Index c_in = x.cols();
  if (x.rows() != shape.height * shape.width) throw ShapeError("conv2d: input size does not match image shape");
  if (weight.rows() != kernel * kernel * c_in) throw ShapeError("conv2d: weight rows must equal K*K*Cin");
  const Image out = conv2d_output(shape, kernel, stride, pad);
  if (out.height <= 0 || out.width <= 0) throw ShapeError("conv2d: input smaller than kernel");
  const Index c_out = weight.cols();

  // Each im2col row lists, for one output position, the K*K taps of all
  // input channels; -1 marks zero padding.
  std::vector<Index> taps(static_cast<std::size_t>(out.height * out.width * kernel * kernel));
  Matrix cols = Matrix::Zero(out.height * out.width, kernel * kernel * c_in);
  const Matrix& xv = x.value();
  for (Index oh = 0; oh < out.height; ++oh) {
    for (Index ow = 0; ow < out.width; ++ow) {
      const Index row = oh * out.width + ow;
      for (int kh = 0; kh < kernel; ++kh) {
        for (int kw = 0; kw < kernel; ++kw) {
          const Index ih = oh * stride - pad + kh;
          const Index iw = ow * stride - pad + kw;
          const Index tap = kh * kernel + kw;
          Index src = -1;
          if (ih >= 0 && ih < shape.height && iw >= 0 && iw < shape.width) {
            src = ih * shape.width + iw;
            cols.block(row, tap * c_in, 1, c_in) = xv.row(src);
          }
          taps[static_cast<std::size_t>(row * kernel * kernel + tap)] = src;
        }
      }
    }
  }
  Matrix v = cols * weight.value();
  const bool has_bias = bias.valid();
  if (has_bias) {
    if (bias.rows() != 1 || bias.cols() != c_out) throw ShapeError("conv2d: bias shape");
    v.rowwise() += bias.value().row(0);
  }
  std::vector<NodePtr> parents{x.node(), weight.node()};
  if (has_bias) parents.push_back(bias.node());
  const Index kk = kernel * kernel;
  return make_node(std::move(v), std::move(parents),
                   [cols = std::move(cols), taps = std::move(taps), kk, c_in, has_bias](Node& n) {
                     if (n.parents[1]->requires_grad)
                       n.parents[1]->grad_ref().noalias() += cols.transpose() * n.grad;
                     if (has_bias) accumulate(n.parents[2], n.grad.colwise().sum());
                     if (n.parents[0]->requires_grad) {
                       Matrix dcols = n.grad * n.parents[1]->value.transpose();
                       Matrix& dx = n.parents[0]->grad_ref();
                       for (Index row = 0; row < dcols.rows(); ++row) {
                         for (Index tap = 0; tap < kk; ++tap) {
                           const Index src = taps[static_cast<std::size_t>(row * kk + tap)];
                           if (src >= 0) dx.row(src) += dcols.block(row, tap * c_in, 1, c_in);
                         }
                       }
                     }
                   });
}

namespace {

inline double sigm(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var lstm(const Var& x, const Var& w_input, const Var& w_hidden, const Var& bias, bool reverse) {
  const Index steps = x.rows();
  const Index hidden = w_hidden.rows();
  if (w_input.rows() != x.cols() || w_input.cols() != 4 * hidden || w_hidden.cols() != 4 * hidden ||
      bias.rows() != 1 || bias.cols() != 4 * hidden)
    throw ShapeError("lstm: parameter shapes inconsistent with input");
  if (steps == 0) throw ShapeError("lstm: empty sequence");

  Matrix pre = x.value() * w_input.value();
  pre.rowwise() += bias.value().row(0);
  Matrix gates(steps, 4 * hidden);  // post-activation
  Matrix cell(steps, hidden);
  Matrix cell_tanh(steps, hidden);
  Matrix h(steps, hidden);
  RowVector h_prev = RowVector::Zero(hidden);
  RowVector c_prev = RowVector::Zero(hidden);
  const Matrix& wh = w_hidden.value();
  for (Index s = 0; s < steps; ++s) {
    const Index t = reverse ? steps - 1 - s : s;
    RowVector z = pre.row(t);
    z.noalias() += h_prev * wh;
    for (Index j = 0; j < hidden; ++j) {
      gates(t, j) = sigm(z(j));
      gates(t, hidden + j) = sigm(z(hidden + j));
      gates(t, 2 * hidden + j) = std::tanh(z(2 * hidden + j));
      gates(t, 3 * hidden + j) = sigm(z(3 * hidden + j));
    }
    cell.row(t) = gates.row(t).segment(hidden, hidden).cwiseProduct(c_prev) +
                  gates.row(t).segment(0, hidden).cwiseProduct(gates.row(t).segment(2 * hidden, hidden));
    cell_tanh.row(t) = cell.row(t).array().tanh();
    h.row(t) = gates.row(t).segment(3 * hidden, hidden).cwiseProduct(cell_tanh.row(t));
    h_prev = h.row(t);
    c_prev = cell.row(t);
  }

  Matrix out = h;
  return make_node(
      std::move(out), {x.node(), w_input.node(), w_hidden.node(), bias.node()},
      [gates = std::move(gates), cell = std::move(cell), cell_tanh = std::move(cell_tanh), steps,
       hidden, reverse](Node& n) {
        const Matrix& wh = n.parents[2]->value;
        Matrix dz(steps, 4 * hidden);
        Matrix h_before = Matrix::Zero(steps, hidden);  // h_{t-1} in processing order
        RowVector dh_next = RowVector::Zero(hidden);
        RowVector dc_next = RowVector::Zero(hidden);
        for (Index s = steps - 1; s >= 0; --s) {
          const Index t = reverse ? steps - 1 - s : s;
          const Index prev = reverse ? t + 1 : t - 1;
          const bool has_prev = s > 0;
          RowVector dh = n.grad.row(t) + dh_next;
          const auto i_g = gates.row(t).segment(0, hidden).array();
          const auto f_g = gates.row(t).segment(hidden, hidden).array();
          const auto c_g = gates.row(t).segment(2 * hidden, hidden).array();
          const auto o_g = gates.row(t).segment(3 * hidden, hidden).array();
          const auto tc = cell_tanh.row(t).array();
          RowVector dc = (dh.array() * o_g * (1.0 - tc.square())).matrix() + dc_next;
          RowVector c_before = has_prev ? RowVector(cell.row(prev)) : RowVector::Zero(hidden);
          dz.row(t).segment(0, hidden) = (dc.array() * c_g * i_g * (1.0 - i_g)).matrix();
          dz.row(t).segment(hidden, hidden) = (dc.array() * c_before.array() * f_g * (1.0 - f_g)).matrix();
          dz.row(t).segment(2 * hidden, hidden) = (dc.array() * i_g * (1.0 - c_g.square())).matrix();
          dz.row(t).segment(3 * hidden, hidden) = (dh.array() * tc * o_g * (1.0 - o_g)).matrix();
          dc_next = (dc.array() * f_g).matrix();
          dh_next.noalias() = dz.row(t) * wh.transpose();
          if (has_prev) h_before.row(t) = n.value.row(prev);
        }
        if (n.parents[0]->requires_grad)
          n.parents[0]->grad_ref().noalias() += dz * n.parents[1]->value.transpose();
        if (n.parents[1]->requires_grad)
          n.parents[1]->grad_ref().noalias() += n.parents[0]->value.transpose() * dz;
        if (n.parents[2]->requires_grad) n.parents[2]->grad_ref().noalias() += h_before.transpose() * dz;
        accumulate(n.parents[3], dz.colwise().sum());
      });
}

}  // namespace dsr::ad
