#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dsr/autodiff.hpp"
#include "gradcheck.hpp"

#include <functional>

using namespace dsr;
using dsr::testing::check_tensor;

namespace {

// Checks d/dx sum(op(x) .* projection) against central differences for every
// input tensor of a unary-or-more op.
void check_op(const std::string& name, std::vector<Matrix> inputs,
              const std::function<ad::Var(const std::vector<ad::Var>&)>& op) {
  Rng rng(stream_id(name));
  std::vector<ad::Var> leaves;
  for (const auto& m : inputs) leaves.push_back(ad::leaf(m));
  ad::Var out = op(leaves);
  const Matrix proj = gaussian_matrix(rng, out.rows(), out.cols(), 1.0);
  ad::Var loss = ad::sum(ad::cmul(out, ad::constant(proj)));
  ad::backward(loss);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto eval = [&]() {
      std::vector<ad::Var> c;
      for (const auto& m : inputs) c.push_back(ad::constant(m));
      return (op(c).value().array() * proj.array()).sum();
    };
    auto r = check_tensor(name, inputs[k], leaves[k].grad(), eval);
    INFO(name << " input " << k << " rel err " << r.relative_error);
    CHECK(r.relative_error < 1e-6);
  }
}

Matrix rnd(Index r, Index c, std::uint64_t seed = 1) {
  Rng rng(seed);
  return gaussian_matrix(rng, r, c, 1.0);
}

}  // namespace

TEST_CASE("elementwise and matrix ops match central differences") {
  check_op("matmul", {rnd(3, 4, 1), rnd(4, 2, 2)},
           [](const auto& v) { return ad::matmul(v[0], v[1]); });
  check_op("add_row", {rnd(5, 3, 3), rnd(1, 3, 4)}, [](const auto& v) { return ad::add(v[0], v[1]); });
  check_op("add_scalar_var", {rnd(5, 3, 3), rnd(1, 1, 4)}, [](const auto& v) { return ad::add(v[0], v[1]); });
  check_op("cmul", {rnd(3, 3, 5), rnd(3, 3, 6)}, [](const auto& v) { return ad::cmul(v[0], v[1]); });
  check_op("mul_scalar", {rnd(3, 2, 5), rnd(1, 1, 6)},
           [](const auto& v) { return ad::mul_scalar(v[0], v[1]); });
  check_op("tanh", {rnd(4, 3, 7)}, [](const auto& v) { return ad::tanh(v[0]); });
  check_op("sigmoid", {rnd(4, 3, 8)}, [](const auto& v) { return ad::sigmoid(v[0]); });
  check_op("exp", {rnd(4, 3, 9)}, [](const auto& v) { return ad::exp(v[0]); });
  check_op("log", {rnd(4, 3, 10).array().abs() + 0.5},
           [](const auto& v) { return ad::log(v[0]); });
  check_op("softmax", {rnd(4, 5, 11)}, [](const auto& v) { return ad::softmax_rows(v[0]); });
  check_op("log_softmax", {rnd(4, 5, 12)}, [](const auto& v) { return ad::log_softmax_rows(v[0]); });
  check_op("row_norms", {rnd(4, 5, 13)}, [](const auto& v) { return ad::row_norms(v[0]); });
  check_op("normalize_rows", {rnd(4, 5, 14)}, [](const auto& v) { return ad::normalize_rows(v[0]); });
  check_op("mean_rows", {rnd(4, 5, 15)}, [](const auto& v) { return ad::mean_rows(v[0]); });
  check_op("transpose", {rnd(2, 5, 16)}, [](const auto& v) { return ad::transpose(v[0]); });
  check_op("flatten", {rnd(3, 4, 17)}, [](const auto& v) { return ad::flatten_rows(v[0]); });
  check_op("broadcast", {rnd(1, 4, 18)}, [](const auto& v) { return ad::broadcast_rows(v[0], 3); });
  check_op("slice_concat", {rnd(5, 4, 19), rnd(5, 2, 20)}, [](const auto& v) {
    std::vector<ad::Var> parts{ad::slice_cols(v[0], 1, 2), v[1], ad::slice_rows(v[0], 0, 5)};
    parts.pop_back();
    ad::Var c = ad::concat_cols(parts);
    std::vector<ad::Var> rows{ad::slice_rows(c, 1, 2), c};
    return ad::concat_rows(rows);
  });
}

TEST_CASE("cross entropy gradient") {
  Matrix logits = rnd(4, 6, 21);
  std::vector<int> targets{0, 5, 2, 2};
  ad::Var x = ad::leaf(logits);
  ad::backward(ad::cross_entropy_rows(x, targets));
  auto eval = [&]() { return ad::cross_entropy_rows(ad::constant(logits), targets).scalar(); };
  CHECK(check_tensor("ce", logits, x.grad(), eval).relative_error < 1e-6);
}

TEST_CASE("conv1d gradient with stride and padding") {
  for (int stride : {1, 2}) {
    check_op("conv1d", {rnd(9, 3, 22), rnd(3 * 3, 4, 23), rnd(1, 4, 24)}, [stride](const auto& v) {
      return ad::conv1d(v[0], v[1], v[2], 3, stride, 1);
    });
  }
  CHECK_THROWS_AS(ad::conv1d(ad::constant(rnd(9, 3)), ad::constant(rnd(8, 4)), {}, 3, 1, 1), ShapeError);
}

TEST_CASE("conv2d gradient") {
  const ad::Image img{6, 5};
  check_op("conv2d", {rnd(30, 2, 25), rnd(4 * 4 * 2, 3, 26), rnd(1, 3, 27)},
           [img](const auto& v) { return ad::conv2d(v[0], img, v[1], v[2], 4, 2, 1); });
  const auto out = ad::conv2d_output(img, 4, 2, 1);
  CHECK(out.height == 3);
  CHECK(out.width == 2);
}

TEST_CASE("lstm gradient, both directions") {
  for (bool reverse : {false, true}) {
    Matrix wi = rnd(3, 8, 29) * 0.5;
    Matrix wh = rnd(2, 8, 30) * 0.5;
    check_op("lstm", {rnd(5, 3, 28), wi, wh, rnd(1, 8, 31)}, [reverse](const auto& v) {
      return ad::lstm(v[0], v[1], v[2], v[3], reverse);
    });
  }
}

TEST_CASE("clamp and leaky relu pass gradient only where active") {
  Matrix x(1, 3);
  x << -2.0, 0.5, 3.0;
  ad::Var v = ad::leaf(x);
  ad::backward(ad::sum(ad::clamp(v, 0.0, 1.0)));
  Matrix expect(1, 3);
  expect << 0.0, 1.0, 0.0;
  CHECK(v.grad() == expect);

  ad::Var w = ad::leaf(x);
  ad::backward(ad::sum(ad::leaky_relu(w, 0.2)));
  expect << 0.2, 1.0, 1.0;
  CHECK(w.grad() == expect);
}

TEST_CASE("gradient reversal") {
  Matrix x(1, 2);
  x << 1.5, -2.0;
  SUBCASE("forward is a bit-exact identity") {
    ad::Var v = ad::leaf(x);
    CHECK(ad::grl(v).value() == x);
  }
  SUBCASE("backward negates the upstream gradient exactly") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix input = gaussian_matrix(rng, 3, 4, 10.0);
      const Matrix upstream = gaussian_matrix(rng, 3, 4, 10.0);
      ad::Var v = ad::leaf(input);
      ad::Var y = ad::grl(v);
      CHECK(y.value() == input);
      ad::backward(y, upstream);
      CHECK(v.grad() == -upstream);
    }
  }
  SUBCASE("double reversal restores the gradient") {
    ad::Var v = ad::leaf(x);
    Matrix g(1, 2);
    g << 0.25, -7.0;
    ad::backward(ad::grl(ad::grl(v)), g);
    CHECK(v.grad() == g);
  }
}

TEST_CASE("constants receive no gradient and detach the graph") {
  ad::Var c = ad::constant(rnd(2, 2));
  ad::Var l = ad::leaf(rnd(2, 2, 5));
  ad::Var y = ad::sum(ad::matmul(c, c));
  CHECK_FALSE(y.requires_grad());
  ad::Var z = ad::sum(ad::add(ad::matmul(c, c), l));
  ad::backward(z);
  CHECK(c.grad().isZero(0));
  CHECK(l.grad() == Matrix::Ones(2, 2));
}

TEST_CASE("shape errors") {
  CHECK_THROWS_AS(ad::matmul(ad::constant(rnd(2, 3)), ad::constant(rnd(2, 3))), ShapeError);
  CHECK_THROWS_AS(ad::sub(ad::constant(rnd(2, 3)), ad::constant(rnd(3, 2))), ShapeError);
  CHECK_THROWS_AS(ad::add(ad::constant(rnd(2, 3)), ad::constant(rnd(2, 2))), ShapeError);
}
