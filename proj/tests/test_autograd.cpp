#include "dtv/autograd.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <unordered_map>

namespace dtv {
namespace {

using ag::Tensor;
using testing::gradient_check;
using testing::uniform;

constexpr double kGradTol = 1e-4;

Tensor param(Index r, Index c, std::mt19937_64& rng) { return Tensor::parameter(uniform(r, c, rng)); }

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  std::mt19937_64 rng(1);
  const Matrix b = uniform(3, 5, rng);
  const Tensor out = ag::matmul(Tensor::constant(Matrix::Identity(3, 3)), Tensor::constant(b));
  EXPECT_EQ(out.value(), b);
}

TEST(Matmul, ScalarProduct) {
  const Tensor out = ag::matmul(Tensor::constant(Matrix::Constant(1, 1, 2.0)), Tensor::constant(Matrix::Constant(1, 1, 3.0)));
  EXPECT_EQ(out.item(), 6.0);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(2);
  const Matrix a = uniform(4, 5, rng);
  const Matrix b = uniform(5, 3, rng);
  const Matrix got = ag::matmul(Tensor::constant(a), Tensor::constant(b)).value();
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 3; ++j) {
      double acc = 0;
      for (Index k = 0; k < 5; ++k) acc += a(i, k) * b(k, j);
      EXPECT_NEAR(got(i, j), acc, 1e-12);
    }
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  const Tensor a = Tensor::constant(Matrix::Zero(2, 3));
  const Tensor b = Tensor::constant(Matrix::Zero(4, 2));
  try {
    ag::matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Softmax, EqualValuesAreUniform) {
  const Matrix out = ag::softmax_rows(Tensor::constant(Matrix::Constant(1, 4, 0.7))).value();
  for (Index j = 0; j < 4; ++j) EXPECT_NEAR(out(0, j), 0.25, 1e-15);
}

TEST(Softmax, LogTwoGivesThirds) {
  Matrix in(1, 2);
  in << 0.0, std::log(2.0);
  const Matrix out = ag::softmax_rows(Tensor::constant(in)).value();
  EXPECT_NEAR(out(0, 0), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(out(0, 1), 2.0 / 3.0, 1e-12);
}

TEST(Softmax, ShiftInvariant) {
  std::mt19937_64 rng(3);
  const Matrix x = uniform(5, 7, rng);
  const Matrix a = ag::softmax_rows(Tensor::constant(x)).value();
  const Matrix b = ag::softmax_rows(Tensor::constant((x.array() + 100.0).matrix())).value();
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Softmax, RowsAreDistributions) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix out = ag::softmax_rows(Tensor::constant(uniform(6, 9, rng, -30, 30))).value();
    for (Index r = 0; r < out.rows(); ++r) EXPECT_NEAR(out.row(r).sum(), 1.0, 1e-9);
    EXPECT_GT(out.minCoeff(), 0.0);
    EXPECT_LT(out.maxCoeff(), 1.0);
  }
}

TEST(Softmax, EmptyRowRejected) {
  EXPECT_THROW(ag::softmax_rows(Tensor::constant(Matrix(2, 0))), DimensionError);
}

TEST(Backward, SumGivesOnes) {
  std::mt19937_64 rng(5);
  Tensor x = param(3, 4, rng);
  ag::backward(ag::sum(x));
  EXPECT_EQ(x.grad(), Matrix::Ones(3, 4));
}

TEST(Backward, DotWithItself) {
  Matrix v(1, 2);
  v << 1, 2;
  Tensor x = Tensor::parameter(v);
  ag::backward(ag::dot(x, x));
  EXPECT_EQ(x.grad()(0, 0), 2.0);
  EXPECT_EQ(x.grad()(0, 1), 4.0);
}

TEST(Backward, NonScalarRootRejected) {
  std::mt19937_64 rng(6);
  Tensor x = param(2, 2, rng);
  EXPECT_THROW(ag::backward(ag::scale(x, 2.0)), DimensionError);
}

TEST(Backward, DetachedLeafGetsZeroGradient) {
  std::mt19937_64 rng(7);
  Tensor x = param(2, 3, rng);
  Tensor unused = param(4, 1, rng);
  ag::backward(ag::sum(ag::tanh(x)));
  EXPECT_EQ(unused.grad(), Matrix::Zero(4, 1));
}

TEST(Backward, SecondPassAccumulatesExactly) {
  std::mt19937_64 rng(8);
  Tensor x = param(3, 3, rng);
  Tensor w = param(3, 2, rng);
  const Tensor root = ag::sum(ag::gelu(ag::matmul(x, w)));
  ag::backward(root);
  const Matrix once = x.grad();
  ag::backward(root);
  EXPECT_EQ(x.grad(), 2.0 * once);
}

TEST(Backward, ZeroGradResets) {
  std::mt19937_64 rng(9);
  Tensor x = param(2, 2, rng);
  ag::backward(ag::sum(x));
  x.zero_grad();
  EXPECT_EQ(x.grad(), Matrix::Zero(2, 2));
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  std::mt19937_64 rng(10);
  Tensor x = param(2, 3, rng);
  const Tensor h = ag::tanh(x);
  const Tensor root = ag::sum(ag::mul(h, h));
  const ag::ComputeGraph graph = ag::topological_order(root);
  std::set<ag::Node*> seen(graph.nodes.begin(), graph.nodes.end());
  EXPECT_EQ(seen.size(), graph.nodes.size());
  std::unordered_map<ag::Node*, std::size_t> position;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) position[graph.nodes[i]] = i;
  for (ag::Node* n : graph.nodes) {
    for (const auto& in : n->inputs) {
      if (position.count(in.get())) EXPECT_LT(position[in.get()], position[n]);
    }
  }
  ag::backward(root);
  const Matrix t = x.value().array().tanh();
  const Matrix expected = (2.0 * t.array() * (1.0 - t.array().square())).matrix();
  EXPECT_LE((x.grad() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NoGrad, RecordsNothing) {
  std::mt19937_64 rng(11);
  Tensor x = param(2, 2, rng);
  ag::NoGradGuard guard;
  EXPECT_FALSE(ag::grad_enabled());
  const Tensor y = ag::sum(ag::exp(x));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->inputs.empty());
}

TEST(Finite, OverflowRaises) {
  EXPECT_THROW(ag::exp(Tensor::constant(Matrix::Constant(1, 1, 1000.0))), NonFiniteError);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(12);
    Tensor x = param(4, 6, rng);
    Tensor g = param(1, 6, rng);
    Tensor b = param(1, 6, rng);
    const Tensor out = ag::sum(ag::softmax_rows(ag::layer_norm(x, g, b)));
    ag::backward(out);
    return std::pair{out.item(), Matrix(x.grad())};
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

// Every op is checked through a random linear read-out so that each output
// entry gets a distinct upstream gradient.
class OpGradient : public ::testing::Test {
 protected:
  std::mt19937_64 rng{2024};

  double check_unary(Index r, Index c, const std::function<Tensor(const Tensor&)>& op) {
    Tensor x = param(r, c, rng);
    const Tensor probe = ag::Tensor::constant(uniform(op(x).rows(), op(x).cols(), rng));
    return gradient_check([&] { return ag::sum(ag::mul(op(x), probe)); }, {x});
  }

  double check_binary(Index ar, Index ac, Index br, Index bc,
                      const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
    Tensor a = param(ar, ac, rng);
    Tensor b = param(br, bc, rng);
    const Tensor sample = op(a, b);
    const Tensor probe = ag::Tensor::constant(uniform(sample.rows(), sample.cols(), rng));
    return gradient_check([&] { return ag::sum(ag::mul(op(a, b), probe)); }, {a, b});
  }
};

TEST_F(OpGradient, Matmul) { EXPECT_LE(check_binary(3, 4, 4, 2, ag::matmul), kGradTol); }
TEST_F(OpGradient, Add) { EXPECT_LE(check_binary(3, 4, 3, 4, ag::add), kGradTol); }
TEST_F(OpGradient, Sub) { EXPECT_LE(check_binary(3, 4, 3, 4, ag::sub), kGradTol); }
TEST_F(OpGradient, AddRow) { EXPECT_LE(check_binary(3, 4, 1, 4, ag::add_row), kGradTol); }
TEST_F(OpGradient, Mul) { EXPECT_LE(check_binary(3, 4, 3, 4, ag::mul), kGradTol); }
TEST_F(OpGradient, ScaleBy) { EXPECT_LE(check_binary(3, 4, 1, 1, ag::scale_by), kGradTol); }
TEST_F(OpGradient, Dot) { EXPECT_LE(check_binary(1, 5, 1, 5, ag::dot), kGradTol); }
TEST_F(OpGradient, Scale) {
  EXPECT_LE(check_unary(3, 4, [](const Tensor& t) { return ag::scale(t, -1.7); }), kGradTol);
}
TEST_F(OpGradient, Transpose) { EXPECT_LE(check_unary(3, 4, ag::transpose), kGradTol); }
TEST_F(OpGradient, Exp) { EXPECT_LE(check_unary(3, 4, ag::exp), kGradTol); }
TEST_F(OpGradient, Tanh) { EXPECT_LE(check_unary(3, 4, ag::tanh), kGradTol); }
TEST_F(OpGradient, Relu) { EXPECT_LE(check_unary(3, 4, ag::relu), kGradTol); }
TEST_F(OpGradient, Gelu) { EXPECT_LE(check_unary(3, 4, ag::gelu), kGradTol); }
TEST_F(OpGradient, SoftmaxRows) { EXPECT_LE(check_unary(3, 5, ag::softmax_rows), kGradTol); }
TEST_F(OpGradient, LogSoftmaxRows) { EXPECT_LE(check_unary(3, 5, ag::log_softmax_rows), kGradTol); }
TEST_F(OpGradient, NormalizeRows) {
  EXPECT_LE(check_unary(3, 5, [](const Tensor& t) { return ag::normalize_rows(t); }), kGradTol);
}
TEST_F(OpGradient, Sum) { EXPECT_LE(check_unary(3, 4, ag::sum), kGradTol); }
TEST_F(OpGradient, Mean) { EXPECT_LE(check_unary(3, 4, ag::mean), kGradTol); }
TEST_F(OpGradient, RowSum) { EXPECT_LE(check_unary(3, 4, ag::row_sum), kGradTol); }
TEST_F(OpGradient, MeanRows) { EXPECT_LE(check_unary(3, 4, ag::mean_rows), kGradTol); }
TEST_F(OpGradient, Diagonal) { EXPECT_LE(check_unary(4, 4, ag::diagonal), kGradTol); }
TEST_F(OpGradient, SliceRows) {
  EXPECT_LE(check_unary(5, 3, [](const Tensor& t) { return ag::slice_rows(t, 1, 3); }), kGradTol);
}
TEST_F(OpGradient, SliceCols) {
  EXPECT_LE(check_unary(3, 5, [](const Tensor& t) { return ag::slice_cols(t, 2, 2); }), kGradTol);
}
TEST_F(OpGradient, GatherRowsWithRepeats) {
  EXPECT_LE(check_unary(4, 3, [](const Tensor& t) { return ag::gather_rows(t, {2, 0, 2, 3}); }), kGradTol);
}
TEST_F(OpGradient, ConcatRows) {
  EXPECT_LE(check_binary(2, 3, 4, 3, [](const Tensor& a, const Tensor& b) { return ag::concat_rows({a, b, a}); }),
            kGradTol);
}
TEST_F(OpGradient, ConcatCols) {
  EXPECT_LE(check_binary(3, 2, 3, 4, [](const Tensor& a, const Tensor& b) { return ag::concat_cols({b, a}); }),
            kGradTol);
}
TEST_F(OpGradient, LayerNorm) {
  Tensor x = param(3, 6, rng);
  Tensor g = param(1, 6, rng);
  Tensor b = param(1, 6, rng);
  const Tensor probe = Tensor::constant(uniform(3, 6, rng));
  EXPECT_LE(gradient_check([&] { return ag::sum(ag::mul(ag::layer_norm(x, g, b), probe)); }, {x, g, b}), kGradTol);
}

TEST(Ops, LayerNormRowsAreStandardized) {
  std::mt19937_64 rng(13);
  const Tensor x = Tensor::constant(uniform(4, 8, rng, -5, 5));
  const Matrix out =
      ag::layer_norm(x, Tensor::constant(Matrix::Ones(1, 8)), Tensor::constant(Matrix::Zero(1, 8))).value();
  for (Index r = 0; r < 4; ++r) {
    EXPECT_NEAR(out.row(r).mean(), 0.0, 1e-12);
    EXPECT_NEAR(out.row(r).squaredNorm() / 8.0, 1.0, 1e-3);
  }
}

TEST(Ops, GatherRowsLooksUpTable) {
  std::mt19937_64 rng(14);
  const Matrix table = uniform(5, 3, rng);
  const Matrix out = ag::gather_rows(Tensor::constant(table), {4, 1}).value();
  EXPECT_EQ(out.row(0), table.row(4));
  EXPECT_EQ(out.row(1), table.row(1));
  EXPECT_THROW(ag::gather_rows(Tensor::constant(table), {5}), DimensionError);
}

TEST(Ops, GeluMatchesErfForm) {
  Matrix x(1, 3);
  x << -1.0, 0.0, 2.0;
  const Matrix out = ag::gelu(Tensor::constant(x)).value();
  for (Index j = 0; j < 3; ++j) {
    EXPECT_NEAR(out(0, j), 0.5 * x(0, j) * (1 + std::erf(x(0, j) / std::sqrt(2.0))), 1e-15);
  }
}

}  // namespace
}  // namespace dtv
