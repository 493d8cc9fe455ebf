#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tensor is a cheap handle onto a graph node. Operations on tensors that
// require gradients record their inputs and a backward rule; backward() walks
// the recorded graph in reverse topological order. Everything is 2-D: vectors
// are 1xd rows and scalars are 1x1.

#include "dtv/types.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace dtv::ag {

struct Node;

class Tensor {
 public:
  Tensor() = default;

  /// Leaf that never receives a gradient.
  static Tensor constant(Matrix value);
  /// Leaf that accumulates a gradient on backward().
  static Tensor parameter(Matrix value);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const;
  /// Direct write access for optimizers. Only valid on leaves.
  Matrix& mutable_value();

  /// Gradient buffer; zero-filled with the value's shape when nothing has
  /// been accumulated yet.
  const Matrix& grad() const;
  bool has_grad() const;
  void zero_grad();

  bool requires_grad() const;
  bool is_leaf() const;

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Tensor make_result(Matrix, std::vector<Tensor>, std::function<void(Node&)>);
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  std::shared_ptr<Node> node_;
};

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& contribution);
};

/// Topologically ordered view of every node reachable from a root that
/// participates in differentiation (inputs before consumers).
struct ComputeGraph {
  std::vector<Node*> nodes;
};

ComputeGraph topological_order(const Tensor& root);

/// Propagates d(root)/d(leaf) into every reachable parameter. Leaf gradients
/// accumulate across calls; intermediate gradients are recomputed each call.
void backward(const Tensor& root);

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Arithmetic.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Adds a 1xc row to every row of an rxc matrix.
Tensor add_row(const Tensor& m, const Tensor& row);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double factor);
/// Multiplies every entry by a 1x1 tensor.
Tensor scale_by(const Tensor& t, const Tensor& factor);
Tensor transpose(const Tensor& t);
Tensor exp(const Tensor& t);

// Structure.
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& t, Index begin, Index count);
Tensor slice_cols(const Tensor& t, Index begin, Index count);
/// Embedding lookup: result row i is table row indices[i].
Tensor gather_rows(const Tensor& table, const std::vector<Index>& indices);
/// Main diagonal of a square matrix as an nx1 column.
Tensor diagonal(const Tensor& t);

// Reductions.
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
/// rxc -> rx1
Tensor row_sum(const Tensor& t);
/// rxc -> 1xc
Tensor mean_rows(const Tensor& t);
/// Inner product of two vectors of equal length, as 1x1.
Tensor dot(const Tensor& a, const Tensor& b);

// Nonlinearities.
Tensor softmax_rows(const Tensor& t);
Tensor log_softmax_rows(const Tensor& t);
Tensor relu(const Tensor& t);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& t);
Tensor tanh(const Tensor& t);
/// Row-wise normalization followed by a learnable 1xc gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon = 1e-5);
/// Scales every row to unit L2 norm.
Tensor normalize_rows(const Tensor& t, double epsilon = 1e-12);

}  // namespace dtv::ag
