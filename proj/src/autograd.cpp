#include "dtv/autograd.hpp"

#include <cmath>
#include <numbers>
#include <unordered_set>

namespace dtv::ag {

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) {
    throw NonFiniteError(std::string(op) + ": non-finite value in result " + shape_string(m));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.value()) + " and " +
                         shape_string(b.value()) + " differ");
  }
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

}  // namespace

Tensor make_result(Matrix value, std::vector<Tensor> inputs, std::function<void(Node&)> rule);

void Node::accumulate(const Matrix& contribution) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = contribution;
  } else {
    grad += contribution;
  }
}

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

const Matrix& Tensor::value() const {
  require_defined(*this, "value");
  return node_->value;
}

Matrix& Tensor::mutable_value() {
  require_defined(*this, "mutable_value");
  if (!node_->leaf) throw std::logic_error("mutable_value: tensor is not a leaf");
  return node_->value;
}

const Matrix& Tensor::grad() const {
  require_defined(*this, "grad");
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() != 0; }

void Tensor::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->leaf; }

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) {
    throw DimensionError("item: expected a 1x1 tensor, got " + shape_string(value()));
  }
  return value()(0, 0);
}

Tensor make_result(Matrix value, std::vector<Tensor> inputs, std::function<void(Node&)> rule) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->leaf = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(rule);
  }
  return Tensor(std::move(node));
}

ComputeGraph topological_order(const Tensor& root) {
  ComputeGraph graph;
  if (!root.requires_grad()) return graph;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; (node, next input index).
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      graph.nodes.push_back(node);
      stack.pop_back();
    }
  }
  return graph;
}

void backward(const Tensor& root) {
  require_defined(root, "backward");
  if (root.rows() != 1 || root.cols() != 1) {
    throw DimensionError("backward: root must be a scalar, got " + shape_string(root.value()));
  }
  const ComputeGraph graph = topological_order(root);
  if (graph.nodes.empty()) return;
  for (Node* node : graph.nodes) {
    if (!node->leaf) node->grad = Matrix::Zero(node->value.rows(), node->value.cols());
  }
  root.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = graph.nodes.rbegin(); it != graph.nodes.rend(); ++it) {
    Node* node = *it;
    if (node->backward) node->backward(*node);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.value()) +
                         " x " + shape_string(b.value()));
  }
  Matrix out = a.value() * b.value();
  check_finite(out, "matmul");
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& lhs = *self.inputs[0];
    Node& rhs = *self.inputs[1];
    if (lhs.requires_grad) lhs.accumulate(self.grad * rhs.value.transpose());
    if (rhs.requires_grad) rhs.accumulate(lhs.value.transpose() * self.grad);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  check_finite(out, "add");
  return make_result(std::move(out), {a, b}, [](Node& self) {
    self.inputs[0]->accumulate(self.grad);
    self.inputs[1]->accumulate(self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  check_finite(out, "sub");
  return make_result(std::move(out), {a, b}, [](Node& self) {
    self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate(-self.grad);
  });
}

Tensor add_row(const Tensor& m, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != m.cols()) {
    throw DimensionError("add_row: cannot broadcast " + shape_string(row.value()) + " over " +
                         shape_string(m.value()));
  }
  Matrix out = m.value().rowwise() + row.value().row(0);
  check_finite(out, "add_row");
  return make_result(std::move(out), {m, row}, [](Node& self) {
    self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate(self.grad.colwise().sum());
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  check_finite(out, "mul");
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& lhs = *self.inputs[0];
    Node& rhs = *self.inputs[1];
    if (lhs.requires_grad) lhs.accumulate(self.grad.cwiseProduct(rhs.value));
    if (rhs.requires_grad) rhs.accumulate(self.grad.cwiseProduct(lhs.value));
  });
}

Tensor scale(const Tensor& t, double factor) {
  Matrix out = t.value() * factor;
  check_finite(out, "scale");
  return make_result(std::move(out), {t},
                     [factor](Node& self) { self.inputs[0]->accumulate(self.grad * factor); });
}

Tensor scale_by(const Tensor& t, const Tensor& factor) {
  const double f = factor.item();
  Matrix out = t.value() * f;
  check_finite(out, "scale_by");
  return make_result(std::move(out), {t, factor}, [f](Node& self) {
    Node& in = *self.inputs[0];
    Node& s = *self.inputs[1];
    if (in.requires_grad) in.accumulate(self.grad * f);
    if (s.requires_grad) s.accumulate(Matrix::Constant(1, 1, self.grad.cwiseProduct(in.value).sum()));
  });
}

Tensor transpose(const Tensor& t) {
  Matrix out = t.value().transpose();
  return make_result(std::move(out), {t},
                     [](Node& self) { self.inputs[0]->accumulate(self.grad.transpose()); });
}

Tensor exp(const Tensor& t) {
  Matrix out = t.value().array().exp().matrix();
  check_finite(out, "exp");
  return make_result(std::move(out), {t}, [](Node& self) {
    self.inputs[0]->accumulate(self.grad.cwiseProduct(self.value));
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column count " + std::to_string(p.cols()) +
                           " does not match " + std::to_string(cols));
    }
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    Index off = 0;
    for (auto& in : self.inputs) {
      const Index r = in->value.rows();
      if (in->requires_grad) in->accumulate(self.grad.middleRows(off, r));
      off += r;
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row count " + std::to_string(p.rows()) +
                           " does not match " + std::to_string(rows));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    Index off = 0;
    for (auto& in : self.inputs) {
      const Index c = in->value.cols();
      if (in->requires_grad) in->accumulate(self.grad.middleCols(off, c));
      off += c;
    }
  });
}

Tensor slice_rows(const Tensor& t, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > t.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(t.value()));
  }
  Matrix out = t.value().middleRows(begin, count);
  return make_result(std::move(out), {t}, [begin, count](Node& self) {
    Node& in = *self.inputs[0];
    Matrix g = Matrix::Zero(in.value.rows(), in.value.cols());
    g.middleRows(begin, count) = self.grad;
    in.accumulate(g);
  });
}

Tensor slice_cols(const Tensor& t, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > t.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(t.value()));
  }
  Matrix out = t.value().middleCols(begin, count);
  return make_result(std::move(out), {t}, [begin, count](Node& self) {
    Node& in = *self.inputs[0];
    Matrix g = Matrix::Zero(in.value.rows(), in.value.cols());
    g.middleCols(begin, count) = self.grad;
    in.accumulate(g);
  });
}

Tensor gather_rows(const Tensor& table, const std::vector<Index>& indices) {
  Matrix out(static_cast<Index>(indices.size()), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Index r = indices[i];
    if (r < 0 || r >= table.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(r) + " outside table " +
                           shape_string(table.value()));
    }
    out.row(static_cast<Index>(i)) = table.value().row(r);
  }
  return make_result(std::move(out), {table}, [indices](Node& self) {
    Node& in = *self.inputs[0];
    Matrix g = Matrix::Zero(in.value.rows(), in.value.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) g.row(indices[i]) += self.grad.row(static_cast<Index>(i));
    in.accumulate(g);
  });
}

Tensor diagonal(const Tensor& t) {
  if (t.rows() != t.cols()) throw DimensionError("diagonal: non-square " + shape_string(t.value()));
  Matrix out = t.value().diagonal();
  return make_result(std::move(out), {t}, [](Node& self) {
    Node& in = *self.inputs[0];
    Matrix g = Matrix::Zero(in.value.rows(), in.value.cols());
    g.diagonal() = self.grad.col(0);
    in.accumulate(g);
  });
}

Tensor sum(const Tensor& t) {
  Matrix out = Matrix::Constant(1, 1, t.value().sum());
  return make_result(std::move(out), {t}, [](Node& self) {
    Node& in = *self.inputs[0];
    in.accumulate(Matrix::Constant(in.value.rows(), in.value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& t) {
  if (t.size() == 0) throw DimensionError("mean: empty tensor");
  Matrix out = Matrix::Constant(1, 1, t.value().mean());
  return make_result(std::move(out), {t}, [](Node& self) {
    Node& in = *self.inputs[0];
    const double g = self.grad(0, 0) / static_cast<double>(in.value.size());
    in.accumulate(Matrix::Constant(in.value.rows(), in.value.cols(), g));
  });
}

Tensor row_sum(const Tensor& t) {
  Matrix out = t.value().rowwise().sum();
  return make_result(std::move(out), {t}, [](Node& self) {
    Node& in = *self.inputs[0];
    in.accumulate(self.grad.replicate(1, in.value.cols()));
  });
}

Tensor mean_rows(const Tensor& t) {
  if (t.rows() == 0) throw DimensionError("mean_rows: no rows");
  Matrix out = t.value().colwise().mean();
  return make_result(std::move(out), {t}, [](Node& self) {
    Node& in = *self.inputs[0];
    const double inv = 1.0 / static_cast<double>(in.value.rows());
    in.accumulate(self.grad.replicate(in.value.rows(), 1) * inv);
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  const bool vectors = (a.rows() == 1 || a.cols() == 1) && (b.rows() == 1 || b.cols() == 1);
  if (!vectors || a.size() != b.size()) {
    throw DimensionError("dot: expected two vectors of equal length, got " + shape_string(a.value()) +
                         " and " + shape_string(b.value()));
  }
  const double v = a.value().reshaped().dot(b.value().reshaped());
  Matrix out = Matrix::Constant(1, 1, v);
  check_finite(out, "dot");
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& lhs = *self.inputs[0];
    Node& rhs = *self.inputs[1];
    const double g = self.grad(0, 0);
    if (lhs.requires_grad) {
      lhs.accumulate(rhs.value.reshaped<Eigen::RowMajor>(lhs.value.rows(), lhs.value.cols()) * g);
    }
    if (rhs.requires_grad) {
      rhs.accumulate(lhs.value.reshaped<Eigen::RowMajor>(rhs.value.rows(), rhs.value.cols()) * g);
    }
  });
}

Tensor softmax_rows(const Tensor& t) {
  if (t.cols() == 0) throw DimensionError("softmax_rows: empty rows");
  const Matrix& x = t.value();
  Matrix out = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  check_finite(out, "softmax_rows");
  return make_result(std::move(out), {t}, [](Node& self) {
    const Matrix& y = self.value;
    const Vector<double> inner = self.grad.cwiseProduct(y).rowwise().sum();
    self.inputs[0]->accumulate(y.cwiseProduct(self.grad.colwise() - inner));
  });
}

Tensor log_softmax_rows(const Tensor& t) {
  if (t.cols() == 0) throw DimensionError("log_softmax_rows: empty rows");
  const Matrix& x = t.value();
  const Vector<double> mx = x.rowwise().maxCoeff();
  const Matrix shifted = x.colwise() - mx;
  const Vector<double> lse = shifted.array().exp().rowwise().sum().log().matrix();
  Matrix out = shifted.colwise() - lse;
  check_finite(out, "log_softmax_rows");
  return make_result(std::move(out), {t}, [](Node& self) {
    const Matrix probs = self.value.array().exp().matrix();
    const Vector<double> total = self.grad.rowwise().sum();
    self.inputs[0]->accumulate(self.grad - probs.cwiseProduct(total.replicate(1, probs.cols())));
  });
}

Tensor relu(const Tensor& t) {
  Matrix out = t.value().cwiseMax(0.0);
  return make_result(std::move(out), {t}, [](Node& self) {
    Node& in = *self.inputs[0];
    in.accumulate((in.value.array() > 0.0).select(self.grad, 0.0).matrix());
  });
}

Tensor gelu(const Tensor& t) {
  const Matrix& x = t.value();
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix out = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
  check_finite(out, "gelu");
  return make_result(std::move(out), {t}, [](Node& self) {
    Node& in = *self.inputs[0];
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix slope = in.value.unaryExpr([inv_sqrt_2pi](double v) {
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    });
    in.accumulate(self.grad.cwiseProduct(slope));
  });
}

Tensor tanh(const Tensor& t) {
  Matrix out = t.value().array().tanh().matrix();
  return make_result(std::move(out), {t}, [](Node& self) {
    const Matrix slope = (1.0 - self.value.array().square()).matrix();
    self.inputs[0]->accumulate(self.grad.cwiseProduct(slope));
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  const Index c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.value()) + " / bias " +
                         shape_string(bias.value()) + " do not match input " + shape_string(x.value()));
  }
  const Vector<double> mu = x.value().rowwise().mean();
  const Matrix centered = x.value().colwise() - mu;
  const Vector<double> var = centered.array().square().rowwise().mean().matrix();
  const Vector<double> inv_std = (var.array() + epsilon).rsqrt().matrix();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  check_finite(out, "layer_norm");
  return make_result(std::move(out), {x, gain, bias}, [xhat, inv_std](Node& self) {
    Node& in = *self.inputs[0];
    Node& g = *self.inputs[1];
    Node& b = *self.inputs[2];
    if (g.requires_grad) g.accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
    if (b.requires_grad) b.accumulate(self.grad.colwise().sum());
    if (in.requires_grad) {
      const double n = static_cast<double>(xhat.cols());
      const Matrix dxhat = (self.grad.array().rowwise() * g.value.row(0).array()).matrix();
      const Vector<double> sum_d = dxhat.rowwise().sum();
      const Vector<double> sum_dx = dxhat.cwiseProduct(xhat).rowwise().sum();
      Matrix dx = (n * dxhat).colwise() - sum_d;
      dx -= (xhat.array().colwise() * sum_dx.array()).matrix();
      dx.array().colwise() *= inv_std.array() / n;
      in.accumulate(dx);
    }
  });
}

Tensor normalize_rows(const Tensor& t, double epsilon) {
  const Vector<double> norms = (t.value().rowwise().squaredNorm().array() + epsilon).sqrt().matrix();
  Matrix out = t.value().array().colwise() / norms.array();
  check_finite(out, "normalize_rows");
  return make_result(std::move(out), {t}, [norms](Node& self) {
    const Matrix& y = self.value;
    const Vector<double> proj = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = self.grad - (y.array().colwise() * proj.array()).matrix();
    g.array().colwise() /= norms.array();
    self.inputs[0]->accumulate(g);
  });
}

}  // namespace dtv::ag
