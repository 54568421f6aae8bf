#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "spp/tensor.hpp"

namespace spp {

class Tape;

enum class OpKind {
  kLeaf,
  kMatmul,
  kBatchedMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddRowBias,
  kScaleColumns,
  kScaleRows,
  kSlice,
  kReshape,
  kSoftmaxRows,
  kRelu,
  kGelu,
  kMeanTokens,
  kSum,
  kSumSquares,
  kCrossEntropy,
};

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Single-use computation record. Nodes are appended in evaluation order, so
// parents always precede children and the reverse sweep is a plain loop.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out, std::vector<Tensor*>& parent_grads)>;

  struct Node {
    OpKind op = OpKind::kLeaf;
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool needs_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var push(OpKind op, Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar node; returns one gradient per requested leaf,
  // in request order. Leaves unreachable from `loss` get zero gradients.
  std::vector<Tensor> gradients(Var loss, std::span<const Var> wrt) const;

 private:
  std::vector<Node> nodes_;
};

std::vector<Tensor> grad_of_scalar(Var loss, std::span<const Var> wrt);
inline Tensor grad_of_scalar(Var loss, Var wrt) { return grad_of_scalar(loss, std::span<const Var>(&wrt, 1)).front(); }

namespace ad {

Var matmul(Var a, Var b);
// [B,m,k] x [B,k,n] -> [B,m,n]; with transpose_b, b is [B,n,k].
Var bmm(Var a, Var b, bool transpose_b = false);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_row_bias(Var a, Var bias);
// a[r x c] with column j multiplied by m[j].
Var scale_columns(Var a, Var m);
// a[r x c] with row i multiplied by m[i].
Var scale_rows(Var a, Var m);
Var slice(Var a, std::size_t offset, std::size_t length);
Var reshape(Var a, Shape shape);
// Softmax over the last dimension, max-shifted.
Var softmax_rows(Var a);
Var relu(Var a);
Var gelu(Var a);
// [B*t x m] -> [B x m], averaging the t rows of each sample.
Var mean_tokens(Var a, std::size_t tokens);
Var sum(Var a);
Var sum_squares(Var a);
// Mean softmax cross-entropy of logits [B x C] against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels);

}  // namespace ad

// Forward-only counterparts used by the oracle and plain evaluation paths.
double gelu_value(double x);

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace spp
