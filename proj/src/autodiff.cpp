#include "spp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "spp/errors.hpp"

namespace spp {

const Tensor& Var::value() const {
  if (!tape_) throw LookupError("variable is not attached to a tape");
  return tape_->node(id_).value;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = OpKind::kLeaf;
  n.value = std::move(value);
  n.needs_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(OpKind op, Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.needs_grad = std::any_of(parents.begin(), parents.end(), [&](std::size_t p) { return nodes_[p].needs_grad; });
  n.parents = std::move(parents);
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

std::vector<Tensor> Tape::gradients(Var loss, std::span<const Var> wrt) const {
  if (loss.tape() != this) throw LookupError("loss is not on this tape");
  if (node(loss.id()).value.size() != 1) {
    throw ShapeError("gradient requested of non-scalar " + shape_str(node(loss.id()).value.shape()));
  }
  for (const auto& w : wrt) {
    if (w.tape() != this || w.id() >= nodes_.size() || nodes_[w.id()].op != OpKind::kLeaf) {
      throw LookupError("requested gradient for a variable that is not a leaf of this tape");
    }
  }

  std::vector<Tensor> grads(loss.id() + 1);
  std::vector<bool> has(loss.id() + 1, false);
  grads[loss.id()] = Tensor(node(loss.id()).value.shape(), 1.0);
  has[loss.id()] = true;

  std::vector<Tensor*> parent_grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!has[id] || !n.needs_grad || n.op == OpKind::kLeaf) continue;
    parent_grads.assign(n.parents.size(), nullptr);
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      const std::size_t p = n.parents[i];
      if (!nodes_[p].needs_grad) continue;
      if (!has[p]) {
        grads[p] = Tensor(nodes_[p].value.shape(), 0.0);
        has[p] = true;
      }
      parent_grads[i] = &grads[p];
    }
    n.backward(grads[id], parent_grads);
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    if (w.id() <= loss.id() && has[w.id()]) {
      out.push_back(grads[w.id()]);
    } else {
      out.emplace_back(nodes_[w.id()].value.shape(), 0.0);
    }
  }
  return out;
}

std::vector<Tensor> grad_of_scalar(Var loss, std::span<const Var> wrt) {
  if (!loss.tape()) throw LookupError("loss is not attached to a tape");
  return loss.tape()->gradients(loss, wrt);
}

double gelu_value(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

namespace {

double gelu_derivative(double x) {
  constexpr double c = 0.7978845608028654;
  const double u = c * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

void same_tape(Var a, Var b) {
  if (a.tape() != b.tape() || !a.tape()) throw LookupError("operands live on different tapes");
}

void require_rank(Var a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] += s;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + i * n;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

namespace ad {

Var matmul(Var a, Var b) {
  same_tape(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out(Shape{m, n});
  gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
  Tape* tape = a.tape();
  const auto ia = a.id(), ib = b.id();
  return tape->push(OpKind::kMatmul, std::move(out), {ia, ib},
                    [tape, ia, ib, m, k, n](const Tensor& g, std::vector<Tensor*>& pg) {
                      const Tensor& av = tape->node(ia).value;
                      const Tensor& bv = tape->node(ib).value;
                      if (pg[0]) gemm_nt(g.data().data(), bv.data().data(), pg[0]->data().data(), m, n, k);
                      if (pg[1]) gemm_tn(av.data().data(), g.data().data(), pg[1]->data().data(), m, k, n);
                    });
}

Var bmm(Var a, Var b, bool transpose_b) {
  same_tape(a, b);
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const auto batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  const auto n = transpose_b ? b.shape()[1] : b.shape()[2];
  const auto bk = transpose_b ? b.shape()[2] : b.shape()[1];
  if (b.shape()[0] != batch || bk != k) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out(Shape{batch, m, n});
  const double* ad = a.value().data().data();
  const double* bd = b.value().data().data();
  double* od = out.data().data();
  for (std::size_t s = 0; s < batch; ++s) {
    if (transpose_b) {
      gemm_nt(ad + s * m * k, bd + s * n * k, od + s * m * n, m, k, n);
    } else {
      gemm_nn(ad + s * m * k, bd + s * k * n, od + s * m * n, m, k, n);
    }
  }
  Tape* tape = a.tape();
  const auto ia = a.id(), ib = b.id();
  return tape->push(OpKind::kBatchedMatmul, std::move(out), {ia, ib},
                    [tape, ia, ib, batch, m, k, n, transpose_b](const Tensor& g, std::vector<Tensor*>& pg) {
                      const double* av = tape->node(ia).value.data().data();
                      const double* bv = tape->node(ib).value.data().data();
                      const double* gd = g.data().data();
                      for (std::size_t s = 0; s < batch; ++s) {
                        const double* gs = gd + s * m * n;
                        if (pg[0]) {
                          double* ga = pg[0]->data().data() + s * m * k;
                          if (transpose_b) {
                            gemm_nn(gs, bv + s * n * k, ga, m, n, k);
                          } else {
                            gemm_nt(gs, bv + s * k * n, ga, m, n, k);
                          }
                        }
                        if (pg[1]) {
                          if (transpose_b) {
                            // dB[n x k] = g^T[n x m] a[m x k]
                            gemm_tn(gs, av + s * m * k, pg[1]->data().data() + s * n * k, m, n, k);
                          } else {
                            gemm_tn(av + s * m * k, gs, pg[1]->data().data() + s * k * n, m, k, n);
                          }
                        }
                      }
                    });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape()->push(OpKind::kAdd, std::move(out), {a.id(), b.id()},
                        [](const Tensor& g, std::vector<Tensor*>& pg) {
                          for (auto* p : pg) {
                            if (!p) continue;
                            for (std::size_t i = 0; i < g.size(); ++i) (*p)[i] += g[i];
                          }
                        });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape()->push(OpKind::kSub, std::move(out), {a.id(), b.id()},
                        [](const Tensor& g, std::vector<Tensor*>& pg) {
                          if (pg[0]) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                          }
                          if (pg[1]) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] -= g[i];
                          }
                        });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tape* tape = a.tape();
  const auto ia = a.id(), ib = b.id();
  return tape->push(OpKind::kMul, std::move(out), {ia, ib}, [tape, ia, ib](const Tensor& g, std::vector<Tensor*>& pg) {
    const Tensor& av = tape->node(ia).value;
    const Tensor& bv = tape->node(ib).value;
    if (pg[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * bv[i];
    }
    if (pg[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= c;
  return a.tape()->push(OpKind::kScale, std::move(out), {a.id()}, [c](const Tensor& g, std::vector<Tensor*>& pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += c * g[i];
  });
}

Var add_row_bias(Var a, Var bias) {
  same_tape(a, bias);
  require_rank(a, 2, "add_row_bias");
  const auto r = a.shape()[0], c = a.shape()[1];
  if (bias.value().size() != c) {
    throw ShapeError("add_row_bias: bias " + shape_str(bias.shape()) + " vs matrix " + shape_str(a.shape()));
  }
  Tensor out = a.value();
  const auto bv = bias.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  }
  return a.tape()->push(OpKind::kAddRowBias, std::move(out), {a.id(), bias.id()},
                        [r, c](const Tensor& g, std::vector<Tensor*>& pg) {
                          if (pg[0]) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                          }
                          if (pg[1]) {
                            for (std::size_t i = 0; i < r; ++i) {
                              for (std::size_t j = 0; j < c; ++j) (*pg[1])[j] += g[i * c + j];
                            }
                          }
                        });
}

Var scale_columns(Var a, Var m) {
  same_tape(a, m);
  require_rank(a, 2, "scale_columns");
  const auto r = a.shape()[0], c = a.shape()[1];
  if (m.value().size() != c) {
    throw ShapeError("scale_columns: mask " + shape_str(m.shape()) + " vs matrix " + shape_str(a.shape()));
  }
  Tensor out = a.value();
  const auto mv = m.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= mv[j];
  }
  Tape* tape = a.tape();
  const auto ia = a.id(), im = m.id();
  return tape->push(OpKind::kScaleColumns, std::move(out), {ia, im},
                    [tape, ia, im, r, c](const Tensor& g, std::vector<Tensor*>& pg) {
                      const Tensor& av = tape->node(ia).value;
                      const Tensor& mv = tape->node(im).value;
                      for (std::size_t i = 0; i < r; ++i) {
                        for (std::size_t j = 0; j < c; ++j) {
                          const double gv = g[i * c + j];
                          if (pg[0]) (*pg[0])[i * c + j] += gv * mv[j];
                          if (pg[1]) (*pg[1])[j] += gv * av[i * c + j];
                        }
                      }
                    });
}

Var scale_rows(Var a, Var m) {
  same_tape(a, m);
  require_rank(a, 2, "scale_rows");
  const auto r = a.shape()[0], c = a.shape()[1];
  if (m.value().size() != r) {
    throw ShapeError("scale_rows: mask " + shape_str(m.shape()) + " vs matrix " + shape_str(a.shape()));
  }
  Tensor out = a.value();
  const auto mv = m.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= mv[i];
  }
  Tape* tape = a.tape();
  const auto ia = a.id(), im = m.id();
  return tape->push(OpKind::kScaleRows, std::move(out), {ia, im},
                    [tape, ia, im, r, c](const Tensor& g, std::vector<Tensor*>& pg) {
                      const Tensor& av = tape->node(ia).value;
                      const Tensor& mv = tape->node(im).value;
                      for (std::size_t i = 0; i < r; ++i) {
                        for (std::size_t j = 0; j < c; ++j) {
                          const double gv = g[i * c + j];
                          if (pg[0]) (*pg[0])[i * c + j] += gv * mv[i];
                          if (pg[1]) (*pg[1])[i] += gv * av[i * c + j];
                        }
                      }
                    });
}

Var slice(Var a, std::size_t offset, std::size_t length) {
  if (offset + length > a.value().size()) {
    throw ShapeError("slice [" + std::to_string(offset) + ", +" + std::to_string(length) + ") out of range for " +
                     shape_str(a.shape()));
  }
  const auto src = a.value().data();
  std::vector<double> v(src.begin() + static_cast<std::ptrdiff_t>(offset),
                        src.begin() + static_cast<std::ptrdiff_t>(offset + length));
  return a.tape()->push(OpKind::kSlice, Tensor::vector(std::move(v)), {a.id()},
                        [offset](const Tensor& g, std::vector<Tensor*>& pg) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[offset + i] += g[i];
                        });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape()->push(OpKind::kReshape, std::move(out), {a.id()}, [](const Tensor& g, std::vector<Tensor*>& pg) {
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
  });
}

Var softmax_rows(Var a) {
  if (a.shape().empty()) throw ShapeError("softmax_rows on a scalar");
  const auto n = a.shape().back();
  const auto rows = n ? a.value().size() / n : 0;
  Tensor out = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data().data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= s;
  }
  Tape* tape = a.tape();
  const std::size_t self = tape->size();
  return tape->push(OpKind::kSoftmaxRows, std::move(out), {a.id()},
                    [tape, self, rows, n](const Tensor& g, std::vector<Tensor*>& pg) {
                      const Tensor& y = tape->node(self).value;
                      for (std::size_t r = 0; r < rows; ++r) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
                        for (std::size_t j = 0; j < n; ++j) (*pg[0])[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
                      }
                    });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  Tape* tape = a.tape();
  const auto ia = a.id();
  return tape->push(OpKind::kRelu, std::move(out), {ia}, [tape, ia](const Tensor& g, std::vector<Tensor*>& pg) {
    const Tensor& x = tape->node(ia).value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) (*pg[0])[i] += g[i];
    }
  });
}

Var gelu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = gelu_value(v);
  Tape* tape = a.tape();
  const auto ia = a.id();
  return tape->push(OpKind::kGelu, std::move(out), {ia}, [tape, ia](const Tensor& g, std::vector<Tensor*>& pg) {
    const Tensor& x = tape->node(ia).value;
    for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * gelu_derivative(x[i]);
  });
}

Var mean_tokens(Var a, std::size_t tokens) {
  require_rank(a, 2, "mean_tokens");
  const auto rows = a.shape()[0], c = a.shape()[1];
  if (tokens == 0 || rows % tokens != 0) {
    throw ShapeError("mean_tokens: " + std::to_string(rows) + " rows not divisible into sequences of " +
                     std::to_string(tokens));
  }
  const auto batch = rows / tokens;
  Tensor out(Shape{batch, c});
  const auto av = a.value().data();
  const double inv = 1.0 / static_cast<double>(tokens);
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t t = 0; t < tokens; ++t) {
      for (std::size_t j = 0; j < c; ++j) out[s * c + j] += av[(s * tokens + t) * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[s * c + j] *= inv;
  }
  return a.tape()->push(OpKind::kMeanTokens, std::move(out), {a.id()},
                        [batch, tokens, c, inv](const Tensor& g, std::vector<Tensor*>& pg) {
                          for (std::size_t s = 0; s < batch; ++s) {
                            for (std::size_t t = 0; t < tokens; ++t) {
                              for (std::size_t j = 0; j < c; ++j) (*pg[0])[(s * tokens + t) * c + j] += g[s * c + j] * inv;
                            }
                          }
                        });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape()->push(OpKind::kSum, Tensor::scalar(s), {a.id()}, [](const Tensor& g, std::vector<Tensor*>& pg) {
    const double gv = g[0];
    for (auto& v : pg[0]->data()) v += gv;
  });
}

Var sum_squares(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  Tape* tape = a.tape();
  const auto ia = a.id();
  return tape->push(OpKind::kSumSquares, Tensor::scalar(s), {ia}, [tape, ia](const Tensor& g, std::vector<Tensor*>& pg) {
    const Tensor& x = tape->node(ia).value;
    for (std::size_t i = 0; i < x.size(); ++i) (*pg[0])[i] += 2.0 * g[0] * x[i];
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const auto batch = logits.shape()[0], classes = logits.shape()[1];
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(batch) + " rows");
  }
  if (batch == 0) throw ShapeError("cross_entropy over an empty batch");
  const auto lv = logits.value().data();
  Tensor probs(Shape{batch, classes});
  double loss = 0.0;
  for (std::size_t s = 0; s < batch; ++s) {
    const int y = labels[s];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ValidationError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = lv.data() + s * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < classes; ++j) probs[s * classes + j] = std::exp(row[j] - log_z);
    loss += log_z - row[y];
  }
  const double inv = 1.0 / static_cast<double>(batch);
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.tape()->push(OpKind::kCrossEntropy, Tensor::scalar(loss * inv), {logits.id()},
                             [probs = std::move(probs), ys = std::move(ys), classes, inv](
                                 const Tensor& g, std::vector<Tensor*>& pg) {
                               const double scale = g[0] * inv;
                               for (std::size_t s = 0; s < ys.size(); ++s) {
                                 for (std::size_t j = 0; j < classes; ++j) {
                                   const double target = static_cast<int>(j) == ys[s] ? 1.0 : 0.0;
                                   (*pg[0])[s * classes + j] += scale * (probs[s * classes + j] - target);
                                 }
                               }
                             });
}

}  // namespace ad

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ValidationError("finite difference step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace spp
