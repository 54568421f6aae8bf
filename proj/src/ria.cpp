#include "spp/ria.hpp"

#include <cmath>

#include "spp/errors.hpp"

namespace spp {

Tensor ria_lambda(const Tensor& weight, std::span<const double> input_norms, double lambda0, std::size_t* zero_terms) {
  if (weight.rank() != 2) throw ShapeError("ria_lambda expects a matrix, got " + shape_str(weight.shape()));
  const auto rows = weight.dim(0), cols = weight.dim(1);
  if (input_norms.size() != rows) throw ShapeError("one activation norm per input row is required");
  if (!(lambda0 > 0.0)) throw ValidationError("lambda0 must be positive");
  for (double n : input_norms) {
    if (!(n >= 0.0) || !std::isfinite(n)) throw ValidationError("activation norms must be finite and non-negative");
  }
  std::vector<double> row_sum(rows, 0.0), col_sum(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double a = std::abs(weight.at(i, j));
      row_sum[i] += a;
      col_sum[j] += a;
    }
  }
  std::size_t zeros = 0;
  auto ratio = [&](double num, double den) {
    if (den == 0.0) {
      ++zeros;
      return 0.0;
    }
    return num / den;
  };
  Tensor out(Shape{rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double a = std::abs(weight.at(i, j));
      out.at(i, j) = lambda0 * (ratio(a, col_sum[j]) + ratio(a, row_sum[i])) * input_norms[i];
    }
  }
  if (zero_terms) *zero_terms += zeros;
  return out;
}

std::vector<double> column_mean(const Tensor& lambda) {
  if (lambda.rank() != 2) throw ShapeError("column_mean expects a matrix");
  const auto rows = lambda.dim(0), cols = lambda.dim(1);
  std::vector<double> out(cols, 0.0);
  if (rows == 0) return out;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j] += lambda.at(i, j);
  }
  for (auto& v : out) v /= static_cast<double>(rows);
  return out;
}

CalibrationNorms calibration_norms(const TransformerWeights& model, const Tensor& inputs) {
  if (inputs.rank() != 3 || inputs.dim(2) != model.model_dim) {
    throw ShapeError("calibration inputs must be [B x t x m], got " + shape_str(inputs.shape()));
  }
  const auto m = model.model_dim, tokens = inputs.dim(1), rows = inputs.dim(0) * tokens;
  auto norms_of = [&](const Tensor& h) {
    std::vector<double> n(m, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < m; ++j) n[j] += h[r * m + j] * h[r * m + j];
    }
    for (auto& v : n) v = std::sqrt(v);
    return n;
  };
  CalibrationNorms out;
  Tape tape;
  auto g = ModelGraph::bind(tape, model, false);
  Var h = tape.constant(inputs.reshaped({rows, m}));
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    out.attention.push_back(norms_of(h.value()));
    h = ad::add(h, attention_block(g, l, h, tokens));
    out.ffn.push_back(norms_of(h.value()));
    h = ad::add(h, ffn_block(g, l, h));
  }
  return out;
}

std::vector<double> ria_entry_lambda(const TransformerWeights& model, const CalibrationNorms& norms, double lambda0,
                                     std::size_t* zero_terms) {
  if (norms.attention.size() != model.layers.size() || norms.ffn.size() != model.layers.size()) {
    throw ShapeError("calibration norms do not cover every layer");
  }
  MaskLayout layout(model);
  std::vector<double> out(layout.total(), 0.0);
  for (const auto& s : layout.segments()) {
    const auto& layer = model.layers[s.layer];
    std::vector<double> col;
    switch (s.kind) {
      case PairKind::kQueryKey: {
        const auto& head = layer.heads[s.head];
        auto q = column_mean(ria_lambda(head.query, norms.attention[s.layer], lambda0, zero_terms));
        auto k = column_mean(ria_lambda(head.key, norms.attention[s.layer], lambda0, zero_terms));
        col.resize(q.size());
        for (std::size_t j = 0; j < q.size(); ++j) col[j] = 0.5 * (q[j] + k[j]);
        break;
      }
      case PairKind::kValueProj:
        col = column_mean(ria_lambda(layer.heads[s.head].value, norms.attention[s.layer], lambda0, zero_terms));
        break;
      case PairKind::kMlp:
        col = column_mean(ria_lambda(layer.ffn_in, norms.ffn[s.layer], lambda0, zero_terms));
        break;
    }
    if (col.size() != s.length) throw ShapeError("pair width does not match its mask segment");
    for (std::size_t j = 0; j < s.length; ++j) out[s.offset + j] = col[j];
  }
  return out;
}

}  // namespace spp
