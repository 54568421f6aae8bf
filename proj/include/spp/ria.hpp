#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "spp/model.hpp"
#include "spp/tensor.hpp"

namespace spp {

// Per-weight threshold
//   lambda_ij = lambda0 (|W_ij| / sum_k |W_kj| + |W_ij| / sum_k |W_ik|) |X_i|_2
// for W [rows x cols] whose rows index input channels. A zero row or column
// sum only occurs with a zero numerator; that 0/0 term is taken as 0 and
// counted in `zero_terms` when given.
Tensor ria_lambda(const Tensor& weight, std::span<const double> input_norms, double lambda0,
                  std::size_t* zero_terms = nullptr);

// Column means of a per-weight lambda matrix.
std::vector<double> column_mean(const Tensor& lambda);

// L2 norm of every input feature over all calibration tokens, at the input of
// each attention block and each FFN block.
struct CalibrationNorms {
  std::vector<std::vector<double>> attention;  // [layer][m]
  std::vector<std::vector<double>> ffn;        // [layer][m]
};

CalibrationNorms calibration_norms(const TransformerWeights& model, const Tensor& inputs);

// Per-entry lambda on the model's mask layout. Each pair is scored through the
// matrix that reads the residual stream: query and key (averaged) for QK,
// the value matrix for VProj, the FFN input matrix for the MLP.
std::vector<double> ria_entry_lambda(const TransformerWeights& model, const CalibrationNorms& norms, double lambda0,
                                     std::size_t* zero_terms = nullptr);

}  // namespace spp
