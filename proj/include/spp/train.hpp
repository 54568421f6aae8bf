#pragma once

#include <cstddef>
#include <cstdint>

#include "spp/data.hpp"
#include "spp/model.hpp"

namespace spp {

struct TrainOptions {
  std::size_t epochs = 1;
  double lr = 0.05;  // peak step size; decays along a half cosine to 0
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double divergence_limit = 1e6;
};

struct TrainResult {
  double initial_loss = 0.0;  // full training-set loss before the first step
  double final_loss = 0.0;    // full training-set loss after the last good step
  std::size_t steps = 0;
  bool diverged = false;
};

// Mini-batch gradient descent on every weight of `model`. On divergence the
// weights are restored to the last good step and `diverged` is set.
TrainResult train_weights(TransformerWeights& model, const Dataset& train, const TrainOptions& options);

double dataset_loss(const TransformerWeights& model, const Dataset& data, const MaskSet* masks = nullptr);
double dataset_accuracy(const TransformerWeights& model, const Dataset& data, const MaskSet* masks = nullptr);

// Deterministic mini-batch order for one epoch.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t samples, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch);

}  // namespace spp
