#include "spp/train.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "spp/errors.hpp"

namespace spp {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t samples, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < samples; b += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(samples, b + batch_size)));
  }
  return batches;
}

double dataset_loss(const TransformerWeights& model, const Dataset& data, const MaskSet* masks) {
  if (data.size() == 0) return 0.0;
  const Tensor logits = model_forward(data.inputs, model, masks);
  Tape tape;
  return ad::cross_entropy(tape.constant(logits), data.labels).value().item();
}

double dataset_accuracy(const TransformerWeights& model, const Dataset& data, const MaskSet* masks) {
  if (data.size() == 0) return 0.0;
  return accuracy(model_forward(data.inputs, model, masks), data.labels);
}

TrainResult train_weights(TransformerWeights& model, const Dataset& train, const TrainOptions& options) {
  model.validate();
  TrainResult result;
  result.initial_loss = dataset_loss(model, train);
  result.final_loss = result.initial_loss;
  if (options.epochs == 0 || train.size() == 0) return result;

  const std::size_t per_epoch = (train.size() + options.batch_size - 1) / options.batch_size;
  const std::size_t total = per_epoch * options.epochs;
  const auto t = train.tokens(), m = model.model_dim;
  // Weights before the most recent update; a divergent loss is only seen one
  // step after the update that caused it.
  TransformerWeights last_good = model;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(train.size(), options.batch_size, options.seed, epoch)) {
      const Dataset batch = train.subset(idx);
      const double lr = options.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(result.steps) /
                                                            static_cast<double>(total)));
      Tape tape;
      const auto g = ModelGraph::bind(tape, model, true);
      Var x = tape.constant(batch.inputs.reshaped({batch.size() * t, m}));
      Var loss = ad::cross_entropy(logits_graph(g, x, t), batch.labels);
      const double lv = loss.value().item();
      if (!std::isfinite(lv) || lv > options.divergence_limit) {
        model = std::move(last_good);
        result.diverged = true;
        result.final_loss = dataset_loss(model, train);
        return result;
      }
      const auto vars = g.weight_vars();
      const auto grads = grad_of_scalar(loss, vars);
      bool finite = true;
      for (const auto& gr : grads) finite = finite && gr.all_finite();
      if (!finite) {
        model = std::move(last_good);
        result.diverged = true;
        result.final_loss = dataset_loss(model, train);
        return result;
      }
      last_good = model;
      auto params = weight_tensors(model);
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto w = params[p]->data();
        const auto gd = grads[p].data();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gd[i];
      }
      ++result.steps;
    }
  }
  result.final_loss = dataset_loss(model, train);
  if (!std::isfinite(result.final_loss) || result.final_loss > options.divergence_limit) {
    model = std::move(last_good);
    result.diverged = true;
    result.final_loss = dataset_loss(model, train);
  }
  return result;
}

}  // namespace spp
