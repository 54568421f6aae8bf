#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "spp/data.hpp"
#include "spp/model.hpp"
#include "spp/search.hpp"
#include "spp/train.hpp"

namespace spp {

// Flat key=value run configuration; '#' starts a comment. Keys follow the
// hyperparameter table names (epochs, lr, kappa, lambda, ...).
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "run";

  ModelDims model;

  // data
  std::size_t samples = 512;
  std::size_t tokens = 4;
  double val_fraction = 0.25;
  double separation = 1.0;
  double noise = 1.0;
  std::string data_csv;  // optional; replaces the synthetic generator
  std::string csv_schema;

  // pretraining of the dense model
  std::size_t epochs = 30;
  double lr = 0.05;
  std::size_t batch_size = 32;

  // search
  double kappa = 1.0;
  double alpha = 0.1;
  double lambda = 1.0;
  double nu = 1.0;
  std::size_t search_steps = 500;
  std::size_t snapshot_stride = 10;
  std::size_t search_batch = 64;
  bool full_batch = false;
  ProxVariant prox = ProxVariant::kL1Box;
  std::size_t group_size = 4;
  double lip = 0.0;  // 0 = estimate from gradient differences
  bool ria = false;
  double ria_lambda0 = 1.0;

  // family
  std::size_t members = 5;
  std::size_t finetune_epochs = 5;
  double finetune_lr = 0.02;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  // Throws ConfigError on the first invalid field.
  void validate() const;
  // Canonical text form; parse(to_text()) reproduces the config.
  std::string to_text() const;
  // Search hyperparameters for a model with the given mask layout.
  HyperParams hyper_params(const MaskLayout& layout) const;
  TrainOptions pretrain_options() const;
  TrainOptions finetune_options() const;
};

}  // namespace spp
