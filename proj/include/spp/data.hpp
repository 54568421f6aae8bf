#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spp/tensor.hpp"

namespace spp {

struct Dataset {
  Tensor inputs{Shape{0, 1, 1}};  // N x t x m
  std::vector<int> labels;
  std::size_t classes = 0;
  std::string split = "all";

  std::size_t size() const { return labels.size(); }
  std::size_t tokens() const { return inputs.dim(1); }
  std::size_t width() const { return inputs.dim(2); }

  // Rows `indices`, in that order.
  Dataset subset(const std::vector<std::size_t>& indices) const;
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SyntheticOptions {
  // Scale of the class-dependent token means relative to unit noise.
  double separation = 1.0;
  double noise = 1.0;
};

// Gaussian token sequences; every (class, position) pair has its own mean.
// Identical seeds give bit-identical datasets.
Dataset gen_synthetic_classification(std::uint64_t seed, std::size_t samples, std::size_t tokens, std::size_t width,
                                     std::size_t classes, const SyntheticOptions& options = {});

// Deterministic disjoint split; `val_fraction` of the samples go to "val".
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double val_fraction, std::uint64_t seed);

// CSV schema: "tokens=T,dim=M,classes=C". Columns are x<t>_<j> for every
// token and feature (token-major), followed by "label".
struct CsvSchema {
  std::size_t tokens = 0;
  std::size_t dim = 0;
  std::size_t classes = 0;

  static CsvSchema parse(const std::string& spec);
  std::vector<std::string> header() const;
};

Dataset load_csv_dataset(const std::string& path, const CsvSchema& schema);
void export_csv_dataset(const Dataset& ds, const std::string& path);

double accuracy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace spp
