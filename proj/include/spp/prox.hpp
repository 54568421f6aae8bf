#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace spp {

class MaskLayout;

// Elementwise prox of lambda*|x| + indicator[0,1]: min(max(v - lambda, 0), 1).
inline double prox_l1_box(double v, double lambda) {
  const double s = v - lambda;
  return s <= 0.0 ? 0.0 : (s >= 1.0 ? 1.0 : s);
}

std::vector<double> prox_l1_box(std::span<const double> v, double lambda);
// Per-coordinate thresholds, e.g. activation-weighted lambdas.
std::vector<double> prox_l1_box(std::span<const double> v, std::span<const double> lambda);

// Mirror map of lambda*|x| + indicator[0,1] + |x|^2/(2 kappa), solved for the
// primal point: clip(kappa * (v - lambda), 0, 1). Equals prox_l1_box at kappa=1.
std::vector<double> prox_l1_box_ridge(std::span<const double> v, std::span<const double> lambda, double kappa);

// Partition of the flat mask index set into disjoint groups.
struct GroupPartition {
  std::vector<std::vector<std::size_t>> groups;

  // Every layout segment becomes a group, except the MLP mask, which is cut
  // into runs of `mlp_group_size` entries.
  static GroupPartition from_layout(const MaskLayout& layout, std::size_t mlp_group_size);
  static GroupPartition singletons(std::size_t n);
  // Throws ConfigError unless the groups exactly cover [0, n) with no empty group.
  void validate(std::size_t n) const;
};

// Group soft-threshold restricted to the unit box: for each group the result
// is argmin 1/2|G - V|^2 + lambda |G|_2 over G in [0,1]^g. When no coordinate
// saturates this is max(0, 1 - lambda/|V|) V.
std::vector<double> prox_group_lasso(std::span<const double> v, const GroupPartition& groups, double lambda);
std::vector<double> prox_group_lasso_block(std::span<const double> v, double lambda);

}  // namespace spp
