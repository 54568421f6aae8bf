#include "spp/prox.hpp"

#include <algorithm>
#include <cmath>

#include "spp/errors.hpp"
#include "spp/model.hpp"

namespace spp {

std::vector<double> prox_l1_box(std::span<const double> v, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = prox_l1_box(v[i], lambda);
  return out;
}

std::vector<double> prox_l1_box(std::span<const double> v, std::span<const double> lambda) {
  if (lambda.size() != v.size()) throw ShapeError("per-coordinate lambda length differs from input");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(lambda[i] >= 0.0)) throw ValidationError("lambda must be >= 0");
    out[i] = prox_l1_box(v[i], lambda[i]);
  }
  return out;
}

std::vector<double> prox_l1_box_ridge(std::span<const double> v, std::span<const double> lambda, double kappa) {
  if (!(kappa > 0.0)) throw ValidationError("kappa must be > 0");
  if (lambda.size() != v.size()) throw ShapeError("per-coordinate lambda length differs from input");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp(kappa * (v[i] - lambda[i]), 0.0, 1.0);
  return out;
}

GroupPartition GroupPartition::from_layout(const MaskLayout& layout, std::size_t mlp_group_size) {
  if (mlp_group_size == 0) throw ConfigError("MLP group size must be positive");
  GroupPartition p;
  for (const auto& s : layout.segments()) {
    const std::size_t step = s.kind == PairKind::kMlp ? mlp_group_size : s.length;
    for (std::size_t begin = 0; begin < s.length; begin += step) {
      std::vector<std::size_t> g;
      for (std::size_t i = begin; i < std::min(s.length, begin + step); ++i) g.push_back(s.offset + i);
      p.groups.push_back(std::move(g));
    }
  }
  return p;
}

GroupPartition GroupPartition::singletons(std::size_t n) {
  GroupPartition p;
  for (std::size_t i = 0; i < n; ++i) p.groups.push_back({i});
  return p;
}

void GroupPartition::validate(std::size_t n) const {
  std::vector<bool> seen(n, false);
  std::size_t covered = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw ConfigError("group " + std::to_string(g) + " is empty");
    for (auto i : groups[g]) {
      if (i >= n) throw ConfigError("group " + std::to_string(g) + " references index " + std::to_string(i) + " >= " + std::to_string(n));
      if (seen[i]) throw ConfigError("index " + std::to_string(i) + " appears in more than one group");
      seen[i] = true;
      ++covered;
    }
  }
  if (covered != n) throw ConfigError("groups cover " + std::to_string(covered) + " of " + std::to_string(n) + " indices");
}

std::vector<double> prox_group_lasso_block(std::span<const double> v, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
  if (v.empty()) throw ConfigError("empty group");
  // Negative coordinates are always pinned at the lower bound.
  std::vector<double> pos(v.size());
  double norm2 = 0.0;
  double vmax = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    pos[i] = std::max(v[i], 0.0);
    norm2 += pos[i] * pos[i];
    vmax = std::max(vmax, pos[i]);
  }
  const double norm = std::sqrt(norm2);
  std::vector<double> out(v.size(), 0.0);
  if (norm <= lambda) return out;

  double shrink = 1.0 - lambda / norm;
  if (shrink * vmax > 1.0) {
    // Some coordinates saturate at 1. The interior ones still share a common
    // factor s = r / (r + lambda), r = |min(s * pos, 1)|; solve for s by
    // bisection on (1 - s) r(s) / s - lambda, which is strictly decreasing.
    auto radius = [&](double s) {
      double r2 = 0.0;
      for (double p : pos) {
        const double c = std::min(s * p, 1.0);
        r2 += c * c;
      }
      return std::sqrt(r2);
    };
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      const double h = (1.0 - mid) * radius(mid) / mid - lambda;
      (h > 0.0 ? lo : hi) = mid;
    }
    shrink = 0.5 * (lo + hi);
  }
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::min(shrink * pos[i], 1.0);
  return out;
}

std::vector<double> prox_group_lasso(std::span<const double> v, const GroupPartition& groups, double lambda) {
  groups.validate(v.size());
  std::vector<double> out(v.size());
  std::vector<double> block;
  for (const auto& g : groups.groups) {
    block.clear();
    for (auto i : g) block.push_back(v[i]);
    const auto res = prox_group_lasso_block(block, lambda);
    for (std::size_t j = 0; j < g.size(); ++j) out[g[j]] = res[j];
  }
  return out;
}

}  // namespace spp
