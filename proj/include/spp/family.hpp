#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "spp/model.hpp"
#include "spp/search.hpp"
#include "spp/train.hpp"

namespace spp {

// Gamma statistics for one (layer, pair kind) group, summed over heads.
struct GroupStat {
  double l1 = 0.0;
  std::size_t support = 0;

  friend bool operator==(const GroupStat&, const GroupStat&) = default;
};

struct Snapshot {
  std::size_t step = 0;
  std::vector<double> gamma;
  std::vector<GroupStat> groups;  // index = layer * 3 + pair kind
  std::size_t support = 0;

  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

class SolutionPath {
 public:
  SolutionPath() = default;
  SolutionPath(MaskLayout layout, std::size_t stride);

  const MaskLayout& layout() const { return layout_; }
  std::size_t stride() const { return stride_; }
  const std::vector<Snapshot>& snapshots() const { return snapshots_; }
  bool due(std::size_t step) const { return step % stride_ == 0; }

  // Appends a deep copy of the state's Gamma. Steps must strictly increase.
  void record(const SearchState& state);
  // Latest snapshot whose step is <= `step`.
  const Snapshot& at_or_below(std::size_t step) const;
  // Group labels matching Snapshot::groups, e.g. "L0.qk".
  std::vector<std::string> group_names() const;

  // Restores a path from persisted snapshots, re-validating ordering.
  static SolutionPath from_snapshots(MaskLayout layout, std::size_t stride, std::vector<Snapshot> snapshots);
  friend bool operator==(const SolutionPath&, const SolutionPath&) = default;

 private:
  MaskLayout layout_;
  std::size_t stride_ = 1;
  std::vector<Snapshot> snapshots_;
};

void record_snapshot(SolutionPath& path, const SearchState& state);
Snapshot make_snapshot(const MaskLayout& layout, std::size_t step, std::span<const double> gamma);

struct FamilyMember {
  std::size_t requested_step = 0;  // the reverse index from the prune schedule
  std::size_t source_step = 0;     // step of the snapshot actually used
  MaskSet mask;                    // Gamma at source_step, on the dense layout
  CompactModel model;
  CostReport cost;
  bool finetuned = false;
  std::map<std::string, double> metrics;

  std::vector<bool> support() const;
  friend bool operator==(const FamilyMember& a, const FamilyMember& b);
};

// Prune-schedule index int(T_s - (k+1) T_s / T_p) for k = 0 .. T_p-1.
std::vector<std::size_t> reverse_indices(std::size_t search_steps, std::size_t members);

struct FamilyExtraction {
  std::vector<std::size_t> requested;  // every scheduled index
  std::vector<FamilyMember> members;   // skipping all-zero snapshots
  std::vector<std::string> warnings;
};

FamilyExtraction extract_family(const SolutionPath& path, const TransformerWeights& dense, std::size_t search_steps,
                                std::size_t members, std::size_t tokens);

// Fraction of zero entries.
double sparsity(std::span<const double> mask);
// Parameter-weighted fraction of masked-out entries.
double sparsity(const MaskSet& mask);
// 1 - retained maskable params / dense maskable params.
double sparsity(const FamilyMember& member);

TrainResult finetune(FamilyMember& member, const Dataset& data, const TrainOptions& options);

}  // namespace spp
