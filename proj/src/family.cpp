#include "spp/family.hpp"

#include <algorithm>
#include <cmath>

#include "spp/errors.hpp"

namespace spp {

namespace {

std::size_t group_index(const MaskSegment& s) { return s.layer * 3 + static_cast<std::size_t>(s.kind); }

}  // namespace

Snapshot make_snapshot(const MaskLayout& layout, std::size_t step, std::span<const double> gamma) {
  if (gamma.size() != layout.total()) throw ShapeError("gamma length does not match the mask layout");
  Snapshot snap;
  snap.step = step;
  snap.gamma.assign(gamma.begin(), gamma.end());
  snap.groups.assign(layout.layers() * 3, GroupStat{});
  for (const auto& s : layout.segments()) {
    auto& g = snap.groups[group_index(s)];
    for (std::size_t i = s.offset; i < s.offset + s.length; ++i) {
      g.l1 += std::abs(gamma[i]);
      if (gamma[i] > 0.0) ++g.support;
    }
  }
  for (double v : gamma) {
    if (v > 0.0) ++snap.support;
  }
  return snap;
}

SolutionPath::SolutionPath(MaskLayout layout, std::size_t stride) : layout_(std::move(layout)), stride_(stride) {
  if (stride_ == 0) throw ConfigError("snapshot stride must be positive");
}

void SolutionPath::record(const SearchState& state) {
  if (!snapshots_.empty() && state.step <= snapshots_.back().step) {
    throw OrderingError("snapshot at step " + std::to_string(state.step) + " does not follow step " +
                        std::to_string(snapshots_.back().step));
  }
  for (double g : state.gamma) {
    if (!(g >= 0.0 && g <= 1.0)) throw ValidationError("gamma entry outside [0, 1] at step " + std::to_string(state.step));
  }
  snapshots_.push_back(make_snapshot(layout_, state.step, state.gamma));
}

const Snapshot& SolutionPath::at_or_below(std::size_t step) const {
  const Snapshot* best = nullptr;
  for (const auto& s : snapshots_) {
    if (s.step > step) break;
    best = &s;
  }
  if (!best) throw LookupError("no snapshot at or below step " + std::to_string(step));
  return *best;
}

std::vector<std::string> SolutionPath::group_names() const {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < layout_.layers(); ++l) {
    for (auto k : {PairKind::kQueryKey, PairKind::kValueProj, PairKind::kMlp}) {
      names.push_back("L" + std::to_string(l) + "." + pair_kind_name(k));
    }
  }
  return names;
}

SolutionPath SolutionPath::from_snapshots(MaskLayout layout, std::size_t stride, std::vector<Snapshot> snapshots) {
  SolutionPath p(std::move(layout), stride);
  for (auto& s : snapshots) p.record(SearchState{{}, {}, std::move(s.gamma), s.step});
  return p;
}

void record_snapshot(SolutionPath& path, const SearchState& state) { path.record(state); }

std::vector<bool> FamilyMember::support() const {
  std::vector<bool> s(mask.values.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = mask.values[i] > 0.0;
  return s;
}

bool operator==(const FamilyMember& a, const FamilyMember& b) {
  return a.requested_step == b.requested_step && a.source_step == b.source_step && a.mask.layout == b.mask.layout &&
         a.mask.values == b.mask.values && a.model.weights == b.model.weights && a.model.retained == b.model.retained &&
         a.cost == b.cost && a.finetuned == b.finetuned && a.metrics == b.metrics;
}

std::vector<std::size_t> reverse_indices(std::size_t search_steps, std::size_t members) {
  if (members == 0) throw ValidationError("at least one family member is required");
  if (members > search_steps) throw ValidationError("members (T_p) must not exceed search_steps (T_s)");
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < members; ++k) out.push_back(search_steps * (members - k - 1) / members);
  return out;
}

FamilyExtraction extract_family(const SolutionPath& path, const TransformerWeights& dense, std::size_t search_steps,
                                std::size_t members, std::size_t tokens) {
  FamilyExtraction out;
  out.requested = reverse_indices(search_steps, members);
  if (!(path.layout() == MaskLayout(dense))) throw ShapeError("solution path layout does not match the model");
  for (auto khat : out.requested) {
    const Snapshot& snap = path.at_or_below(khat);
    if (snap.support == 0) {
      out.warnings.push_back("snapshot at step " + std::to_string(snap.step) + " (scheduled " + std::to_string(khat) +
                             ") has empty support; skipped");
      continue;
    }
    FamilyMember m;
    m.requested_step = khat;
    m.source_step = snap.step;
    m.mask = MaskSet{path.layout(), snap.gamma};
    m.model = compact(dense, m.mask, 0.0, EmptyPairPolicy::kKeepLargest);
    for (const auto& w : m.model.warnings) out.warnings.push_back("step " + std::to_string(snap.step) + ": " + w);
    m.cost = count_cost(m.model.weights, tokens);
    out.members.push_back(std::move(m));
  }
  return out;
}

double sparsity(std::span<const double> mask) {
  if (mask.empty()) return 0.0;
  const auto zeros = std::count_if(mask.begin(), mask.end(), [](double v) { return v == 0.0; });
  return static_cast<double>(zeros) / static_cast<double>(mask.size());
}

double sparsity(const MaskSet& mask) {
  double total = 0.0, removed = 0.0;
  for (const auto& s : mask.layout.segments()) {
    const double per = static_cast<double>(mask.layout.params_per_entry(s));
    for (double v : mask.segment(s)) {
      total += per;
      if (v == 0.0) removed += per;
    }
  }
  return total > 0.0 ? removed / total : 0.0;
}

double sparsity(const FamilyMember& member) {
  double dense = 0.0;
  for (const auto& s : member.mask.layout.segments()) {
    dense += static_cast<double>(member.mask.layout.params_per_entry(s) * s.length);
  }
  return dense > 0.0 ? 1.0 - static_cast<double>(member.cost.maskable_params) / dense : 0.0;
}

TrainResult finetune(FamilyMember& member, const Dataset& data, const TrainOptions& options) {
  auto result = train_weights(member.model.weights, data, options);
  if (options.epochs > 0) member.finetuned = true;
  return result;
}

}  // namespace spp
