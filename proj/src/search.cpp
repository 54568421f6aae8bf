#include "spp/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>

#include "spp/errors.hpp"

namespace spp {

namespace {

std::atomic<std::uint64_t> g_search_steps{0};

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

const char* prox_variant_name(ProxVariant v) {
  switch (v) {
    case ProxVariant::kL1Box:
      return "l1box";
    case ProxVariant::kL1BoxRidge:
      return "l1box-ridge";
    case ProxVariant::kGroupLasso:
      return "group";
  }
  return "?";
}

ProxVariant parse_prox_variant(const std::string& s) {
  if (s == "l1box") return ProxVariant::kL1Box;
  if (s == "l1box-ridge") return ProxVariant::kL1BoxRidge;
  if (s == "group") return ProxVariant::kGroupLasso;
  throw ConfigError("unknown prox variant '" + s + "' (expected l1box, l1box-ridge or group)");
}

void HyperParams::validate(std::size_t mask_size) const {
  if (!(kappa > 0.0)) throw ConfigError("kappa must be > 0");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(nu > 0.0)) throw ConfigError("nu must be > 0");
  if (members > search_steps) throw ConfigError("members (T_p) must not exceed search_steps (T_s)");
  if (!entry_lambda.empty()) {
    if (entry_lambda.size() != mask_size) throw ConfigError("per-entry lambda length differs from mask size");
    for (double l : entry_lambda) {
      if (!(l >= 0.0)) throw ConfigError("per-entry lambda must be >= 0");
    }
    if (prox == ProxVariant::kGroupLasso) throw ConfigError("per-entry lambda is not supported with the group prox");
  }
  if (prox == ProxVariant::kGroupLasso) groups.validate(mask_size);
}

SearchState SearchState::initial(std::size_t n) {
  return SearchState{std::vector<double>(n, 1.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0};
}

TransformerObjective::TransformerObjective(const TransformerWeights& model, const Dataset& batch)
    : model_(model), batch_(batch), layout_(model) {
  if (batch.size() == 0) throw ValidationError("objective batch is empty");
  if (batch.width() != model.model_dim) throw ShapeError("batch width does not match the model");
}

double TransformerObjective::evaluate(std::span<const double> mask, std::vector<double>* grad) const {
  if (mask.size() != layout_.total()) throw ShapeError("mask vector length does not match the model layout");
  Tape tape;
  Var mv = tape.leaf(Tensor::vector({mask.begin(), mask.end()}), grad != nullptr);
  const auto g = ModelGraph::bind(tape, model_, false, mv);
  const auto n = batch_.size(), t = batch_.tokens();
  Var x = tape.constant(batch_.inputs.reshaped({n * t, model_.model_dim}));
  Var loss = ad::cross_entropy(logits_graph(g, x, t), batch_.labels);
  if (grad) {
    const auto gm = grad_of_scalar(loss, mv);
    grad->assign(gm.data().begin(), gm.data().end());
  }
  return loss.value().item();
}

QuadraticObjective::QuadraticObjective(std::vector<double> a, std::size_t rows, std::vector<double> w0,
                                       std::vector<double> b)
    : a_(std::move(a)), rows_(rows), w0_(std::move(w0)), b_(std::move(b)) {
  if (a_.size() != rows_ * w0_.size() || b_.size() != rows_) throw ShapeError("quadratic objective dimensions disagree");
}

double QuadraticObjective::evaluate(std::span<const double> mask, std::vector<double>* grad) const {
  const auto n = w0_.size();
  if (mask.size() != n) throw ShapeError("mask length does not match the quadratic objective");
  std::vector<double> r(rows_);
  double loss = 0.0;
  for (std::size_t i = 0; i < rows_; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a_[i * n + j] * w0_[j] * mask[j];
    r[i] = s - b_[i];
    loss += 0.5 * r[i] * r[i];
  }
  if (grad) {
    grad->assign(n, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t j = 0; j < n; ++j) (*grad)[j] += a_[i * n + j] * r[i];
    }
    for (std::size_t j = 0; j < n; ++j) (*grad)[j] *= w0_[j];
  }
  return loss;
}

double QuadraticObjective::lipschitz() const {
  const auto n = w0_.size();
  std::vector<double> x(n, 1.0), y(n);
  double lam = 0.0;
  for (int it = 0; it < 2000; ++it) {
    // y = D A^T A D x
    std::vector<double> ax(rows_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t j = 0; j < n; ++j) ax[i] += a_[i * n + j] * w0_[j] * x[j];
    }
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t j = 0; j < n; ++j) y[j] += w0_[j] * a_[i * n + j] * ax[i];
    }
    double norm = 0.0;
    for (double v : y) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    const double next = norm / std::sqrt(std::inner_product(x.begin(), x.end(), x.begin(), 0.0));
    for (std::size_t j = 0; j < n; ++j) x[j] = y[j] / norm;
    if (std::abs(next - lam) <= 1e-15 * next) return next;
    lam = next;
  }
  return lam;
}

double QuadraticObjective::max_abs_weight() const {
  double c = 0.0;
  for (double w : w0_) c = std::max(c, std::abs(w));
  return c;
}

AugmentedLoss augmented_loss(const MaskObjective& objective, std::span<const double> mask,
                             std::span<const double> gamma, double nu) {
  if (!(nu > 0.0)) throw ValidationError("nu must be > 0");
  if (mask.size() != gamma.size() || mask.size() != objective.size()) {
    throw ShapeError("mask, gamma and objective sizes disagree");
  }
  AugmentedLoss out;
  out.task = objective.evaluate(mask, &out.grad_mask);
  out.grad_gamma.resize(mask.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double diff = mask[i] - gamma[i];
    sq += diff * diff;
    out.grad_mask[i] += diff / nu;
    out.grad_gamma[i] = -diff / nu;
  }
  out.coupling = sq / (2.0 * nu);
  return out;
}

std::vector<double> apply_prox(std::span<const double> subgrad, const HyperParams& hp) {
  switch (hp.prox) {
    case ProxVariant::kL1Box:
      return hp.entry_lambda.empty() ? prox_l1_box(subgrad, hp.lambda) : prox_l1_box(subgrad, hp.entry_lambda);
    case ProxVariant::kL1BoxRidge: {
      if (hp.entry_lambda.empty()) {
        const std::vector<double> lam(subgrad.size(), hp.lambda);
        return prox_l1_box_ridge(subgrad, lam, hp.kappa);
      }
      return prox_l1_box_ridge(subgrad, hp.entry_lambda, hp.kappa);
    }
    case ProxVariant::kGroupLasso:
      return prox_group_lasso(subgrad, hp.groups, hp.lambda);
  }
  throw ConfigError("unhandled prox variant");
}

SearchState search_step(const SearchState& state, const HyperParams& hp, const MaskObjective& objective,
                        AugmentedLoss* loss_out) {
  const auto n = state.mask.size();
  if (state.subgrad.size() != n || state.gamma.size() != n || objective.size() != n) {
    throw ShapeError("search state does not match the objective's mask layout");
  }
  ++g_search_steps;
  AugmentedLoss loss = augmented_loss(objective, state.mask, state.gamma, hp.nu);
  if (!std::isfinite(loss.total()) || !all_finite(loss.grad_mask) || !all_finite(loss.grad_gamma)) {
    throw NumericError("non-finite loss or gradient at search step " + std::to_string(state.step));
  }
  SearchState next;
  next.step = state.step + 1;
  next.mask.resize(n);
  next.subgrad.resize(n);
  const double mstep = hp.kappa * hp.alpha;
  for (std::size_t i = 0; i < n; ++i) {
    double m = state.mask[i] - mstep * loss.grad_mask[i];
    if (hp.clip_mask) m = std::clamp(m, 0.0, 1.0);
    next.mask[i] = m;
    next.subgrad[i] = state.subgrad[i] - hp.alpha * loss.grad_gamma[i];
  }
  next.gamma = apply_prox(next.subgrad, hp);
  if (loss_out) *loss_out = std::move(loss);
  return next;
}

std::uint64_t search_steps_taken() { return g_search_steps.load(); }

double max_step_size(double lip, double c, double nu, double kappa) {
  if (!(lip > 0.0) || !(c > 0.0) || !(nu > 0.0) || !(kappa > 0.0)) {
    throw ValidationError("max_step_size inputs must all be positive");
  }
  return 2.0 / (kappa * (lip * c + 1.0 / nu));
}

double estimate_lipschitz(const MaskObjective& objective, std::span<const double> center, std::size_t samples,
                          double radius, std::uint64_t seed) {
  const auto n = objective.size();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-radius, radius);
  std::vector<double> a(n), b(n), ga, gb;
  double best = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double dist2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = center[i] + u(rng);
      b[i] = center[i] + u(rng);
      dist2 += (a[i] - b[i]) * (a[i] - b[i]);
    }
    if (dist2 == 0.0) continue;
    objective.evaluate(a, &ga);
    objective.evaluate(b, &gb);
    double g2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) g2 += (ga[i] - gb[i]) * (ga[i] - gb[i]);
    best = std::max(best, std::sqrt(g2 / dist2));
  }
  return best;
}

}  // namespace spp
