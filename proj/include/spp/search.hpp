#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spp/data.hpp"
#include "spp/model.hpp"
#include "spp/prox.hpp"

namespace spp {

enum class ProxVariant {
  kL1Box,       // Gamma = prox of lambda|.|_1 + box, applied to V directly
  kL1BoxRidge,  // Gamma = clip(kappa (V - lambda), 0, 1)
  kGroupLasso,  // group soft-threshold on the box
};

const char* prox_variant_name(ProxVariant v);
ProxVariant parse_prox_variant(const std::string& s);

struct HyperParams {
  double kappa = 1.0;   // damping factor
  double alpha = 0.1;   // step size
  double lambda = 1.0;  // sparsity weight
  double nu = 1.0;      // coupling; the penalty is |M - Gamma|^2 / (2 nu)
  std::size_t search_steps = 100;
  std::size_t members = 5;
  ProxVariant prox = ProxVariant::kL1Box;
  GroupPartition groups;               // used by kGroupLasso
  std::vector<double> entry_lambda;    // optional per-entry lambda (overrides `lambda`)
  bool clip_mask = true;

  void validate(std::size_t mask_size) const;
  // Threshold for coordinate i.
  double lambda_at(std::size_t i) const { return entry_lambda.empty() ? lambda : entry_lambda[i]; }
};

struct SearchState {
  std::vector<double> mask;     // M
  std::vector<double> subgrad;  // V
  std::vector<double> gamma;    // Gamma
  std::size_t step = 0;

  // M = 1, V = 0, Gamma = 0.
  static SearchState initial(std::size_t n);
  friend bool operator==(const SearchState&, const SearchState&) = default;
};

// Task loss of the frozen model as a function of the flat mask vector.
class MaskObjective {
 public:
  virtual ~MaskObjective() = default;
  virtual std::size_t size() const = 0;
  // Returns L(W0 * M); fills `grad` with dL/dM when non-null.
  virtual double evaluate(std::span<const double> mask, std::vector<double>* grad) const = 0;
};

// Mean cross-entropy of the masked transformer on a fixed batch.
class TransformerObjective final : public MaskObjective {
 public:
  TransformerObjective(const TransformerWeights& model, const Dataset& batch);
  std::size_t size() const override { return layout_.total(); }
  double evaluate(std::span<const double> mask, std::vector<double>* grad) const override;
  const MaskLayout& layout() const { return layout_; }

 private:
  const TransformerWeights& model_;
  const Dataset& batch_;
  MaskLayout layout_;
};

// 1/2 |A (w0 * M) - b|^2 with A row-major [rows x n].
class QuadraticObjective final : public MaskObjective {
 public:
  QuadraticObjective(std::vector<double> a, std::size_t rows, std::vector<double> w0, std::vector<double> b);
  std::size_t size() const override { return w0_.size(); }
  double evaluate(std::span<const double> mask, std::vector<double>* grad) const override;
  // Largest eigenvalue of diag(w0) A^T A diag(w0), by power iteration.
  double lipschitz() const;
  double max_abs_weight() const;

 private:
  std::vector<double> a_;
  std::size_t rows_;
  std::vector<double> w0_;
  std::vector<double> b_;
};

class ConstantObjective final : public MaskObjective {
 public:
  ConstantObjective(std::size_t n, double value) : n_(n), value_(value) {}
  std::size_t size() const override { return n_; }
  double evaluate(std::span<const double>, std::vector<double>* grad) const override {
    if (grad) grad->assign(n_, 0.0);
    return value_;
  }

 private:
  std::size_t n_;
  double value_;
};

struct AugmentedLoss {
  double task = 0.0;
  double coupling = 0.0;  // |M - Gamma|^2 / (2 nu)
  std::vector<double> grad_mask;
  std::vector<double> grad_gamma;

  double total() const { return task + coupling; }
};

AugmentedLoss augmented_loss(const MaskObjective& objective, std::span<const double> mask,
                             std::span<const double> gamma, double nu);

// Gamma from V under the configured proximal variant.
std::vector<double> apply_prox(std::span<const double> subgrad, const HyperParams& hp);

// One iteration of the mask dynamic. Throws NumericError, leaving `state`
// untouched, if the loss or its gradients are not finite. `loss_out` receives
// the augmented loss evaluated at the incoming state.
SearchState search_step(const SearchState& state, const HyperParams& hp, const MaskObjective& objective,
                        AugmentedLoss* loss_out = nullptr);

// Process-wide count of search_step invocations.
std::uint64_t search_steps_taken();

// Step-size ceiling 2 / (kappa (Lip C + 1/nu)) for the descent guarantee.
double max_step_size(double lip, double c, double nu, double kappa);

// Largest |grad(a) - grad(b)| / |a - b| over random pairs near `center`.
// A lower bound on the true constant; used as an estimate.
double estimate_lipschitz(const MaskObjective& objective, std::span<const double> center, std::size_t samples,
                          double radius, std::uint64_t seed);

}  // namespace spp
