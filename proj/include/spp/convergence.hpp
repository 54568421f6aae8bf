#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "spp/search.hpp"

namespace spp {

// Separable penalty sum_i lambda_i |x_i| (+ box [0,1]) (+ |x|^2 / (2 ridge_kappa)).
struct Penalty {
  double lambda = 1.0;
  std::vector<double> entry_lambda;  // overrides `lambda` when non-empty
  bool box = true;
  double ridge_kappa = 0.0;  // 0 disables the ridge term

  double lambda_at(std::size_t i) const { return entry_lambda.empty() ? lambda : entry_lambda[i]; }
  // l1 + box with the search's thresholds. The ridge term is left out: the
  // ridge variant's 1/kappa scaling is carried by the certificate instead.
  static Penalty for_search(const HyperParams& hp);
};

// Omega(x); +inf outside the box when `box` is set.
double omega(std::span<const double> x, const Penalty& p);
// Convex conjugate Omega*(g) in closed form; may be +inf without the box.
double omega_conjugate(std::span<const double> g, const Penalty& p);
// Whether g lies in the subdifferential of Omega at x, coordinate-wise within tol.
bool is_subgradient(std::span<const double> x, std::span<const double> g, const Penalty& p, double tol = 1e-12);
// Omega(x) + Omega*(g) - <x, g>; non-negative, zero iff g is a subgradient at x.
double fenchel_gap(std::span<const double> x, std::span<const double> g, const Penalty& p);
// Omega(x) - Omega(y) - <gy, x - y>. Throws ValidationError unless gy is a
// subgradient at y.
double bregman_divergence(std::span<const double> x, std::span<const double> y, std::span<const double> gy,
                          const Penalty& p, double tol = 1e-9);

// alpha * Lbar(M, Gamma) + fenchel_gap(Gamma, g).
double lyapunov(std::span<const double> mask, std::span<const double> gamma, std::span<const double> g, double alpha,
                const MaskObjective& objective, double nu, const Penalty& p);

// 1/kappa - alpha (Lip C + 1/nu) / 2.
double descent_constant(double lip, double c, double nu, double kappa, double alpha);

struct LyapunovState {
  std::size_t step = 0;
  std::vector<double> mask, gamma;
  std::vector<double> cert;            // V - Gamma / s, recomputed each step
  std::vector<double> cert_recursive;  // g_{k+1} = g_k - (dGamma + kappa alpha grad_Gamma) / kappa
  double task = 0.0;
  double coupling = 0.0;
  double gap = 0.0;  // fenchel gap of (Gamma_k, cert_{k-1})
  double value = 0.0;  // F(Q_k)
  bool cert_valid = true;
};

// F(Q_k) and the certificate for one state, given the loss evaluated there and
// the previous certificate g_{k-1}. Leaves cert_recursive empty.
LyapunovState lyapunov_state(const SearchState& state, const AugmentedLoss& loss, std::span<const double> prev_cert,
                             const HyperParams& hp);

// Runs `steps` search iterations from the standard initial state and returns
// steps + 1 states. Only the l1-box variants have a closed-form conjugate;
// the group variant raises ConfigError.
std::vector<LyapunovState> lyapunov_trace(const MaskObjective& objective, const HyperParams& hp, std::size_t steps);

struct DescentRow {
  std::size_t step = 0;  // k; the row compares F(Q_k) and F(Q_{k+1})
  double value = 0.0;
  double delta = 0.0;  // F_{k+1} - F_k
  double rho_term = 0.0;
  double margin = 0.0;  // F_k - F_{k+1} - rho |dQ|^2
};

struct DescentReport {
  double rho = 0.0;  // constant used for the check (clamped at 0)
  double tol = 0.0;
  std::vector<DescentRow> rows;
  std::size_t violations = 0;
  double min_margin = 0.0;

  void write_csv(std::ostream& out) const;
  std::string summary() const;
};

enum class DescentNorm { kFull, kPrimal };  // |dQ| over (M, Gamma, g) or |dP| over (M, Gamma)

DescentReport check_descent(const std::vector<LyapunovState>& trace, double rho, double tol = 1e-9,
                            DescentNorm norm = DescentNorm::kFull);

// a_K = (1/K) sum_{k<K} |P_{k+1} - P_k|^2 for K = 1 .. trace.size()-1 (index K-1).
std::vector<double> running_step_average(const std::vector<LyapunovState>& trace);
// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace spp
