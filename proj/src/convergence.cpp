#include "spp/convergence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "spp/errors.hpp"

namespace spp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void same_length(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) throw ShapeError(std::string(what) + ": length mismatch");
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// sup over x of (g x - phi(x)) for one coordinate.
double conj_coord(double g, double lam, const Penalty& p) {
  const double r = p.ridge_kappa;
  if (p.box) {
    const double t = g - lam;
    if (t <= 0.0) return 0.0;
    if (r <= 0.0) return t;
    return r * t >= 1.0 ? t - 1.0 / (2.0 * r) : r * t * t / 2.0;
  }
  const double over = std::abs(g) - lam;
  if (r <= 0.0) return over <= 0.0 ? 0.0 : kInf;
  return over <= 0.0 ? 0.0 : r * over * over / 2.0;
}

bool subgrad_coord(double x, double g, double lam, const Penalty& p, double tol) {
  const double ridge = p.ridge_kappa > 0.0 ? x / p.ridge_kappa : 0.0;
  if (p.box) {
    if (x < 0.0 || x > 1.0) return false;
    // The box normal cone opens downward at 0 and upward at 1.
    if (x == 0.0) return g <= lam + tol;
    if (x == 1.0) return g >= lam + ridge - tol;
    return std::abs(g - lam - ridge) <= tol;
  }
  if (x > 0.0) return std::abs(g - lam - ridge) <= tol;
  if (x < 0.0) return std::abs(g + lam - ridge) <= tol;
  return std::abs(g) <= lam + tol;
}

}  // namespace

Penalty Penalty::for_search(const HyperParams& hp) {
  Penalty p;
  p.lambda = hp.lambda;
  p.entry_lambda = hp.entry_lambda;
  p.box = true;
  return p;
}

double omega(std::span<const double> x, const Penalty& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (p.box && (x[i] < 0.0 || x[i] > 1.0)) return kInf;
    s += p.lambda_at(i) * std::abs(x[i]);
    if (p.ridge_kappa > 0.0) s += x[i] * x[i] / (2.0 * p.ridge_kappa);
  }
  return s;
}

double omega_conjugate(std::span<const double> g, const Penalty& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) s += conj_coord(g[i], p.lambda_at(i), p);
  return s;
}

bool is_subgradient(std::span<const double> x, std::span<const double> g, const Penalty& p, double tol) {
  same_length(x, g, "is_subgradient");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!subgrad_coord(x[i], g[i], p.lambda_at(i), p, tol)) return false;
  }
  return true;
}

double fenchel_gap(std::span<const double> x, std::span<const double> g, const Penalty& p) {
  same_length(x, g, "fenchel_gap");
  return omega(x, p) + omega_conjugate(g, p) - dot(x, g);
}

double bregman_divergence(std::span<const double> x, std::span<const double> y, std::span<const double> gy,
                          const Penalty& p, double tol) {
  same_length(x, y, "bregman_divergence");
  same_length(y, gy, "bregman_divergence");
  if (!is_subgradient(y, gy, p, tol)) throw ValidationError("certificate is not a subgradient of the penalty");
  double lin = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) lin += gy[i] * (x[i] - y[i]);
  return omega(x, p) - omega(y, p) - lin;
}

double lyapunov(std::span<const double> mask, std::span<const double> gamma, std::span<const double> g, double alpha,
                const MaskObjective& objective, double nu, const Penalty& p) {
  const auto loss = augmented_loss(objective, mask, gamma, nu);
  return alpha * loss.total() + fenchel_gap(gamma, g, p);
}

double descent_constant(double lip, double c, double nu, double kappa, double alpha) {
  return 1.0 / kappa - alpha * (lip * c + 1.0 / nu) / 2.0;
}

namespace {

double certificate_scale(const HyperParams& hp) {
  // Gamma = prox(V) puts V - Gamma in the penalty's subdifferential; the
  // ridge variant scales Gamma by kappa, so there the certificate is V - Gamma/kappa.
  return hp.prox == ProxVariant::kL1BoxRidge ? hp.kappa : 1.0;
}

}  // namespace

LyapunovState lyapunov_state(const SearchState& state, const AugmentedLoss& loss, std::span<const double> prev_cert,
                             const HyperParams& hp) {
  if (hp.prox == ProxVariant::kGroupLasso) {
    throw ConfigError("the descent trace needs a separable penalty; the group variant is not supported");
  }
  const Penalty pen = Penalty::for_search(hp);
  const double s = certificate_scale(hp);
  const auto n = state.gamma.size();
  LyapunovState ls;
  ls.step = state.step;
  ls.mask = state.mask;
  ls.gamma = state.gamma;
  ls.cert.resize(n);
  for (std::size_t i = 0; i < n; ++i) ls.cert[i] = state.subgrad[i] - state.gamma[i] / s;
  ls.cert_valid = is_subgradient(ls.gamma, ls.cert, pen, 1e-9);
  ls.task = loss.task;
  ls.coupling = loss.coupling;
  ls.gap = fenchel_gap(ls.gamma, prev_cert, pen);
  ls.value = hp.alpha * loss.total() + ls.gap;
  return ls;
}

std::vector<LyapunovState> lyapunov_trace(const MaskObjective& objective, const HyperParams& hp, std::size_t steps) {
  if (hp.prox == ProxVariant::kGroupLasso) {
    throw ConfigError("the descent trace needs a separable penalty; the group variant is not supported");
  }
  hp.validate(objective.size());
  const auto n = objective.size();
  std::vector<LyapunovState> trace;
  trace.reserve(steps + 1);
  SearchState state = SearchState::initial(n);
  std::vector<double> prev_cert(n, 0.0);  // g_{-1}
  std::vector<double> rec(n, 0.0);        // V0 = Gamma0 = 0
  for (std::size_t k = 0;; ++k) {
    AugmentedLoss loss;
    SearchState next;
    if (k < steps) {
      next = search_step(state, hp, objective, &loss);
    } else {
      loss = augmented_loss(objective, state.mask, state.gamma, hp.nu);
    }
    LyapunovState ls = lyapunov_state(state, loss, prev_cert, hp);
    ls.cert_recursive = rec;
    prev_cert = ls.cert;
    trace.push_back(std::move(ls));
    if (k == steps) break;
    for (std::size_t i = 0; i < n; ++i) {
      rec[i] -= (next.gamma[i] - state.gamma[i] + hp.kappa * hp.alpha * loss.grad_gamma[i]) / hp.kappa;
    }
    state = std::move(next);
  }
  return trace;
}

DescentReport check_descent(const std::vector<LyapunovState>& trace, double rho, double tol, DescentNorm norm) {
  DescentReport r;
  // A negative constant would turn the inequality into a licence to ascend,
  // so the check never demands less than monotonicity.
  r.rho = std::max(rho, 0.0);
  r.tol = tol;
  r.min_margin = kInf;
  for (std::size_t k = 0; k + 1 < trace.size(); ++k) {
    const auto& a = trace[k];
    const auto& b = trace[k + 1];
    double dq = sq_dist(a.mask, b.mask) + sq_dist(a.gamma, b.gamma);
    // Q_k carries g_{k-1}; the first state's is zero.
    if (norm == DescentNorm::kFull) {
      dq += k == 0 ? std::inner_product(a.cert.begin(), a.cert.end(), a.cert.begin(), 0.0)
                   : sq_dist(trace[k - 1].cert, a.cert);
    }
    DescentRow row;
    row.step = a.step;
    row.value = a.value;
    row.delta = b.value - a.value;
    row.rho_term = r.rho * dq;
    row.margin = a.value - b.value - row.rho_term;
    if (row.margin < -tol) ++r.violations;
    r.min_margin = std::min(r.min_margin, row.margin);
    r.rows.push_back(row);
  }
  if (r.rows.empty()) r.min_margin = 0.0;
  return r;
}

void DescentReport::write_csv(std::ostream& out) const {
  char buf[160];
  out << "k,F,dF,rho_dQ2,margin\n";
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", row.step, row.value, row.delta, row.rho_term,
                  row.margin);
    out << buf;
  }
  out << "# " << summary() << "\n";
}

std::string DescentReport::summary() const {
  char buf[200];
  std::snprintf(buf, sizeof buf, "steps=%zu violations=%zu min_margin=%.6g rho=%.6g tol=%.3g", rows.size(), violations,
                min_margin, rho, tol);
  return buf;
}

std::vector<double> running_step_average(const std::vector<LyapunovState>& trace) {
  std::vector<double> out;
  double sum = 0.0;
  for (std::size_t k = 0; k + 1 < trace.size(); ++k) {
    sum += sq_dist(trace[k].mask, trace[k + 1].mask) + sq_dist(trace[k].gamma, trace[k + 1].gamma);
    out.push_back(sum / static_cast<double>(k + 1));
  }
  return out;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  same_length(x, y, "loglog_slope");
  if (x.size() < 2) throw ValidationError("slope fit needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ValidationError("log-log fit needs positive values");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double den = n * sxx - sx * sx;
  if (den == 0.0) throw ValidationError("degenerate abscissae in slope fit");
  return (n * sxy - sx * sy) / den;
}

}  // namespace spp
