// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
// if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "spp/autodiff.hpp"
#include "spp/checkpoint.hpp"
#include "spp/config.hpp"
#include "spp/convergence.hpp"
#include "spp/data.hpp"
#include "spp/family.hpp"
#include "spp/model.hpp"
#include "spp/pipeline.hpp"
#include "spp/prox.hpp"
#include "spp/ria.hpp"
#include "spp/search.hpp"
#include "toys.hpp"

using namespace spp;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Header-keyed CSV rows.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::vector<std::string> header;
  std::vector<std::map<std::string, std::string>> rows;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string c;
    while (std::getline(ss, c, ',')) out.push_back(c);
    return out;
  };
  if (std::getline(in, line)) header = split(line);
  while (std::getline(in, line)) {
    auto cells = split(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(row);
  }
  return rows;
}

std::map<std::string, std::string> read_kv(const fs::path& p) {
  std::ifstream in(p);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos && !kv.count(line.substr(0, eq))) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

// ---------------------------------------------------------------- 1, 2

Outcome prox_scalar() {
  const auto t0 = Clock::now();
  std::size_t grid_bad = 0;
  for (int i = 0; i <= 10000; ++i) {
    const double v = -2.0 + 6.0 * i / 10000.0;
    const double want = v > 2.0 ? 1.0 : (v > 1.0 ? v - 1.0 : 0.0);
    grid_bad += prox_l1_box(v, 1.0) != want;
  }
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> uv(-3.0, 5.0), ul(0.0, 3.0);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double v = uv(rng), lam = ul(rng);
    worst = std::max(worst, std::abs(prox_l1_box(v, lam) - oracle::l1_box_min(v, lam)));
  }
  const double secs = seconds_since(t0);
  return {grid_bad == 0 && worst <= 1e-9 && secs < 5.0,
          fmt("grid mismatches %zu/10001, max oracle diff %.2e (tol 1e-9), %.2fs (limit 5s)", grid_bad, worst, secs)};
}

Outcome prox_group() {
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> u(-1.0, 3.0), ul(0.0, 4.0);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> v(1 + rng() % 64);
    for (auto& x : v) x = u(rng);
    const double lam = ul(rng);
    const auto got = prox_group_lasso_block(v, lam);
    const auto want = oracle::group_box_min(v, lam);
    for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  return {worst <= 1e-8, fmt("1000 groups of size 1-64, max diff %.2e (tol 1e-8)", worst)};
}

// ---------------------------------------------------------------- 3

// Cross-entropy from the value-level forward, independent of the tape.
double reference_loss(const TransformerWeights& w, const MaskSet& mask, const Dataset& data) {
  const auto logits = model_forward(data.inputs, w, &mask);
  const std::size_t c = logits.dim(1);
  double total = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    double mx = -1e300;
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits.at(n, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(logits.at(n, j) - mx);
    total += mx + std::log(z) - logits.at(n, static_cast<std::size_t>(data.labels[n]));
  }
  return total / static_cast<double>(data.size());
}

Outcome autodiff_fd() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(103);
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    ModelDims d;
    d.layers = pick(1, 2);
    d.heads = pick(1, 3);
    d.model_dim = pick(2, 6);
    d.qk_dim = pick(1, 4);
    d.v_dim = pick(1, 4);
    d.ffn_dim = pick(1, 8);
    d.classes = pick(2, 4);
    const std::size_t tokens = pick(1, 4);
    auto w = init_transformer(d, 1000 + trial);
    auto data = gen_synthetic_classification(2000 + trial, 3, tokens, d.model_dim, d.classes);
    MaskLayout layout(w);
    MaskSet mask = MaskSet::ones(layout);
    std::uniform_real_distribution<double> u(0.3, 1.0);
    for (auto& v : mask.values) v = u(rng);

    // Analytic gradient over every weight and the mask.
    Tape tape;
    Var mvar = tape.leaf(Tensor::vector(mask.values));
    auto g = ModelGraph::bind(tape, w, true, mvar);
    Var x = tape.constant(data.inputs.reshaped({data.size() * tokens, d.model_dim}));
    Var loss = ad::cross_entropy(logits_graph(g, x, tokens), data.labels);
    auto wrt = g.weight_vars();
    wrt.push_back(mvar);
    const auto grads = tape.gradients(loss, wrt);
    std::vector<double> analytic;
    for (const auto& t : grads) analytic.insert(analytic.end(), t.data().begin(), t.data().end());

    // Central differences through the value-level forward.
    std::vector<double> numeric;
    const double h = 1e-6;
    auto wp = w;
    for (Tensor* t : weight_tensors(wp)) {
      for (std::size_t i = 0; i < t->size(); ++i) {
        const double keep = (*t)[i];
        (*t)[i] = keep + h;
        const double up = reference_loss(wp, mask, data);
        (*t)[i] = keep - h;
        const double down = reference_loss(wp, mask, data);
        (*t)[i] = keep;
        numeric.push_back((up - down) / (2 * h));
      }
    }
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
      auto mp = mask;
      mp.values[i] += h;
      const double up = reference_loss(w, mp, data);
      mp.values[i] -= 2 * h;
      const double down = reference_loss(w, mp, data);
      numeric.push_back((up - down) / (2 * h));
    }
    if (numeric.size() != analytic.size()) return {false, "gradient length mismatch"};
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      num += (numeric[i] - analytic[i]) * (numeric[i] - analytic[i]);
      den += numeric[i] * numeric[i];
    }
    worst = std::max(worst, std::sqrt(num) / std::max(std::sqrt(den), 1e-12));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 60.0,
          fmt("50 configs, max relative error %.2e (tol 1e-5), %.2fs (limit 60s)", worst, secs)};
}

// ---------------------------------------------------------------- 4

Outcome neutrality_and_compaction() {
  ModelDims d;
  auto data = gen_synthetic_classification(104, 8, 4, d.model_dim, d.classes);
  bool ones_exact = true;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto w = init_transformer(d, 500 + seed);
    MaskLayout layout(w);
    if (seed < 10) {
      const auto ones = MaskSet::ones(layout);
      ones_exact = ones_exact && model_forward(data.inputs, w, &ones) == model_forward(data.inputs, w);
    }
    std::mt19937_64 rng(seed);
    MaskSet mask = MaskSet::ones(layout);
    for (const auto& s : layout.segments()) {
      auto seg = mask.segment(s);
      for (auto& v : seg) v = static_cast<double>(rng() % 2);
      seg[rng() % seg.size()] = 1.0;  // keep every pair non-empty
    }
    const auto masked = model_forward(data.inputs, w, &mask);
    const auto small = compact(w, mask, 0.0, EmptyPairPolicy::kError);
    const auto packed = model_forward(data.inputs, small.weights);
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < masked.size(); ++i) {
      diff = std::max(diff, std::abs(masked[i] - packed[i]));
      scale = std::max(scale, std::abs(masked[i]));
    }
    worst = std::max(worst, diff / std::max(scale, 1e-300));
  }
  return {ones_exact && worst < 1e-10,
          fmt("all-ones exact: %s; compacted vs masked max relative diff %.2e over 100 seeds (tol 1e-10)",
              ones_exact ? "yes" : "no", worst)};
}

// ---------------------------------------------------------------- 5, 6

Outcome sufficient_descent() {
  const auto t0 = Clock::now();
  std::string detail;
  bool ok = true;
  const std::vector<std::pair<std::string, QuadraticObjective>> cases = {{"1-D", toys::one_d()},
                                                                         {"10-D", toys::random_quadratic(10, 0)}};
  for (const auto& [name, q] : cases) {
    auto descent = [&](double multiple) {
      auto hp = toys::descent_params(q, multiple, 1000);
      const double rho = descent_constant(q.lipschitz(), q.max_abs_weight(), hp.nu, hp.kappa, hp.alpha);
      return check_descent(lyapunov_trace(q, hp, 1000), rho, 1e-9, DescentNorm::kPrimal);
    };
    const auto safe = descent(0.9), fast = descent(3.0);
    ok = ok && safe.violations == 0 && fast.violations >= 1;
    detail += fmt("%s: %zu violations at 0.9x, %zu at 3x; ", name.c_str(), safe.violations, fast.violations);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 10.0;
  return {ok, detail + fmt("nu=5 lambda=0.3 kappa=1, (M, Gamma) step norm, 1000 steps, %.2fs (limit 10s)", secs)};
}

Outcome step_decay() {
  auto q = toys::random_quadratic(10, 0);
  auto hp = toys::descent_params(q, 0.9, 10000);
  const auto a = running_step_average(lyapunov_trace(q, hp, 10000));
  std::vector<double> x, y;
  for (std::size_t k = 100; k <= 10000; ++k) {
    x.push_back(static_cast<double>(k));
    y.push_back(a[k - 1]);
  }
  const double slope = loglog_slope(x, y);
  return {slope <= -0.8, fmt("log-log slope %.4f over K in [1e2, 1e4] (need <= -0.8)", slope)};
}

// ---------------------------------------------------------------- 7, 8, 9

struct ToyRun {
  bool ok = false;
  std::string error;
  fs::path dir;
  double search_seconds = 0.0;
  std::uint64_t counter_delta = 0;
  std::size_t search_steps = 0;
};

ToyRun run_toy(const RunConfig& base) {
  ToyRun r;
  r.dir = fs::temp_directory_path() / "spp_acceptance" / "toy";
  fs::remove_all(r.dir);
  RunConfig c = base;
  c.out_dir = r.dir.string();
  r.search_steps = c.search_steps;
  std::ostringstream log;
  if (cmd_pretrain(c, log) != kExitOk) {
    r.error = "pretrain failed: " + log.str();
    return r;
  }
  const auto t0 = Clock::now();
  if (cmd_search(c, log) != kExitOk) {
    r.error = "search failed: " + log.str();
    return r;
  }
  r.search_seconds = seconds_since(t0);
  const auto before = search_steps_taken();
  for (std::size_t tp : {3, 5, 10}) {
    if (cmd_family(c, tp, log) != kExitOk) {
      r.error = "family failed: " + log.str();
      return r;
    }
  }
  r.counter_delta = search_steps_taken() - before;
  r.ok = true;
  return r;
}

Outcome one_search_many_models(const ToyRun& run) {
  if (!run.ok) return {false, run.error};
  bool ok = run.search_seconds <= 300.0 && run.counter_delta == 0;
  std::string detail = fmt("search %.1fs (limit 300s), extra search steps %llu; ", run.search_seconds,
                           static_cast<unsigned long long>(run.counter_delta));
  for (std::size_t tp : {3, 5, 10}) {
    const fs::path dir = family_dir(run.dir.string(), tp);
    const auto rows = read_csv(dir / "manifest.csv");
    const auto summary = read_kv(dir / "summary.txt");
    const auto want = reverse_indices(run.search_steps, tp);
    std::string want_text;
    for (std::size_t i = 0; i < want.size(); ++i) want_text += (i ? "," : "") + std::to_string(want[i]);
    bool fam_ok = !rows.empty() && summary.count("k_hat") && summary.at("k_hat") == want_text;
    std::size_t next = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto khat = std::stoul(rows[i].at("k_hat"));
      // Members keep schedule order; only empty snapshots are skipped.
      while (next < want.size() && want[next] != khat) ++next;
      fam_ok = fam_ok && next < want.size();
      ++next;
      if (i > 0) fam_ok = fam_ok && std::stoul(rows[i].at("params")) < std::stoul(rows[i - 1].at("params"));
    }
    ok = ok && fam_ok;
    detail += fmt("T_p=%zu: %zu members, k_hat {%s}%s; ", tp, rows.size(), want_text.c_str(), fam_ok ? "" : " FAILED");
  }
  return {ok, detail + "params strictly decreasing"};
}

Outcome inverse_scale_space(const ToyRun& run) {
  if (!run.ok) return {false, run.error};
  const auto path = read_solution_path((run.dir / "path.bin").string());
  std::size_t adds = 0, drops = 0;
  const auto& snaps = path.snapshots();
  for (std::size_t k = 1; k < snaps.size(); ++k) {
    for (std::size_t i = 0; i < snaps[k].gamma.size(); ++i) {
      const bool was = snaps[k - 1].gamma[i] > 0.0, is = snaps[k].gamma[i] > 0.0;
      adds += !was && is;
      drops += was && !is;
    }
  }
  const double frac = adds + drops ? static_cast<double>(adds) / static_cast<double>(adds + drops) : 0.0;
  return {adds + drops > 0 && frac >= 0.9,
          fmt("%zu additions, %zu removals over %zu snapshots: %.1f%% additions (need >= 90%%)", adds, drops,
              snaps.size(), 100.0 * frac)};
}

Outcome accuracy_trend(const ToyRun& run) {
  if (!run.ok) return {false, run.error};
  const fs::path dir = family_dir(run.dir.string(), 10);
  auto rows = read_csv(dir / "manifest.csv");
  const auto summary = read_kv(dir / "summary.txt");
  const double dense_acc = std::stod(summary.at("dense_val_acc"));
  const double dense_params = std::stod(summary.at("dense_params"));
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return std::stod(a.at("sparsity")) < std::stod(b.at("sparsity")); });
  bool monotone = true;
  std::string accs;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    accs += (i ? "," : "") + fmt("%.3f", std::stod(rows[i].at("val_acc")));
    if (i > 0) monotone = monotone && std::stod(rows[i].at("val_acc")) <= std::stod(rows[i - 1].at("val_acc"));
  }
  std::size_t half = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    auto gap = [&](std::size_t j) { return std::abs(std::stod(rows[j].at("params")) / dense_params - 0.5); };
    if (gap(i) < gap(half)) half = i;
  }
  if (rows.empty()) return {false, "empty family"};
  const double half_share = std::stod(rows[half].at("params")) / dense_params;
  const double retained = std::stod(rows[half].at("val_acc")) / dense_acc;
  return {monotone && retained >= 0.9,
          fmt("val acc by sparsity [%s] %s; member at %.0f%% params keeps %.1f%% of dense %.3f (need >= 90%%)",
              accs.c_str(), monotone ? "non-increasing" : "NOT monotone", 100.0 * half_share, 100.0 * retained,
              dense_acc)};
}

// ---------------------------------------------------------------- 10

Outcome ria() {
  const auto l = ria_lambda(Tensor::matrix({{1, 2}, {3, 4}}), std::vector<double>{1, 1}, 1.0);
  const double ex = std::abs(l.at(0, 0) - 7.0 / 12.0);
  std::mt19937_64 rng(110);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.0, 2.0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    Tensor w(Shape{6, 5});
    for (auto& v : w.data()) v = n(rng);
    std::vector<double> norms(6);
    for (auto& v : norms) v = u(rng);
    const auto base = ria_lambda(w, norms, 0.7);
    for (double c : {0.01, 3.0, 250.0}) {
      Tensor cw = w;
      for (auto& v : cw.data()) v *= c;
      const auto scaled = ria_lambda(cw, norms, 0.7);
      for (std::size_t i = 0; i < base.size(); ++i) worst = std::max(worst, std::abs(scaled[i] - base[i]));
    }
  }
  return {ex <= 1e-12 && worst <= 1e-12,
          fmt("2x2 example off by %.1e, scale invariance max diff %.1e (tol 1e-12)", ex, worst)};
}

// ---------------------------------------------------------------- 11

Outcome determinism(const RunConfig& base) {
  const auto root = fs::temp_directory_path() / "spp_acceptance";
  const auto dir = root / "repeat";
  const auto first = root / "repeat_first";
  RunConfig c = base;
  c.out_dir = dir.string();
  c.search_steps = 300;
  auto run_once = [&] {
    fs::remove_all(dir);
    std::ostringstream log;
    return cmd_pretrain(c, log) == kExitOk && cmd_search(c, log) == kExitOk &&
           cmd_family(c, c.members, log) == kExitOk;
  };
  if (!run_once()) return {false, "first run failed"};
  fs::remove_all(first);
  fs::rename(dir, first);
  if (!run_once()) return {false, "second run failed"};
  const auto fam = fs::path("family_tp" + std::to_string(c.members));
  std::size_t same = 0, total = 0;
  std::string differ;
  for (const auto& rel : {fs::path("path.csv"), fs::path("manifest.txt"), fam / "manifest.csv"}) {
    ++total;
    const auto a = slurp(first / rel), b = slurp(dir / rel);
    if (!a.empty() && a == b) {
      ++same;
    } else {
      differ += " " + rel.string();
    }
  }
  return {same == total, fmt("%zu/%zu files byte-identical (path.csv, run manifest, family manifest)%s%s", same, total,
                             differ.empty() ? "" : "; differ:", differ.c_str())};
}

}  // namespace

int main() {
  const auto config = RunConfig::load(SPP_TOY_CONFIG);
  const ToyRun toy = run_toy(config);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"prox l1-box piecewise form and oracle", prox_scalar},
      {"group prox vs numeric minimizer", prox_group},
      {"autodiff vs finite differences", autodiff_fd},
      {"mask neutrality and compaction", neutrality_and_compaction},
      {"sufficient descent below the step bound", sufficient_descent},
      {"O(1/K) squared-step decay", step_decay},
      {"one search, many models", [&] { return one_search_many_models(toy); }},
      {"inverse scale space: support grows", [&] { return inverse_scale_space(toy); }},
      {"family accuracy trend", [&] { return accuracy_trend(toy); }},
      {"RIA example and scale invariance", ria},
      {"determinism", [&] { return determinism(config); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
