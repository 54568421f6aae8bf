#include "spp/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "spp/checkpoint.hpp"
#include "spp/convergence.hpp"
#include "spp/errors.hpp"
#include "spp/family.hpp"
#include "spp/ria.hpp"
#include "spp/train.hpp"

namespace fs = std::filesystem;

namespace spp {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LookupError("cannot write " + path);
  return out;
}

void prepare(const RunConfig& config) {
  config.validate();
  fs::create_directories(config.out_dir);
  // Verbatim copy of the effective configuration.
  open_out((fs::path(config.out_dir) / "config.txt").string()) << config.to_text();
}

double max_abs_weight(const TransformerWeights& model) {
  double c = 0.0;
  for (const Tensor* t : weight_tensors(model)) {
    for (double v : t->data()) c = std::max(c, std::abs(v));
  }
  return c;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<double> layer_l1(const MaskLayout& layout, const std::vector<double>& gamma) {
  std::vector<double> out(layout.layers(), 0.0);
  for (const auto& s : layout.segments()) {
    for (std::size_t i = s.offset; i < s.offset + s.length; ++i) out[s.layer] += gamma[i];
  }
  return out;
}

}  // namespace

std::string dense_checkpoint_path(const std::string& run_dir) { return (fs::path(run_dir) / "dense.ckpt").string(); }

std::string family_dir(const std::string& run_dir, std::size_t members) {
  return (fs::path(run_dir) / ("family_tp" + std::to_string(members))).string();
}

Splits load_splits(const RunConfig& config) {
  Dataset all;
  if (!config.data_csv.empty()) {
    const auto schema = CsvSchema::parse(config.csv_schema);
    if (schema.dim != config.model.model_dim || schema.tokens != config.tokens || schema.classes != config.model.classes) {
      throw ConfigError("csv_schema disagrees with model_dim/tokens/classes in the config");
    }
    all = load_csv_dataset(config.data_csv, schema);
  } else {
    SyntheticOptions opts;
    opts.separation = config.separation;
    opts.noise = config.noise;
    all = gen_synthetic_classification(config.seed, config.samples, config.tokens, config.model.model_dim,
                                       config.model.classes, opts);
  }
  auto [train, val] = split_dataset(all, config.val_fraction, config.seed ^ 0x5851f42d4c957f2dull);
  return {std::move(train), std::move(val)};
}

int run_guarded(const std::function<void()>& body, std::ostream& log) {
  try {
    body();
    return kExitOk;
  } catch (const NumericError& e) {
    log << "error: numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const LookupError& e) {
    log << "error: missing input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    log << "error: invalid configuration: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& e) {
    log << "error: invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    log << "error: malformed input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const VersionError& e) {
    log << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

void write_run_manifest(const std::string& run_dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (!entry.is_regular_file()) continue;
    auto rel = fs::relative(entry.path(), run_dir).generic_string();
    if (rel != "manifest.txt") files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  std::ostringstream o;
  o << "# file,bytes,fnv1a64\n";
  for (const auto& f : files) {
    std::ifstream in(fs::path(run_dir) / f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const auto bytes = ss.str();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
    o << f << "," << bytes.size() << "," << buf << "\n";
  }
  open_out((fs::path(run_dir) / "manifest.txt").string()) << o.str();
}

int cmd_pretrain(const RunConfig& config, std::ostream& log) {
  return run_guarded(
      [&] {
        prepare(config);
        const auto t0 = std::chrono::steady_clock::now();
        auto splits = load_splits(config);
        auto model = init_transformer(config.model, config.seed);
        auto result = train_weights(model, splits.train, config.pretrain_options());
        if (result.diverged) throw NumericError("pretraining diverged; weights restored to the last good step");
        const double train_acc = dataset_accuracy(model, splits.train);
        const double val_acc = dataset_accuracy(model, splits.val);
        write_model_checkpoint(model, dense_checkpoint_path(config.out_dir));
        auto rep = open_out((fs::path(config.out_dir) / "pretrain.txt").string());
        rep << "initial_loss=" << fmt(result.initial_loss) << "\nfinal_loss=" << fmt(result.final_loss)
            << "\nsteps=" << result.steps << "\ntrain_acc=" << fmt(train_acc) << "\nval_acc=" << fmt(val_acc) << "\n";
        rep.close();
        write_run_manifest(config.out_dir);
        char buf[160];
        std::snprintf(buf, sizeof buf, "pretrain: loss %.4f -> %.4f, train acc %.3f, val acc %.3f (%.1fs)\n",
                      result.initial_loss, result.final_loss, train_acc, val_acc, seconds_since(t0));
        log << buf;
      },
      log);
}

int cmd_search(const RunConfig& config, std::ostream& log) {
  return run_guarded(
      [&] {
        // Hyperparameters are checked before any file is read or written.
        config.validate();
        HyperParams probe_hp;
        probe_hp.kappa = config.kappa;
        probe_hp.alpha = config.alpha;
        probe_hp.lambda = config.lambda;
        probe_hp.nu = config.nu;
        probe_hp.search_steps = config.search_steps;
        probe_hp.members = config.members;
        probe_hp.validate(0);

        const auto dense_path = dense_checkpoint_path(config.out_dir);
        if (!fs::exists(dense_path)) throw LookupError("pretrained checkpoint " + dense_path + " not found; run pretrain");
        prepare(config);
        const auto t0 = std::chrono::steady_clock::now();
        const auto model = read_model_checkpoint(dense_path);
        const MaskLayout layout(model);
        auto splits = load_splits(config);
        HyperParams hp = config.hyper_params(layout);

        if (config.ria) {
          const std::size_t calib = std::min<std::size_t>(64, splits.train.size());
          std::vector<std::size_t> idx(calib);
          for (std::size_t i = 0; i < calib; ++i) idx[i] = i;
          const auto norms = calibration_norms(model, splits.train.subset(idx).inputs);
          std::size_t zero_terms = 0;
          hp.entry_lambda = ria_entry_lambda(model, norms, config.ria_lambda0, &zero_terms);
          hp.validate(layout.total());
          if (zero_terms) log << "ria: " << zero_terms << " zero-over-zero terms taken as 0\n";
        }

        const double c = max_abs_weight(model);
        double lip = config.lip;
        if (config.full_batch) {
          const TransformerObjective full(model, splits.train);
          if (lip == 0.0) {
            const std::vector<double> ones(layout.total(), 1.0);
            lip = estimate_lipschitz(full, ones, 16, 0.5, config.seed);
          }
        }
        double bound = 0.0;
        if (lip > 0.0) {
          bound = max_step_size(lip, c, hp.nu, hp.kappa);
          char buf[200];
          std::snprintf(buf, sizeof buf, "search: Lip %.4g (%s), C %.4g, step bound %.4g, alpha %.4g\n", lip,
                        config.lip > 0.0 ? "given" : "estimated", c, bound, hp.alpha);
          log << buf;
        }

        const auto& train = splits.train;
        const std::size_t bs = std::min(config.search_batch, train.size());
        const std::size_t per_epoch = bs == 0 ? 1 : (train.size() + bs - 1) / bs;
        std::vector<std::vector<std::size_t>> batches;
        std::size_t batches_epoch = static_cast<std::size_t>(-1);

        SolutionPath path(layout, config.snapshot_stride);
        SearchState state = SearchState::initial(layout.total());
        std::vector<LyapunovState> trace;
        std::vector<double> prev_cert(layout.total(), 0.0);

        std::ostringstream slog;
        slog << "k,task_loss,coupling,augmented";
        for (std::size_t l = 0; l < layout.layers(); ++l) slog << ",l1_L" << l;
        slog << ",support,d_augmented\n";
        double prev_total = std::nan("");

        path.record(state);
        for (std::size_t k = 0; k < config.search_steps; ++k) {
          Dataset batch;
          const Dataset* data = &train;
          if (!config.full_batch) {
            const std::size_t epoch = k / per_epoch;
            if (epoch != batches_epoch) {
              batches = epoch_batches(train.size(), bs, config.seed, epoch);
              batches_epoch = epoch;
            }
            batch = train.subset(batches[k % per_epoch]);
            data = &batch;
          }
          const TransformerObjective objective(model, *data);
          AugmentedLoss loss;
          SearchState next = search_step(state, hp, objective, &loss);
          if (config.full_batch) {
            auto ls = lyapunov_state(state, loss, prev_cert, hp);
            prev_cert = ls.cert;
            trace.push_back(std::move(ls));
          }
          std::size_t support = 0;
          for (double g : state.gamma) support += g > 0.0;
          slog << k << "," << fmt(loss.task) << "," << fmt(loss.coupling) << "," << fmt(loss.total());
          for (double v : layer_l1(layout, state.gamma)) slog << "," << fmt(v);
          slog << "," << support << "," << (std::isnan(prev_total) ? std::string("0") : fmt(loss.total() - prev_total))
               << "\n";
          prev_total = loss.total();
          state = std::move(next);
          if (path.due(state.step) || state.step == config.search_steps) path.record(state);
        }

        const fs::path dir(config.out_dir);
        open_out((dir / "search_log.csv").string()) << slog.str();
        write_solution_path(path, (dir / "path.bin").string());
        write_search_state(state, (dir / "state.bin").string());
        {
          auto csv = open_out((dir / "path.csv").string());
          csv << "iteration,layer,pair_kind,l1_norm,support_count\n";
          for (const auto& snap : path.snapshots()) {
            for (std::size_t g = 0; g < snap.groups.size(); ++g) {
              csv << snap.step << "," << g / 3 << "," << pair_kind_name(static_cast<PairKind>(g % 3)) << ","
                  << fmt(snap.groups[g].l1) << "," << snap.groups[g].support << "\n";
            }
          }
        }

        std::ostringstream summary;
        summary << "search_steps=" << config.search_steps << "\nsnapshots=" << path.snapshots().size()
                << "\nfinal_support=" << path.snapshots().back().support << "\nmask_entries=" << layout.total()
                << "\nC=" << fmt(c) << "\n";
        if (lip > 0.0) summary << "lip=" << fmt(lip) << "\nstep_bound=" << fmt(bound) << "\n";
        if (config.full_batch) {
          // Close the trace with the final state so every step has a successor.
          const TransformerObjective full(model, train);
          trace.push_back(lyapunov_state(state, augmented_loss(full, state.mask, state.gamma, hp.nu), prev_cert, hp));
          const double rho = descent_constant(lip, c, hp.nu, hp.kappa, hp.alpha);
          auto report = check_descent(trace, rho, 1e-9, DescentNorm::kPrimal);
          auto full_norm = check_descent(trace, rho, 1e-9, DescentNorm::kFull);
          auto out = open_out((dir / "descent.csv").string());
          report.write_csv(out);
          summary << "rho_desc=" << fmt(rho) << "\ndescent_primal: " << report.summary()
                  << "\ndescent_full: " << full_norm.summary() << "\n";
          log << "search: descent check " << report.summary() << "\n";
        } else {
          summary << "descent_check=skipped (mini-batch gradients)\n";
        }
        open_out((dir / "search_summary.txt").string()) << summary.str();
        write_run_manifest(config.out_dir);
        char buf[160];
        std::snprintf(buf, sizeof buf, "search: %zu steps, %zu snapshots, final support %zu/%zu (%.1fs)\n",
                      config.search_steps, path.snapshots().size(), path.snapshots().back().support, layout.total(),
                      seconds_since(t0));
        log << buf;
      },
      log);
}

int cmd_family(const RunConfig& config, std::size_t members, std::ostream& log) {
  return run_guarded(
      [&] {
        config.validate();
        if (members == 0 || members > config.search_steps) {
          throw ValidationError("members (T_p=" + std::to_string(members) + ") must lie in [1, search_steps=" +
                                std::to_string(config.search_steps) + "]");
        }
        const fs::path run(config.out_dir);
        const auto path_file = (run / "path.bin").string();
        if (!fs::exists(path_file)) throw LookupError("solution path " + path_file + " not found; run search");
        const auto counter_before = search_steps_taken();
        const auto t0 = std::chrono::steady_clock::now();

        const auto dense = read_model_checkpoint(dense_checkpoint_path(config.out_dir));
        const auto path = read_solution_path(path_file);
        if (path.snapshots().empty() || path.snapshots().back().step < config.search_steps) {
          throw ValidationError("solution path does not reach search_steps; rerun search with this config");
        }
        auto splits = load_splits(config);
        auto fam = extract_family(path, dense, config.search_steps, members, config.tokens);

        const auto dir = fs::path(family_dir(config.out_dir, members));
        fs::create_directories(dir);
        const auto dense_cost = count_cost(dense, config.tokens);
        const double dense_acc = dataset_accuracy(dense, splits.val);

        std::ostringstream manifest;
        manifest << "member,k_hat,source_step,sparsity,params,maskable_params,macs_per_token,val_acc_raw,val_acc,"
                    "train_loss,checkpoint\n";
        for (std::size_t i = 0; i < fam.members.size(); ++i) {
          auto& m = fam.members[i];
          m.metrics["val_acc_raw"] = dataset_accuracy(m.model.weights, splits.val);
          auto ft = finetune(m, splits.train, config.finetune_options());
          if (ft.diverged) fam.warnings.push_back("member " + std::to_string(i) + ": finetune diverged, kept last good weights");
          m.metrics["train_loss"] = ft.final_loss;
          m.metrics["val_acc"] = dataset_accuracy(m.model.weights, splits.val);
          const auto name = "member_" + std::to_string(i) + ".ckpt";
          write_checkpoint(m, config.tokens, (dir / name).string());
          manifest << i << "," << m.requested_step << "," << m.source_step << "," << fmt(sparsity(m)) << ","
                   << m.cost.params << "," << m.cost.maskable_params << "," << m.cost.macs_per_token() << ","
                   << fmt(m.metrics["val_acc_raw"]) << "," << fmt(m.metrics["val_acc"]) << ","
                   << fmt(m.metrics["train_loss"]) << "," << name << "\n";
        }
        open_out((dir / "manifest.csv").string()) << manifest.str();

        const auto extra_steps = search_steps_taken() - counter_before;
        std::ostringstream summary;
        summary << "members_requested=" << members << "\nmembers_written=" << fam.members.size() << "\nk_hat=";
        for (std::size_t i = 0; i < fam.requested.size(); ++i) summary << (i ? "," : "") << fam.requested[i];
        summary << "\ndense_params=" << dense_cost.params << "\ndense_maskable_params=" << dense_cost.maskable_params
                << "\ndense_macs_per_token=" << dense_cost.macs_per_token() << "\ndense_val_acc=" << fmt(dense_acc)
                << "\nsearch_steps_during_family=" << extra_steps << "\n";
        for (const auto& w : fam.warnings) summary << "warning=" << w << "\n";
        open_out((dir / "summary.txt").string()) << summary.str();
        write_run_manifest(config.out_dir);
        for (const auto& w : fam.warnings) log << "family: warning: " << w << "\n";
        char buf[160];
        std::snprintf(buf, sizeof buf, "family: T_p=%zu -> %zu members, dense val acc %.3f (%.1fs)\n", members,
                      fam.members.size(), dense_acc, seconds_since(t0));
        log << buf;
      },
      log);
}

int cmd_eval(const RunConfig& config, const std::string& checkpoint, std::ostream& log) {
  return run_guarded(
      [&] {
        config.validate();
        const auto model = read_model_checkpoint(checkpoint);
        auto splits = load_splits(config);
        const auto cost = count_cost(model, config.tokens);
        char buf[240];
        std::snprintf(buf, sizeof buf,
                      "eval: %s\n  params %zu, maskable %zu, MACs/token %zu\n  train acc %.4f, val acc %.4f, val loss "
                      "%.6f\n",
                      checkpoint.c_str(), cost.params, cost.maskable_params, cost.macs_per_token(),
                      dataset_accuracy(model, splits.train), dataset_accuracy(model, splits.val),
                      dataset_loss(model, splits.val));
        log << buf;
      },
      log);
}

int cmd_export_path(const std::string& run_dir, std::ostream& log) {
  return run_guarded(
      [&] {
        const auto file = (fs::path(run_dir) / "path.bin").string();
        if (!fs::exists(file)) throw LookupError("solution path " + file + " not found");
        const auto path = read_solution_path(file);
        std::ostringstream o;
        o << "iteration,support";
        for (const auto& n : path.group_names()) o << ",l1_" << n;
        o << "\n";
        for (const auto& snap : path.snapshots()) {
          o << snap.step << "," << snap.support;
          for (const auto& g : snap.groups) o << "," << fmt(g.l1);
          o << "\n";
        }
        open_out((fs::path(run_dir) / "path_export.csv").string()) << o.str();
        write_run_manifest(run_dir);
        log << "export-path: " << path.snapshots().size() << " snapshots, " << path.group_names().size()
            << " groups\n";
      },
      log);
}

}  // namespace spp
