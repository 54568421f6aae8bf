// Command-line driver: pretrain -> search -> family, plus eval and path export.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "spp/config.hpp"
#include "spp/errors.hpp"
#include "spp/pipeline.hpp"
#include "spp/search.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> members;
  bool full_batch = false;
  std::string prox;
};

spp::RunConfig resolve(const Overrides& o) {
  spp::RunConfig c;
  std::string source;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw spp::LookupError("cannot open config " + o.config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    source = ss.str();
    c = spp::RunConfig::parse(source);
  }
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.seed) c.seed = *o.seed;
  if (o.members) c.members = *o.members;
  if (o.full_batch) c.full_batch = true;
  if (!o.prox.empty()) c.prox = spp::parse_prox_variant(o.prox);
  c.validate();
  if (!source.empty()) {
    std::filesystem::create_directories(c.out_dir);
    std::ofstream((std::filesystem::path(c.out_dir) / "config.source.txt").string(), std::ios::binary) << source;
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Solution-path pruning of a toy transformer: one search, a family of pruned models."};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config_path, "Flat key=value run configuration");
  app.add_option("--out", o.out, "Run directory (overrides out_dir)");
  app.add_option("--seed", o.seed, "Seed (overrides seed)");
  app.add_option("--members", o.members, "Family size T_p (overrides members)");
  app.add_flag("--full-batch", o.full_batch, "Full-batch search; enables the descent check");
  app.add_option("--prox", o.prox, "Proximal variant")->check(CLI::IsMember({"l1box", "l1box-ridge", "group"}));

  auto* pretrain = app.add_subcommand("pretrain", "Train the dense toy model");
  auto* search = app.add_subcommand("search", "Run the mask search and record the solution path");
  auto* family = app.add_subcommand("family", "Extract, compact and finetune the weight family");
  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the configured data");
  eval->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  std::string run_dir;
  auto* exportp = app.add_subcommand("export-path", "Write path_export.csv from a run directory");
  exportp->add_option("run_dir", run_dir, "Run directory (defaults to --out or the config's out_dir)");
  auto* all = app.add_subcommand("run", "pretrain, search and family in sequence");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : spp::kExitUsage;
  }

  spp::RunConfig config;
  const int rc = spp::run_guarded([&] { config = resolve(o); }, std::cerr);
  if (rc != spp::kExitOk) return rc;

  if (pretrain->parsed()) return spp::cmd_pretrain(config, std::cout);
  if (search->parsed()) return spp::cmd_search(config, std::cout);
  if (family->parsed()) return spp::cmd_family(config, config.members, std::cout);
  if (eval->parsed()) return spp::cmd_eval(config, checkpoint, std::cout);
  if (exportp->parsed()) return spp::cmd_export_path(run_dir.empty() ? config.out_dir : run_dir, std::cout);
  if (all->parsed()) {
    for (auto stage : {&spp::cmd_pretrain, &spp::cmd_search}) {
      if (int r = stage(config, std::cout); r != spp::kExitOk) return r;
    }
    return spp::cmd_family(config, config.members, std::cout);
  }
  return spp::kExitUsage;
}
