#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "spp/checkpoint.hpp"
#include "spp/family.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "spp_test_cli";

const char* kSmallConfig =
    "# tiny run for the driver tests\n"
    "seed=5\n"
    "layers=1\n"
    "heads=2\n"
    "model_dim=4\n"
    "qk_dim=2\n"
    "v_dim=2\n"
    "ffn_dim=6\n"
    "classes=3\n"
    "samples=64\n"
    "tokens=3\n"
    "epochs=2\n"
    "kappa=1\n"
    "alpha=0.05\n"
    "lambda=0.2\n"
    "nu=2\n"
    "search_steps=40\n"
    "snapshot_stride=10\n"
    "search_batch=32\n"
    "members=3\n"
    "finetune_epochs=1\n";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SPP_CLI_PATH) + " " + args + " > " + (kRoot / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string write_config(const std::string& name, const std::string& text) {
  fs::create_directories(kRoot);
  const auto p = kRoot / name;
  std::ofstream(p, std::ios::trunc) << text;
  return p.string();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

// Runs the full pipeline once and shares the run directory between cases.
const fs::path& small_run() {
  static const fs::path dir = [] {
    const auto out = kRoot / "run";
    fs::remove_all(out);
    const auto cfg = write_config("small.cfg", kSmallConfig);
    REQUIRE(run_cli("--config " + cfg + " --out " + out.string() + " run") == 0);
    return out;
  }();
  return dir;
}

}  // namespace

TEST_CASE("the full pipeline writes the expected artifacts") {
  const auto& dir = small_run();
  for (const char* f : {"config.txt", "config.source.txt", "dense.ckpt", "path.bin", "path.csv", "search_log.csv",
                        "manifest.txt", "family_tp3/manifest.csv", "family_tp3/summary.txt"})
    CHECK_MESSAGE(fs::exists(dir / f), f);
}

TEST_CASE("manifest sparsity matches a recompute from the member checkpoint") {
  const auto& dir = small_run();
  auto rows = read_csv(dir / "family_tp3" / "manifest.csv");
  REQUIRE(rows.size() >= 2);
  const auto& header = rows.front();
  auto col = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    FAIL("missing column " << name);
    return std::size_t{0};
  };
  const auto sp = col("sparsity"), ck = col("checkpoint"), params = col("params");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    auto m = spp::read_checkpoint((dir / "family_tp3" / rows[r][ck]).string());
    CHECK(std::stod(rows[r][sp]) == doctest::Approx(spp::sparsity(m)).epsilon(1e-15));
    CHECK(std::stoul(rows[r][params]) == m.cost.params);
  }
}

TEST_CASE("export-path has one column per group plus iteration and support") {
  const auto& dir = small_run();
  REQUIRE(run_cli("export-path " + dir.string()) == 0);
  auto rows = read_csv(dir / "path_export.csv");
  REQUIRE(rows.size() == 1 + 5);  // steps 0, 10, 20, 30, 40
  // One layer gives three pair groups.
  CHECK(rows[0].size() == 2 + 3);
  CHECK(rows[0][0] == "iteration");
  CHECK(rows[0][1] == "support");
  for (std::size_t r = 1; r < rows.size(); ++r) CHECK(rows[r].size() == rows[0].size());
}

TEST_CASE("export-path over an empty path writes only the header") {
  const auto dir = kRoot / "empty_path";
  fs::create_directories(dir);
  auto dense = spp::read_model_checkpoint((small_run() / "dense.ckpt").string());
  spp::write_solution_path(spp::SolutionPath(spp::MaskLayout(dense), 10), (dir / "path.bin").string());
  REQUIRE(run_cli("export-path " + dir.string()) == 0);
  auto rows = read_csv(dir / "path_export.csv");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].size() == 5);
}

TEST_CASE("eval accepts dense and member checkpoints") {
  const auto& dir = small_run();
  const auto cfg = write_config("small.cfg", kSmallConfig);
  const auto out = " --out " + (kRoot / "eval").string();
  CHECK(run_cli("--config " + cfg + out + " eval " + (dir / "dense.ckpt").string()) == 0);
  CHECK(run_cli("--config " + cfg + out + " eval " + (dir / "family_tp3" / "member_0.ckpt").string()) == 0);
}

TEST_CASE("usage and input errors exit with 2") {
  const auto cfg = write_config("small.cfg", kSmallConfig);
  CHECK(run_cli("--config " + cfg + " --out " + (kRoot / "eval").string() + " eval " +
                (kRoot / "missing.ckpt").string()) == 2);
  const auto fresh = kRoot / "no_dense";
  fs::remove_all(fresh);
  CHECK(run_cli("--config " + cfg + " --out " + fresh.string() + " search") == 2);
  auto with_alpha = [](const std::string& value) {
    std::string text = kSmallConfig;
    return text.replace(text.find("alpha=0.05"), 10, "alpha=" + value);
  };
  for (const char* a : {"0", "-1"}) {
    const auto bad = write_config("bad_alpha.cfg", with_alpha(a));
    CHECK(run_cli("--config " + bad + " --out " + (kRoot / "bad").string() + " search") == 2);
  }
  const auto twice = write_config("twice.cfg", std::string(kSmallConfig) + "alpha=0.1\n");
  CHECK(run_cli("--config " + twice + " --out " + (kRoot / "bad").string() + " search") == 2);
  const auto unknown = write_config("unknown.cfg", "seed=1\nflux=3\n");
  CHECK(run_cli("--config " + unknown + " --out " + (kRoot / "unknown").string() + " pretrain") == 2);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("--prox nonsense search") == 2);
  CHECK(run_cli("export-path " + (kRoot / "nowhere").string()) == 2);
}

TEST_CASE("family on an existing search does not search again") {
  const auto& dir = small_run();
  const auto cfg = write_config("small.cfg", kSmallConfig);
  REQUIRE(run_cli("--config " + cfg + " --out " + dir.string() + " --members 2 family") == 0);
  std::ifstream in(dir / "family_tp2" / "summary.txt");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str().find("search_steps_during_family=0") != std::string::npos);
}
