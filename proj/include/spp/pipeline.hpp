#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>

#include "spp/config.hpp"
#include "spp/data.hpp"

namespace spp {

// Exit codes shared by every stage.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;    // bad flags, invalid config, missing or malformed input
inline constexpr int kExitNumeric = 3;  // non-finite loss or gradient

struct Splits {
  Dataset train;
  Dataset val;
};

// Synthetic data from the config seed, or the configured CSV; always split the same way.
Splits load_splits(const RunConfig& config);

// File names inside a run directory.
std::string dense_checkpoint_path(const std::string& run_dir);
std::string family_dir(const std::string& run_dir, std::size_t members);

// Each stage validates the config first and reports through `log`. Failures
// are mapped onto the exit codes above.
int cmd_pretrain(const RunConfig& config, std::ostream& log);
int cmd_search(const RunConfig& config, std::ostream& log);
int cmd_family(const RunConfig& config, std::size_t members, std::ostream& log);
int cmd_eval(const RunConfig& config, const std::string& checkpoint, std::ostream& log);
int cmd_export_path(const std::string& run_dir, std::ostream& log);

// Runs `body`, translating library exceptions into exit codes.
int run_guarded(const std::function<void()>& body, std::ostream& log);

// Rewrites <run_dir>/manifest.txt: every file in the run directory with its
// size and FNV-1a hash, sorted by path.
void write_run_manifest(const std::string& run_dir);

}  // namespace spp
