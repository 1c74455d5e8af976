#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace binnlab {

/// Flag overrides applied on top of the config document: --seed, --out, and
/// repeatable --set dotted.path=value entries.
struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::vector<std::pair<std::string, std::string>> sets;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 1;
inline constexpr int kExitRuntimeError = 2;
inline constexpr int kExitCheckFailure = 3;

/// Dispatch one CLI command: train, estimator-bench, theorem-checks,
/// grad-probe, or gen-data. Prints diagnostics to stderr and returns the
/// process exit code.
int run_command(const std::string& command, const std::string& config_path,
                const CliOverrides& overrides);

}  // namespace binnlab
