#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pasfuse {

/// Bad flags, malformed overrides or an unreadable config.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum ExitCode : int { kExitOk = 0, kExitOther = 1, kExitConfig = 2, kExitData = 3, kExitNumeric = 4 };

inline const std::vector<std::string> kCommands{"synth", "preprocess", "train", "multirun",
                                                "compare", "eval", "explain", "stats"};

struct CliConfig {
  std::string command;
  std::filesystem::path config_path;  // empty: defaults only
  std::filesystem::path out_dir;
  std::vector<std::string> overrides;  // dotted.key=value
  std::optional<std::uint64_t> seed;
  std::optional<std::string> profile;
  bool deterministic = false;
  int verbosity = 1;
  bool help = false;
  std::string help_text;
};

/// argv[0] is the program name. Throws UsageError.
CliConfig parse_args(const std::vector<std::string>& args);

/// Default config document for a command, given the model/profile choices
/// already visible in `peek` (the user's file with overrides applied).
nlohmann::json default_config(const std::string& command, const nlohmann::json& peek);

/// Merges `overlay` into `base`; every overlay key must exist in base
/// (values under a null default are taken as is).
void merge_config(nlohmann::json& base, const nlohmann::json& overlay, const std::string& path = "");

/// Applies "a.b.c=value"; the value is parsed as JSON when possible and
/// otherwise taken as a string. With `strict`, the key must exist.
void apply_override(nlohmann::json& doc, const std::string& assignment, bool strict = true);

/// Defaults <- config file <- --seed/--profile <- --set.
nlohmann::json effective_config(const CliConfig& cli);

/// Hex digest of the config's canonical dump.
std::string config_hash(const nlohmann::json& config);

/// Runs a parsed command; returns the exit code and reports failures on err.
int run_command(const CliConfig& cli, std::ostream& out, std::ostream& err);

/// Full entry point: parse, run, map exceptions to exit codes.
int cli_main(int argc, const char* const* argv);

}  // namespace pasfuse
