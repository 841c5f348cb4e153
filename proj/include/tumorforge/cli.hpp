#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace tumorforge {

/// Where a resolved option value came from.
enum class ValueSource { kFlag, kConfig, kEnv, kDefault };
std::string_view to_string(ValueSource source);

struct RunConfig {
  std::string command;
  /// Resolved options keyed by canonical name (underscores, no leading dashes).
  std::map<std::string, std::string> options;
  std::map<std::string, ValueSource> sources;
  std::uint64_t seed = 0;

  bool has(const std::string& key) const { return options.count(key) != 0; }
  /// Throws MissingRequired / InvalidValue.
  const std::string& get(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Commands known to parse_args.
std::vector<std::string> command_names();
/// One-paragraph usage text of a command (all commands when empty).
std::string usage(const std::string& command = {});

/// `args` excludes the program name. Flags are `--name value` or
/// `--name=value`; dashes and underscores in names are interchangeable.
/// Precedence: flag > config file (`--config`) > environment
/// (TUMORFORGE_DATA for `data`) > built-in default.
/// Throws UnknownCommand, UnknownOption, MissingRequired (flag without
/// value), InvalidValue, IOFailure (unreadable config).
RunConfig parse_args(const std::vector<std::string>& args, const EnvLookup& env = {});

/// `key = value` lines, `#` comments. Throws InvalidConfig on malformed lines.
std::map<std::string, std::string> read_config_file(const std::string& path);

/// The resolved config as a config file: `command = ...` then `key = value`.
std::string format_run_manifest(const RunConfig& config);

/// Dispatches the command. Returns 0, or the error's class code after
/// printing `error: <Name>: <detail>` on `err`.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

/// parse_args + run with the process environment.
int main_entry(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace tumorforge
