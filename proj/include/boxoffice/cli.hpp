#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace boxoffice {

inline constexpr std::string_view kVersion = "0.1.0";
inline constexpr std::string_view kManifestFormat = "boxoffice-run";

/// Resolved settings for one subcommand: built-in defaults, then the
/// `--config` file (a plain JSON object or an earlier run manifest), then
/// command-line flags. Input paths are stored absolute.
struct RunConfig {
  std::string subcommand;
  nlohmann::json values = nlohmann::json::object();

  std::uint64_t seed() const;
  std::filesystem::path out() const;
  /// Input path under `key` (data, lexical, posters, clusters, checkpoint).
  std::optional<std::filesystem::path> input(std::string_view key) const;
  const nlohmann::json& block(std::string_view key) const;

  /// Throws IoError for a referenced input that does not exist.
  void validate() const;
};

const std::vector<std::string>& subcommands();

/// Parses and runs one subcommand. Exit status: 0 on success, 1 with a single
/// `error: <code>: <message>` line on `err`, 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace boxoffice
