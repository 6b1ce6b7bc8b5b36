#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "decoysh/llm/backend_spec.hpp"

namespace decoysh {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingFile : public ConfigError {
 public:
  explicit MissingFile(const std::filesystem::path& path)
      : ConfigError("cannot read config file: " + path.string()) {}
};

class ParseError : public ConfigError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : ConfigError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public ConfigError {
 public:
  ValidationError(std::string field, const std::string& what)
      : ConfigError(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct Credential {
  std::string username;
  std::string password;
  bool operator==(const Credential&) const = default;
};

struct HoneypotConfig {
  // [ssh]
  int port = 8022;
  std::string host_key_path = "host_ed25519";
  std::string banner = "SSH-2.0-OpenSSH_8.2p1 Ubuntu-4ubuntu0.5";
  std::size_t max_connections_per_ip = 10;
  std::size_t max_auth_failures = 3;
  double auth_timeout_s = 60.0;

  // [auth]
  std::vector<Credential> credentials;

  // [llm]
  llm::BackendSpec backend;
  std::string prompt_template_path;  // empty: built-in template

  // [shell]
  std::string hostname = "svr04";
  std::string shell_prompt = "{user}@{host}:{cwd}$ ";
  std::string motd = "Welcome to Ubuntu 20.04.6 LTS (GNU/Linux 5.15.0-78-generic x86_64)\n";
  std::string cache_path;        // empty: built-in dictionary
  std::string seed_image_path;   // empty: built-in filesystem image

  // [logging]
  std::string log_dir = "logs";
  std::size_t max_log_bytes = 10 * 1024 * 1024;
  std::size_t max_log_archives = 10;
  bool fsync = true;

  bool operator==(const HoneypotConfig&) const = default;
};

/// Parses INI text. Relative paths are resolved against base_dir when it is
/// non-empty. Throws ParseError or ValidationError.
HoneypotConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});

/// Reads and parses path. Throws MissingFile, ParseError or ValidationError.
HoneypotConfig load_config(const std::filesystem::path& path);

/// Writes every setting back out in the same dialect parse_config accepts.
std::string to_ini(const HoneypotConfig& cfg);

/// Checks the invariants; throws ValidationError naming the first violation.
void validate(const HoneypotConfig& cfg);

/// Byte-exact, case-sensitive membership test.
bool validate_credentials(const HoneypotConfig& cfg, std::string_view user, std::string_view pass);

}  // namespace decoysh
