#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace decoysh::ssh {

class HostKeyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An ssh-ed25519 key pair. secret_key is libsodium's 64-byte form
/// (seed followed by the public key), which is also what OpenSSH stores.
struct HostKey {
  std::array<std::uint8_t, 32> public_key{};
  std::array<std::uint8_t, 64> secret_key{};
  std::string comment;

  /// string "ssh-ed25519" || string key, as sent in KEX replies.
  std::string public_blob() const;
  /// string "ssh-ed25519" || string signature.
  std::string sign(std::string_view data) const;
  /// "SHA256:<unpadded base64>", the form ssh-keygen -l prints.
  std::string fingerprint() const;
  /// "ssh-ed25519 AAAA... comment"
  std::string public_line() const;

  bool operator==(const HostKey&) const = default;
};

HostKey generate_host_key(std::string comment = "");

/// Unencrypted "openssh-key-v1" PEM text, as written by ssh-keygen -N ''.
std::string encode_openssh_private_key(const HostKey& key);
HostKey parse_openssh_private_key(std::string_view text);

/// Throws HostKeyError when the file is missing, unreadable, encrypted or
/// holds anything other than a single valid ed25519 key.
HostKey load_host_key(const std::filesystem::path& path);
/// Writes with mode 0600; refuses to overwrite an existing file.
void save_host_key(const HostKey& key, const std::filesystem::path& path);

/// Checks an ssh-ed25519 signature blob against a public key blob.
bool verify_signature(std::string_view public_blob, std::string_view data, std::string_view signature_blob);

/// Calls sodium_init once; safe from any thread.
void ensure_sodium();

}  // namespace decoysh::ssh
