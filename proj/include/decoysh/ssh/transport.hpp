#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "decoysh/ssh/host_key.hpp"

namespace decoysh::ssh {

namespace msg {
inline constexpr std::uint8_t disconnect = 1;
inline constexpr std::uint8_t ignore = 2;
inline constexpr std::uint8_t unimplemented = 3;
inline constexpr std::uint8_t debug = 4;
inline constexpr std::uint8_t service_request = 5;
inline constexpr std::uint8_t service_accept = 6;
inline constexpr std::uint8_t ext_info = 7;
inline constexpr std::uint8_t kexinit = 20;
inline constexpr std::uint8_t newkeys = 21;
inline constexpr std::uint8_t kex_ecdh_init = 30;
inline constexpr std::uint8_t kex_ecdh_reply = 31;
inline constexpr std::uint8_t userauth_request = 50;
inline constexpr std::uint8_t userauth_failure = 51;
inline constexpr std::uint8_t userauth_success = 52;
inline constexpr std::uint8_t userauth_banner = 53;
inline constexpr std::uint8_t global_request = 80;
inline constexpr std::uint8_t request_success = 81;
inline constexpr std::uint8_t request_failure = 82;
inline constexpr std::uint8_t channel_open = 90;
inline constexpr std::uint8_t channel_open_confirmation = 91;
inline constexpr std::uint8_t channel_open_failure = 92;
inline constexpr std::uint8_t channel_window_adjust = 93;
inline constexpr std::uint8_t channel_data = 94;
inline constexpr std::uint8_t channel_extended_data = 95;
inline constexpr std::uint8_t channel_eof = 96;
inline constexpr std::uint8_t channel_close = 97;
inline constexpr std::uint8_t channel_request = 98;
inline constexpr std::uint8_t channel_success = 99;
inline constexpr std::uint8_t channel_failure = 100;
}  // namespace msg

namespace disconnect_reason {
inline constexpr std::uint32_t protocol_error = 2;
inline constexpr std::uint32_t key_exchange_failed = 3;
inline constexpr std::uint32_t mac_error = 5;
inline constexpr std::uint32_t service_not_available = 7;
inline constexpr std::uint32_t by_application = 11;
inline constexpr std::uint32_t too_many_connections = 12;
inline constexpr std::uint32_t no_more_auth_methods = 14;
}  // namespace disconnect_reason

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The peer went away: EOF, reset, or an SSH_MSG_DISCONNECT.
class PeerClosed : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class DeadlineExpired : public ProtocolError {
 public:
  DeadlineExpired() : ProtocolError("deadline expired") {}
};

/// Key material and primitives, exposed for tests.
namespace kex {
std::string sha256(std::string_view data);
/// RFC 4253 section 7.2; k_mpint is K already encoded as an SSH mpint.
std::string derive_key(std::string_view k_mpint, std::string_view h, char letter,
                       std::string_view session_id, std::size_t length);
}  // namespace kex

/// One direction of the binary packet protocol. Until keys are installed
/// packets go out in the clear with 8-byte alignment and no MAC.
class PacketCipher {
 public:
  PacketCipher();
  ~PacketCipher();
  PacketCipher(const PacketCipher&) = delete;
  PacketCipher& operator=(const PacketCipher&) = delete;

  /// cipher is "aes128-ctr" or "aes256-ctr"; MAC is always hmac-sha2-256.
  void install(const std::string& cipher, std::string_view key, std::string_view iv,
               std::string_view mac_key, bool encrypt);

  std::string seal(std::string_view payload, std::uint32_t seq);

  /// Incremental opening: returns the payload once a whole packet has been
  /// consumed from buffer, nullopt when more bytes are needed.
  std::optional<std::string> open(std::string& buffer, std::uint32_t seq);

  std::size_t block_size() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct TransportOptions {
  std::string banner = "SSH-2.0-OpenSSH_8.2p1 Ubuntu-4ubuntu0.5";
  std::shared_ptr<const HostKey> host_key;
};

/// Server side of an SSH-2 transport on a connected socket. Not thread-safe.
class Transport {
 public:
  using TimePoint = std::chrono::steady_clock::time_point;

  Transport(int fd, TransportOptions options, const std::atomic<bool>* stop = nullptr);
  ~Transport();

  /// Version exchange and the first key exchange.
  void handshake(std::optional<TimePoint> deadline);

  /// Next message above the transport layer. Key re-exchange, ignore, debug
  /// and unimplemented messages are handled here.
  std::string read_message(std::optional<TimePoint> deadline = std::nullopt);
  void send(std::string_view payload);
  /// Best effort; never throws.
  void disconnect(std::uint32_t reason, const std::string& description) noexcept;

  const std::string& client_version() const { return client_version_; }
  const std::string& session_id() const { return session_id_; }
  const std::string& cipher_in() const { return cipher_in_name_; }
  const std::string& cipher_out() const { return cipher_out_name_; }
  /// Sequence number of the last packet received, for UNIMPLEMENTED replies.
  std::uint32_t last_sequence() const { return seq_in_ - 1; }

 private:
  std::string read_packet(std::optional<TimePoint> deadline);
  void run_kex(std::string client_kexinit, std::optional<TimePoint> deadline);
  std::string make_kexinit();
  void fill(std::optional<TimePoint> deadline);
  void write_all(std::string_view bytes);

  int fd_;
  TransportOptions options_;
  const std::atomic<bool>* stop_;
  std::string inbuf_;
  std::string client_version_;
  std::string session_id_;
  std::string cipher_in_name_ = "none";
  std::string cipher_out_name_ = "none";
  PacketCipher in_;
  PacketCipher out_;
  std::uint32_t seq_in_ = 0;
  std::uint32_t seq_out_ = 0;
};

}  // namespace decoysh::ssh
