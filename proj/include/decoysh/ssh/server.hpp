#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>

#include "decoysh/config.hpp"
#include "decoysh/logstore/logstore.hpp"
#include "decoysh/session/session.hpp"
#include "decoysh/ssh/host_key.hpp"

namespace decoysh::ssh {

class BindError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Auth record reasons that do not come from a password check.
inline constexpr std::string_view kReasonIpLimit = "per-ip connection limit";
inline constexpr std::string_view kReasonMethodNotOffered = "method not offered";
inline constexpr std::string_view kReasonNoPassword = "client left without trying a password";

struct GatewayStats {
  std::uint64_t accepted = 0;
  std::uint64_t refused_ip_limit = 0;
  std::uint64_t auth_success = 0;
  std::uint64_t auth_failure = 0;
  std::uint64_t handshake_failures = 0;
};

/// The SSH listener. Each accepted connection gets its own thread, which runs
/// the transport, password authentication and the session channels. Input
/// on a channel only ever reaches session::Session::handle_line.
class Gateway {
 public:
  using Diag = std::function<void(const std::string&)>;

  /// ctx->store receives auth records; sessions log through the same context.
  Gateway(HoneypotConfig cfg, std::shared_ptr<const HostKey> host_key,
          std::shared_ptr<const session::EngineContext> ctx, Diag diag = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Binds cfg.port (0 picks a free port) and starts accepting. Throws BindError.
  void start(const std::string& bind_address = "0.0.0.0");
  /// Stops accepting, drops every connection and waits for their threads.
  void stop();

  std::uint16_t port() const { return port_; }
  std::size_t active_connections() const;
  GatewayStats stats() const;

 private:
  friend class Connection;
  void accept_loop();
  void run_connection(int fd, logstore::Peer peer);
  void log_auth(const std::string& uuid, const logstore::Peer& peer, const std::string& username,
                const std::string& password, const std::string& method, bool success,
                const std::string& reason);
  void diag(const std::string& message) const;

  HoneypotConfig cfg_;
  std::shared_ptr<const HostKey> host_key_;
  std::shared_ptr<const session::EngineContext> ctx_;
  Diag diag_;

  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;

  mutable std::mutex mu_;
  std::condition_variable idle_cv_;
  std::map<std::string, std::size_t> per_ip_;
  std::set<int> fds_;
  std::size_t active_ = 0;
  GatewayStats stats_;
};

}  // namespace decoysh::ssh
