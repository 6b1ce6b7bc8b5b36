#pragma once

// httplib server on an ephemeral loopback port, running on its own thread.

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <string>
#include <thread>

namespace stub {

class Server {
 public:
  Server() = default;
  ~Server() { stop(); }

  httplib::Server& http() { return server_; }

  void start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  int port() const { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

// A loopback port with nothing listening on it.
inline int closed_port() {
  Server s;
  s.start();
  const int port = s.port();
  s.stop();
  return port;
}

}  // namespace stub
