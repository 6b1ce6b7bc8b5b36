#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>

#include "decoysh/llm/backend_spec.hpp"
#include "decoysh/llm/prompt.hpp"

namespace decoysh::llm {

/// Every failure carries the time spent before it was detected.
class BackendError : public std::runtime_error {
 public:
  BackendError(const std::string& what, std::int64_t elapsed_ms)
      : std::runtime_error(what), elapsed_ms_(elapsed_ms) {}
  std::int64_t elapsed_ms() const { return elapsed_ms_; }

 private:
  std::int64_t elapsed_ms_;
};

class TimeoutError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// Connection refused, DNS, TLS and similar.
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// The provider answered but not with a usable completion. status is the HTTP
/// status, or 0 when the request never left (missing key, bad payload).
class ApiError : public BackendError {
 public:
  ApiError(const std::string& what, int status, std::int64_t elapsed_ms)
      : BackendError(what, elapsed_ms), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct Generation {
  std::string text;
  std::int64_t latency_ms = 0;
};

/// Single request against spec, bounded by spec.timeout_s. One retry on
/// TransportError while time remains; none on timeout.
Generation generate(const BackendSpec& spec, const PromptBundle& prompt);

/// Sends a fixed minimal prompt with availability_timeout_s. Never throws;
/// reason (when given) receives the cause of a false result.
bool check_available(const BackendSpec& spec, std::string* reason = nullptr);

/// Runs spec.reset_hook through /bin/sh (killed after hook_cap) and then
/// check_available. Cloud backends return true without doing anything.
bool reset_backend(const BackendSpec& spec, std::chrono::milliseconds hook_cap = std::chrono::seconds(60),
                   std::string* reason = nullptr);

/// Replaces every occurrence of the API key held in spec.api_key_env.
std::string scrub_secret(const BackendSpec& spec, std::string text);

/// FIFO admission with a cap on concurrent holders. A waiter that gives up
/// leaves the queue without disturbing the order of the others.
class FifoLimiter {
 public:
  explicit FifoLimiter(std::size_t max_in_flight);
  /// False if the deadline passed before a slot opened.
  bool acquire(std::chrono::steady_clock::time_point deadline);
  void release();
  std::size_t in_flight() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::list<std::uint64_t> waiting_;
  std::uint64_t next_ = 0;
  std::size_t in_flight_ = 0;
  std::size_t max_;
};

/// What the session engine and the harness talk to.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual Generation generate(const PromptBundle& prompt) = 0;
  virtual bool check_available(std::string* reason = nullptr) = 0;
  virtual bool reset(std::string* reason = nullptr) = 0;
  virtual std::string id() const = 0;
  virtual double timeout_s() const = 0;
  /// Parameters stamped into run summaries.
  virtual std::map<std::string, std::string> describe() const = 0;
};

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(BackendSpec spec);
  Generation generate(const PromptBundle& prompt) override;
  bool check_available(std::string* reason = nullptr) override;
  bool reset(std::string* reason = nullptr) override;
  std::string id() const override { return spec_.model_id; }
  double timeout_s() const override { return spec_.timeout_s; }
  std::map<std::string, std::string> describe() const override;
  const BackendSpec& spec() const { return spec_; }

 private:
  BackendSpec spec_;
  FifoLimiter limiter_;
};

/// Canned completions keyed by the verbatim command. Unknown commands raise
/// ApiError(404) so callers exercise their fallback path.
class ReplayBackend : public Backend {
 public:
  ReplayBackend(std::string id, std::map<std::string, std::string> responses,
                std::chrono::milliseconds delay = {});
  Generation generate(const PromptBundle& prompt) override;
  bool check_available(std::string* reason = nullptr) override;
  bool reset(std::string* = nullptr) override { return true; }
  std::string id() const override { return id_; }
  double timeout_s() const override { return 30.0; }
  std::map<std::string, std::string> describe() const override;
  std::size_t calls() const;

 private:
  std::string id_;
  std::map<std::string, std::string> responses_;
  std::chrono::milliseconds delay_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
};

/// Reads a JSON object {"<command>": "<output>", ...}. Throws
/// std::runtime_error on unreadable or malformed files.
std::map<std::string, std::string> load_replay_file(const std::filesystem::path& path);

}  // namespace decoysh::llm
