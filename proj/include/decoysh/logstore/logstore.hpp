#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

namespace decoysh::logstore {

inline constexpr std::string_view kDatabaseName = "honeypot_sessions.db";
inline constexpr std::string_view kLogName = "honeypot.log";
inline constexpr std::uint32_t kSchemaVersion = 1;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StorageFull : public IoError {
 public:
  using IoError::IoError;
};

/// A database image that fails validation somewhere other than a torn tail.
class CorruptDatabase : public std::runtime_error {
 public:
  CorruptDatabase(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

enum class EventKind { auth, command, response, session_open, session_close };

std::string_view to_string(EventKind kind);
std::optional<EventKind> parse_kind(std::string_view text);

struct Peer {
  std::string ip;
  std::uint16_t port = 0;
  bool operator==(const Peer&) const = default;
};

std::string format_peer(const Peer& peer);

/// Payload keys per kind (schema v1):
///   auth           username password method success reason
///   command        seq command
///   response       seq tier output exit_code latency_ms flagged error
///   session_open   username
///   session_close  reason duration_ms command_count final_cwd
/// Passwords are stored as typed: attacker input is the point of the log.
struct EventRecord {
  std::string session_uuid;
  std::int64_t at_ms = 0;  // UTC milliseconds since the epoch
  EventKind kind = EventKind::command;
  Peer peer;
  nlohmann::json payload = nlohmann::json::object();

  bool operator==(const EventRecord&) const = default;
};

/// Throws std::invalid_argument when payload keys do not match the kind.
void check_payload(const EventRecord& rec);

std::string iso8601_ms(std::int64_t at_ms);

/// `ISO8601Z | uuid | kind | peer | compact-JSON payload`
std::string format_log_line(const EventRecord& rec);

/// Database image helpers. Layout: 16-byte header ("DCYSHDB1", u32 LE schema
/// version, 4 zero bytes) then records of [u32 LE length][u32 LE CRC-32][JSON].
std::string encode_record(const EventRecord& rec);
std::string serialize_database(const std::vector<EventRecord>& records);
/// Strict: any malformed byte throws CorruptDatabase.
std::vector<EventRecord> parse_database(std::string_view bytes);

struct ScanResult {
  std::vector<EventRecord> records;
  std::vector<std::uint64_t> offsets;
  std::uint64_t valid_bytes = 0;  // prefix that holds only whole, verified records
};

/// Tolerant: stops at the first record that is short or fails its checksum.
ScanResult scan_database(std::string_view bytes);

enum class AppendStatus { ok, storage_full, io_error, closed };

struct StoreOptions {
  std::filesystem::path dir;
  std::size_t max_log_bytes = 10 * 1024 * 1024;
  std::size_t max_archives = 10;
  bool fsync = true;
  std::size_t queue_capacity = 4096;
  /// Where storage failures are reported; stderr when empty.
  std::function<void(const std::string&)> on_error;
};

/// Owns honeypot_sessions.db and honeypot.log in one directory. Every append
/// is handed to a single writer thread through a bounded queue; append
/// returns once the record is on disk (fdatasync'd when fsync is set).
class LogStore {
 public:
  explicit LogStore(StoreOptions options);
  ~LogStore();
  LogStore(const LogStore&) = delete;
  LogStore& operator=(const LogStore&) = delete;

  /// Never throws; failures are reported through on_error and the status.
  /// `at_ms` is raised to the session's previous timestamp if it would go
  /// backwards.
  AppendStatus append(EventRecord rec);

  /// Records for uuid in append order (which is also `at` order).
  std::vector<EventRecord> query_session(const std::string& uuid) const;
  std::vector<std::string> sessions() const;
  std::size_t record_count() const;

  /// Rotates the text log when it exceeds max_bytes.
  void rotate(std::size_t max_bytes);

  /// Bytes cut from a torn tail when the database was opened.
  std::uint64_t recovered_bytes() const { return recovered_bytes_; }

  std::filesystem::path database_path() const { return options_.dir / kDatabaseName; }
  std::filesystem::path log_path() const { return options_.dir / kLogName; }

 private:
  struct Job {
    std::optional<EventRecord> record;
    std::size_t rotate_threshold = 0;
    std::uint64_t ticket = 0;
  };

  void writer_loop();
  void write_batch(std::vector<Job>& batch);
  void maybe_rotate(std::size_t max_bytes);
  void open_log();
  void report(const std::string& message);
  AppendStatus submit(Job job);

  StoreOptions options_;
  int db_fd_ = -1;
  int log_fd_ = -1;
  std::uint64_t db_size_ = 0;
  std::uint64_t log_size_ = 0;
  std::uint64_t recovered_bytes_ = 0;

  mutable std::mutex mu_;
  std::condition_variable queue_cv_;    // writer waits for work
  std::condition_variable space_cv_;    // submitters wait for room
  std::condition_variable done_cv_;     // submitters wait for their ticket
  std::deque<Job> queue_;
  std::uint64_t next_ticket_ = 1;
  std::uint64_t completed_ticket_ = 0;
  std::map<std::uint64_t, AppendStatus> failures_;
  bool stopping_ = false;

  std::map<std::string, std::vector<std::uint64_t>> index_;  // uuid -> record offsets
  std::map<std::string, std::int64_t> last_at_;
  std::size_t records_ = 0;

  std::thread writer_;
};

}  // namespace decoysh::logstore
