#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "decoysh/llm/backend.hpp"
#include "decoysh/llm/prompt.hpp"
#include "decoysh/logstore/logstore.hpp"
#include "decoysh/shell/cache.hpp"
#include "decoysh/shell/vfs.hpp"

namespace decoysh::session {

enum class Tier { cache, builtin, llm, llm_error_fallback };
std::string_view to_string(Tier tier);

/// Why the model tier produced no usable text.
enum class Failure { none, timeout, transport, api, budget, deadline, sanitized, no_backend };
std::string_view to_string(Failure failure);

struct RouteOutcome {
  Tier tier = Tier::builtin;
  std::string output;  // written to the channel as is, "\n" line endings
  std::int64_t latency_ms = 0;
  bool hallucination_flagged = false;
  int exit_code = 0;
  bool end_session = false;
  std::string raw;  // unsanitized model text, llm tiers only
  Failure failure = Failure::none;
  std::string error;  // backend error text for the log, never shown
};

struct Sanitized {
  std::string clean;
  bool flagged = false;
};

/// Strips code fences and blank edge lines. When any break rule fires (the
/// command echoed back by a non echo-family program, a role-break phrase, a
/// surviving fence) the text is replaced by fallback_error(command).
Sanitized sanitize_output(std::string_view command, std::string_view raw);

/// "bash: <program>: command not found"
std::string fallback_error(std::string_view command);

enum class CloseReason { exit_command, channel_closed, error };
std::string_view to_string(CloseReason reason);

struct SessionRecord {
  std::string uuid;
  CloseReason reason = CloseReason::channel_closed;
  std::int64_t duration_ms = 0;
  std::size_t command_count = 0;
  std::string final_cwd;
  bool operator==(const SessionRecord&) const = default;
};

/// Tier usage, bumped once per routed line.
struct TierCounters {
  std::atomic<std::uint64_t> cache{0};
  std::atomic<std::uint64_t> builtin{0};
  std::atomic<std::uint64_t> llm{0};
};

/// Shared by every session of a daemon or a harness run. Pointers that are
/// null switch the corresponding tier or sink off.
struct EngineContext {
  std::shared_ptr<const shell::DictionaryCache> cache;
  std::shared_ptr<const shell::VfsNode> seed;
  std::shared_ptr<llm::Backend> backend;
  std::shared_ptr<const llm::PromptTemplate> prompt_template;
  logstore::LogStore* store = nullptr;
  std::string hostname = "svr04";
  std::string shell_prompt = "{user}@{host}:{cwd}$ ";
  bool use_cache = true;
  bool use_builtins = true;
  std::size_t prompt_budget = 8000;
  std::size_t digest_chars = 1500;
  /// Slack on top of the backend timeout before a line gives up on the model.
  std::chrono::milliseconds deadline_slack{2000};
  std::function<std::int64_t()> wall_ms;    // log timestamps; system clock when empty
  std::function<std::int64_t()> vfs_clock;  // file mtimes in seconds; system clock when empty
  TierCounters* counters = nullptr;
};

/// Fresh RFC 4122 version 4 id, unique for the life of the process.
std::string new_uuid();

/// One login shell. Lines are handled one at a time; the object is not meant
/// to be shared between threads.
class Session {
 public:
  /// An empty uuid draws a fresh one; the SSH gateway passes the id it
  /// already used for the connection's auth records.
  Session(std::shared_ptr<const EngineContext> ctx, std::string username, logstore::Peer peer,
          bool tty = true, std::string uuid = {});
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  /// nullopt for a blank line: re-prompt, nothing logged. Every other line is
  /// logged as a command event before it runs and a response event after.
  std::optional<RouteOutcome> handle_line(std::string_view line);

  std::string render_prompt() const;

  /// Idempotent; the first call writes the session_close event.
  SessionRecord close(CloseReason reason);

  const std::string& uuid() const { return uuid_; }
  const std::string& username() const { return username_; }
  const logstore::Peer& peer() const { return peer_; }
  std::size_t command_count() const { return command_count_; }
  bool closed() const { return closed_.has_value(); }
  const shell::VfsState& state() const { return state_; }
  std::int64_t started_at_ms() const { return started_at_ms_; }

 private:
  RouteOutcome route(const std::string& line);
  RouteOutcome ask_model(const std::string& line);
  void log(logstore::EventKind kind, nlohmann::json payload);
  std::int64_t wall_ms() const;

  std::shared_ptr<const EngineContext> ctx_;
  std::string uuid_;
  std::string username_;
  logstore::Peer peer_;
  shell::VfsState state_;
  std::int64_t started_at_ms_;
  std::chrono::steady_clock::time_point started_;
  std::size_t command_count_ = 0;
  std::optional<SessionRecord> closed_;
};

/// Abbreviates the user's home to "~" and fills {user} {host} {cwd} in one
/// pass, so braces inside a directory name are printed literally.
std::string render_prompt(std::string_view tmpl, const shell::VfsState& state);

}  // namespace decoysh::session
