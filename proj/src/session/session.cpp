#include "decoysh/session/session.hpp"

#include <condition_variable>
#include <mutex>
#include <random>
#include <thread>
#include <unordered_set>

#include "decoysh/metrics/hallucination.hpp"
#include "decoysh/shell/builtins.hpp"
#include "decoysh/shell/command.hpp"
#include "decoysh/shell/seed_image.hpp"

namespace decoysh::session {

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

std::int64_t ms_since(Clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0).count();
}

std::int64_t system_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool blank(std::string_view line) {
  return line.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

std::string with_newline(std::string text) {
  if (!text.empty() && text.back() != '\n') text.push_back('\n');
  return text;
}

// What an interactive bash prints when input ends inside a quote.
std::string unterminated_quote_error(char quote) {
  return std::string("bash: unexpected EOF while looking for matching `") + quote +
         "'\nbash: syntax error: unexpected end of file\n";
}

struct Pending {
  std::mutex mu;
  std::condition_variable cv;
  bool done = false;
  llm::Generation generation;
  std::exception_ptr error;
};

}  // namespace

std::string_view to_string(Tier tier) {
  switch (tier) {
    case Tier::cache: return "cache";
    case Tier::builtin: return "builtin";
    case Tier::llm: return "llm";
    case Tier::llm_error_fallback: return "llm_error_fallback";
  }
  return "unknown";
}

std::string_view to_string(Failure failure) {
  switch (failure) {
    case Failure::none: return "none";
    case Failure::timeout: return "timeout";
    case Failure::transport: return "transport";
    case Failure::api: return "api";
    case Failure::budget: return "budget";
    case Failure::deadline: return "deadline";
    case Failure::sanitized: return "sanitized";
    case Failure::no_backend: return "no_backend";
  }
  return "unknown";
}

std::string_view to_string(CloseReason reason) {
  switch (reason) {
    case CloseReason::exit_command: return "exit_command";
    case CloseReason::channel_closed: return "channel_closed";
    case CloseReason::error: return "error";
  }
  return "unknown";
}

std::string fallback_error(std::string_view command) {
  std::string_view program = metrics::program_name(command);
  if (program.empty()) program = command;
  return "bash: " + std::string(program) + ": command not found";
}

Sanitized sanitize_output(std::string_view command, std::string_view raw) {
  if (metrics::scan_output(command, raw).any()) return {fallback_error(command), true};
  return {metrics::strip_fences(raw), false};
}

std::string new_uuid() {
  static std::mutex mu;
  static std::mt19937_64 rng = [] {
    std::random_device rd;
    std::seed_seq seq{rd(), rd(), rd(), rd(), rd(), rd(), rd(), rd()};
    return std::mt19937_64(seq);
  }();
  static std::unordered_set<std::string> issued;

  std::lock_guard<std::mutex> lock(mu);
  while (true) {
    std::uint64_t hi = rng();
    std::uint64_t lo = rng();
    hi = (hi & 0xFFFFFFFFFFFF0FFFULL) | 0x0000000000004000ULL;  // version 4
    lo = (lo & 0x3FFFFFFFFFFFFFFFULL) | 0x8000000000000000ULL;  // RFC 4122 variant
    char buf[37];
    std::snprintf(buf, sizeof buf, "%08x-%04x-%04x-%04x-%012llx",
                  static_cast<unsigned>(hi >> 32), static_cast<unsigned>((hi >> 16) & 0xFFFF),
                  static_cast<unsigned>(hi & 0xFFFF), static_cast<unsigned>(lo >> 48),
                  static_cast<unsigned long long>(lo & 0xFFFFFFFFFFFFULL));
    if (issued.insert(buf).second) return buf;
  }
}

std::string render_prompt(std::string_view tmpl, const shell::VfsState& state) {
  const std::string home = shell::home_directory(state.user);
  std::string cwd = state.cwd;
  if (home != "/" && cwd == home) {
    cwd = "~";
  } else if (home != "/" && cwd.rfind(home + "/", 0) == 0) {
    cwd = "~" + cwd.substr(home.size());
  }
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    auto take = [&](std::string_view key, const std::string& value) {
      if (tmpl.substr(i, key.size()) != key) return false;
      out += value;
      i += key.size();
      return true;
    };
    if (take("{user}", state.user) || take("{host}", state.hostname) || take("{cwd}", cwd)) continue;
    out.push_back(tmpl[i++]);
  }
  return out;
}

Session::Session(std::shared_ptr<const EngineContext> ctx, std::string username, logstore::Peer peer,
                 bool tty, std::string uuid)
    : ctx_(std::move(ctx)),
      uuid_(uuid.empty() ? new_uuid() : std::move(uuid)),
      username_(std::move(username)),
      peer_(std::move(peer)),
      started_(Clock::now()) {
  std::function<std::int64_t()> clock = ctx_->vfs_clock;
  if (!clock) {
    clock = [] { return system_ms() / 1000; };
  }
  state_ = shell::make_state(ctx_->seed ? *ctx_->seed : shell::default_seed_image(), username_,
                             ctx_->hostname, clock);
  state_.tty = tty;
  started_at_ms_ = wall_ms();
  log(logstore::EventKind::session_open, json{{"username", username_}});
}

Session::~Session() {
  try {
    close(CloseReason::channel_closed);
  } catch (...) {
  }
}

std::int64_t Session::wall_ms() const { return ctx_->wall_ms ? ctx_->wall_ms() : system_ms(); }

void Session::log(logstore::EventKind kind, json payload) {
  if (!ctx_->store) return;
  ctx_->store->append({uuid_, wall_ms(), kind, peer_, std::move(payload)});
}

std::optional<RouteOutcome> Session::handle_line(std::string_view line) {
  if (closed_ || blank(line)) return std::nullopt;
  std::string text(line);
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();

  const std::size_t seq = ++command_count_;
  state_.history.push_back(text);
  log(logstore::EventKind::command, json{{"seq", seq}, {"command", text}});

  const auto start = Clock::now();
  RouteOutcome out = route(text);
  out.latency_ms = ms_since(start);
  if (out.end_session && state_.tty) out.output += "logout\n";

  log(logstore::EventKind::response,
      json{{"seq", seq},
           {"tier", to_string(out.tier)},
           {"output", out.output},
           {"exit_code", out.exit_code},
           {"latency_ms", out.latency_ms},
           {"flagged", out.hallucination_flagged},
           {"error", out.error.empty() ? json(nullptr) : json(out.error)}});
  return out;
}

RouteOutcome Session::route(const std::string& line) {
  if (ctx_->use_cache && ctx_->cache) {
    if (auto hit = shell::lookup_cache(*ctx_->cache, state_, line)) {
      if (ctx_->counters) ++ctx_->counters->cache;
      state_.last_exit_code = 0;
      RouteOutcome out;
      out.tier = Tier::cache;
      out.output = std::move(*hit);
      return out;
    }
  }
  if (ctx_->use_builtins) {
    try {
      const shell::ParsedCommand cmd =
          shell::parse_command_line(line, &state_.env, state_.last_exit_code);
      if (auto r = shell::execute_builtin(state_, cmd)) {
        if (ctx_->counters) ++ctx_->counters->builtin;
        RouteOutcome out;
        out.tier = Tier::builtin;
        out.output = std::move(r->output);
        out.exit_code = r->exit_code;
        out.end_session = r->end_session;
        return out;
      }
    } catch (const shell::UnterminatedQuote& e) {
      if (ctx_->counters) ++ctx_->counters->builtin;
      state_.last_exit_code = 2;
      RouteOutcome out;
      out.tier = Tier::builtin;
      out.output = unterminated_quote_error(e.quote());
      out.exit_code = 2;
      return out;
    } catch (const shell::CommandSyntaxError&) {
      // grammar the parser rejects is left to the model
    }
  }
  return ask_model(line);
}

RouteOutcome Session::ask_model(const std::string& line) {
  if (ctx_->counters) ++ctx_->counters->llm;
  RouteOutcome out;
  auto fail = [&](Failure kind, std::string error) {
    out.tier = Tier::llm_error_fallback;
    out.output = with_newline(fallback_error(line));
    out.exit_code = 127;
    out.failure = kind;
    out.error = std::move(error);
    state_.last_exit_code = 127;
    return out;
  };
  if (!ctx_->backend || !ctx_->prompt_template) return fail(Failure::no_backend, "no backend");

  llm::PromptBundle bundle;
  try {
    bundle = llm::build_prompt(shell::state_summary(state_, ctx_->digest_chars), line,
                               *ctx_->prompt_template, ctx_->prompt_budget);
  } catch (const std::exception& e) {
    return fail(Failure::budget, e.what());
  }

  // The call runs detached so a wedged backend cannot hold the session past
  // its deadline; the late result is simply dropped.
  auto pending = std::make_shared<Pending>();
  std::thread([backend = ctx_->backend, bundle, pending] {
    llm::Generation g;
    std::exception_ptr error;
    try {
      g = backend->generate(bundle);
    } catch (...) {
      error = std::current_exception();
    }
    std::lock_guard<std::mutex> lock(pending->mu);
    pending->generation = std::move(g);
    pending->error = error;
    pending->done = true;
    pending->cv.notify_all();
  }).detach();

  const auto limit = std::chrono::duration_cast<Clock::duration>(
                         std::chrono::duration<double>(ctx_->backend->timeout_s())) +
                     ctx_->deadline_slack;
  std::unique_lock<std::mutex> lock(pending->mu);
  if (!pending->cv.wait_for(lock, limit, [&] { return pending->done; })) {
    return fail(Failure::deadline, "no answer before the line deadline");
  }
  if (pending->error) {
    try {
      std::rethrow_exception(pending->error);
    } catch (const llm::TimeoutError& e) {
      return fail(Failure::timeout, e.what());
    } catch (const llm::TransportError& e) {
      return fail(Failure::transport, e.what());
    } catch (const std::exception& e) {
      return fail(Failure::api, e.what());
    } catch (...) {
      return fail(Failure::api, "unknown backend failure");
    }
  }

  out.raw = std::move(pending->generation.text);
  const Sanitized s = sanitize_output(line, out.raw);
  out.tier = Tier::llm;
  out.hallucination_flagged = s.flagged;
  out.output = with_newline(s.clean);
  out.exit_code = s.flagged ? 127 : 0;
  if (s.flagged) out.failure = Failure::sanitized;
  state_.last_exit_code = out.exit_code;
  return out;
}

std::string Session::render_prompt() const {
  return session::render_prompt(ctx_->shell_prompt, state_);
}

SessionRecord Session::close(CloseReason reason) {
  if (closed_) return *closed_;
  SessionRecord rec{uuid_, reason, ms_since(started_), command_count_, state_.cwd};
  log(logstore::EventKind::session_close,
      json{{"reason", to_string(reason)},
           {"duration_ms", rec.duration_ms},
           {"command_count", rec.command_count},
           {"final_cwd", rec.final_cwd}});
  closed_ = rec;
  return rec;
}

}  // namespace decoysh::session
