#include "decoysh/llm/backend.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

extern char** environ;

namespace decoysh::llm {

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

std::int64_t ms_since(Clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0).count();
}

struct Endpoint {
  std::string base;    // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) return {url, ""};
  const auto slash = url.find('/', scheme_end + 3);
  Endpoint ep{url.substr(0, slash), slash == std::string::npos ? "" : url.substr(slash)};
  while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  return ep;
}

std::optional<std::string> api_key(const BackendSpec& spec) {
  if (spec.api_key_env.empty()) return std::nullopt;
  const char* v = std::getenv(spec.api_key_env.c_str());
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

struct Request {
  std::string path;
  std::string body;
  httplib::Headers headers;
};

Request make_request(const BackendSpec& spec, const PromptBundle& prompt, const std::string& key) {
  const Endpoint ep = split_endpoint(spec.endpoint);
  Request req;
  if (spec.provider == Provider::local_server) {
    json body{{"model", spec.model_id},
              {"system", prompt.system},
              {"prompt", prompt.user_text()},
              {"stream", false}};
    json options = json::object();
    if (spec.temperature) options["temperature"] = *spec.temperature;
    if (spec.max_tokens) options["num_predict"] = *spec.max_tokens;
    if (!options.empty()) body["options"] = options;
    req.path = ep.prefix + "/api/generate";
    req.body = body.dump();
  } else {
    json body{{"systemInstruction", {{"parts", json::array({{{"text", prompt.system}}})}}},
              {"contents", json::array({{{"role", "user"},
                                         {"parts", json::array({{{"text", prompt.user_text()}}})}}})}};
    json config = json::object();
    if (spec.temperature) config["temperature"] = *spec.temperature;
    if (spec.max_tokens) config["maxOutputTokens"] = *spec.max_tokens;
    if (!config.empty()) body["generationConfig"] = config;
    req.path = ep.prefix + "/v1beta/models/" + spec.model_id + ":generateContent";
    req.body = body.dump();
    req.headers.emplace("x-goog-api-key", key);
  }
  return req;
}

std::string provider_message(const std::string& body) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_object() && j.contains("error")) {
    const json& e = j["error"];
    if (e.is_string()) return e.get<std::string>();
    if (e.is_object() && e.contains("message") && e["message"].is_string()) {
      return e["message"].get<std::string>();
    }
  }
  return body.substr(0, 200);
}

// nullopt when the body is not a completion of the provider's shape.
std::optional<std::string> completion_text(const BackendSpec& spec, const std::string& body) {
  const json j = json::parse(body, nullptr, false);
  if (!j.is_object()) return std::nullopt;
  if (spec.provider == Provider::local_server) {
    if (!j.contains("response") || !j["response"].is_string()) return std::nullopt;
    return j["response"].get<std::string>();
  }
  if (!j.contains("candidates") || !j["candidates"].is_array() || j["candidates"].empty()) {
    return std::nullopt;
  }
  const json& cand = j["candidates"][0];
  if (!cand.contains("content") || !cand["content"].contains("parts")) return std::string();
  std::string text;
  for (const json& part : cand["content"]["parts"]) {
    if (part.contains("text") && part["text"].is_string()) text += part["text"].get<std::string>();
  }
  return text;
}

struct Call {
  std::mutex mu;
  std::condition_variable cv;
  bool done = false;
  httplib::Error error = httplib::Error::Success;
  int status = 0;
  std::string body;
};

struct Reply {
  int status;
  std::string body;
};

void set_timeout(httplib::Client& client, Clock::duration d) {
  const auto us = std::chrono::duration_cast<std::chrono::microseconds>(d).count();
  const time_t sec = static_cast<time_t>(us / 1000000);
  const time_t usec = static_cast<time_t>(us % 1000000);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
}

// The request runs on its own thread so the deadline holds even when the
// server trickles bytes; a late thread is abandoned and finishes on its own.
Reply attempt(const BackendSpec& spec, const Request& req, Clock::time_point deadline,
              Clock::time_point start) {
  if (Clock::now() >= deadline) {
    throw TimeoutError("no reply within " + std::to_string(spec.timeout_s) + " s", ms_since(start));
  }
  auto client = std::make_shared<httplib::Client>(split_endpoint(spec.endpoint).base);
  // httplib's own limits trail ours so the deadline below always fires first
  set_timeout(*client, deadline - Clock::now() + std::chrono::seconds(1));
  client->set_keep_alive(false);
  auto call = std::make_shared<Call>();
  std::thread([client, call, req] {
    auto res = client->Post(req.path, req.headers, req.body, "application/json");
    std::lock_guard<std::mutex> lock(call->mu);
    call->error = res.error();
    if (res) {
      call->status = res->status;
      call->body = std::move(res->body);
    }
    call->done = true;
    call->cv.notify_all();
  }).detach();

  std::unique_lock<std::mutex> lock(call->mu);
  if (!call->cv.wait_until(lock, deadline, [&] { return call->done; })) {
    lock.unlock();
    client->stop();
    throw TimeoutError("no reply within " + std::to_string(spec.timeout_s) + " s", ms_since(start));
  }
  if (call->error != httplib::Error::Success) {
    throw TransportError(spec.endpoint + ": " + httplib::to_string(call->error), ms_since(start));
  }
  return {call->status, std::move(call->body)};
}

Generation run_generate(const BackendSpec& spec, const PromptBundle& prompt, double timeout_s,
                        FifoLimiter* limiter) {
  const auto start = Clock::now();
  const auto deadline =
      start + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(timeout_s));
  BackendSpec bounded = spec;
  bounded.timeout_s = timeout_s;

  if (limiter && !limiter->acquire(deadline)) {
    throw TimeoutError("no free backend slot within " + std::to_string(timeout_s) + " s",
                       ms_since(start));
  }
  struct Release {
    FifoLimiter* l;
    ~Release() {
      if (l) l->release();
    }
  } release{limiter};

  std::string key;
  if (spec.provider == Provider::cloud_api) {
    auto k = api_key(spec);
    if (!k) {
      throw ApiError("environment variable " + spec.api_key_env + " is not set", 0, ms_since(start));
    }
    key = std::move(*k);
  }
  const Request req = make_request(spec, prompt, key);
  const auto request_start = Clock::now();
  try {
    Reply reply = [&] {
      try {
        return attempt(bounded, req, deadline, start);
      } catch (const TransportError&) {
        if (Clock::now() >= deadline) throw;
        return attempt(bounded, req, deadline, start);
      }
    }();
    const std::int64_t latency = ms_since(request_start);
    if (reply.status < 200 || reply.status >= 300) {
      throw ApiError("HTTP " + std::to_string(reply.status) + ": " + provider_message(reply.body),
                     reply.status, ms_since(start));
    }
    auto text = completion_text(spec, reply.body);
    if (!text) {
      throw ApiError("malformed completion: " + reply.body.substr(0, 200), reply.status,
                     ms_since(start));
    }
    return {truncate_utf8(*text, spec.max_output_chars), latency};
  } catch (const TimeoutError& e) {
    throw TimeoutError(scrub_secret(spec, e.what()), e.elapsed_ms());
  } catch (const TransportError& e) {
    throw TransportError(scrub_secret(spec, e.what()), e.elapsed_ms());
  } catch (const ApiError& e) {
    throw ApiError(scrub_secret(spec, e.what()), e.status(), e.elapsed_ms());
  }
}

const PromptBundle& probe_prompt() {
  static const PromptBundle p{"Reply with the single word ok.", "", "echo ok", "{command}"};
  return p;
}

bool probe(const BackendSpec& spec, FifoLimiter* limiter, std::string* reason) {
  auto fail = [&](const std::string& why) {
    if (reason) *reason = scrub_secret(spec, why);
    return false;
  };
  try {
    if (spec.provider == Provider::cloud_api && !api_key(spec)) {
      return fail("environment variable " + spec.api_key_env + " is not set");
    }
    run_generate(spec, probe_prompt(), spec.availability_timeout_s, limiter);
    if (reason) reason->clear();
    return true;
  } catch (const std::exception& e) {
    return fail(e.what());
  } catch (...) {
    return fail("unknown error");
  }
}

// Exit status of the hook, or nullopt if it could not start or ran too long.
std::optional<int> run_hook(const std::string& command, std::chrono::milliseconds cap,
                            std::string* reason) {
  posix_spawn_file_actions_t actions;
  posix_spawnattr_t attr;
  posix_spawn_file_actions_init(&actions);
  posix_spawnattr_init(&attr);
  for (int fd = 0; fd <= 2; ++fd) {
    posix_spawn_file_actions_addopen(&actions, fd, "/dev/null", fd == 0 ? O_RDONLY : O_WRONLY, 0);
  }
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
  posix_spawnattr_setpgroup(&attr, 0);
  const char* argv[] = {"/bin/sh", "-c", command.c_str(), nullptr};
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, "/bin/sh", &actions, &attr, const_cast<char* const*>(argv), environ);
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  if (rc != 0) {
    if (reason) *reason = std::string("cannot start reset hook: ") + std::strerror(rc);
    return std::nullopt;
  }
  const auto deadline = Clock::now() + cap;
  int status = 0;
  while (true) {
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0 && errno != EINTR) {
      if (reason) *reason = "lost track of reset hook";
      return std::nullopt;
    }
    if (Clock::now() >= deadline) {
      ::kill(-pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      if (reason) *reason = "reset hook exceeded its time cap";
      return std::nullopt;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

bool reset_with(const BackendSpec& spec, std::chrono::milliseconds cap, FifoLimiter* limiter,
                std::string* reason) {
  if (spec.provider == Provider::cloud_api) return true;
  if (!spec.reset_hook.empty()) {
    const auto code = run_hook(spec.reset_hook, cap, reason);
    if (!code) return false;
    if (*code != 0) {
      if (reason) *reason = "reset hook exited with status " + std::to_string(*code);
      return false;
    }
  }
  return probe(spec, limiter, reason);
}

}  // namespace

std::string scrub_secret(const BackendSpec& spec, std::string text) {
  const auto key = api_key(spec);
  if (!key) return text;
  for (auto pos = text.find(*key); pos != std::string::npos; pos = text.find(*key, pos)) {
    text.replace(pos, key->size(), "[redacted]");
    pos += 10;
  }
  return text;
}

Generation generate(const BackendSpec& spec, const PromptBundle& prompt) {
  return run_generate(spec, prompt, spec.timeout_s, nullptr);
}

bool check_available(const BackendSpec& spec, std::string* reason) {
  return probe(spec, nullptr, reason);
}

bool reset_backend(const BackendSpec& spec, std::chrono::milliseconds hook_cap, std::string* reason) {
  return reset_with(spec, hook_cap, nullptr, reason);
}

FifoLimiter::FifoLimiter(std::size_t max_in_flight) : max_(std::max<std::size_t>(1, max_in_flight)) {}

bool FifoLimiter::acquire(std::chrono::steady_clock::time_point deadline) {
  std::unique_lock<std::mutex> lock(mu_);
  const std::uint64_t me = next_++;
  waiting_.push_back(me);
  const bool ok =
      cv_.wait_until(lock, deadline, [&] { return waiting_.front() == me && in_flight_ < max_; });
  if (!ok) {
    waiting_.remove(me);
    cv_.notify_all();
    return false;
  }
  waiting_.pop_front();
  ++in_flight_;
  cv_.notify_all();
  return true;
}

void FifoLimiter::release() {
  std::lock_guard<std::mutex> lock(mu_);
  --in_flight_;
  cv_.notify_all();
}

std::size_t FifoLimiter::in_flight() const {
  std::lock_guard<std::mutex> lock(mu_);
  return in_flight_;
}

HttpBackend::HttpBackend(BackendSpec spec) : spec_(std::move(spec)), limiter_(spec_.max_in_flight) {}

Generation HttpBackend::generate(const PromptBundle& prompt) {
  return run_generate(spec_, prompt, spec_.timeout_s, &limiter_);
}

bool HttpBackend::check_available(std::string* reason) { return probe(spec_, &limiter_, reason); }

bool HttpBackend::reset(std::string* reason) {
  return reset_with(spec_, std::chrono::seconds(60), &limiter_, reason);
}

std::map<std::string, std::string> HttpBackend::describe() const {
  std::ostringstream timeout;
  timeout << spec_.timeout_s;
  std::map<std::string, std::string> d{
      {"provider", std::string(to_string(spec_.provider))},
      {"endpoint", spec_.endpoint},
      {"model", spec_.model_id},
      {"timeout_s", timeout.str()},
      {"max_output_chars", std::to_string(spec_.max_output_chars)},
      {"temperature", "provider default"},
      {"max_tokens", "provider default"},
  };
  if (spec_.temperature) {
    std::ostringstream t;
    t << *spec_.temperature;
    d["temperature"] = t.str();
  }
  if (spec_.max_tokens) d["max_tokens"] = std::to_string(*spec_.max_tokens);
  return d;
}

ReplayBackend::ReplayBackend(std::string id, std::map<std::string, std::string> responses,
                             std::chrono::milliseconds delay)
    : id_(std::move(id)), responses_(std::move(responses)), delay_(delay) {}

Generation ReplayBackend::generate(const PromptBundle& prompt) {
  const auto start = Clock::now();
  {
    std::lock_guard<std::mutex> lock(mu_);
    ++calls_;
  }
  if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
  auto it = responses_.find(prompt.command);
  if (it == responses_.end()) {
    throw ApiError("no canned response for this command", 404, ms_since(start));
  }
  return {it->second, ms_since(start)};
}

bool ReplayBackend::check_available(std::string* reason) {
  if (reason) reason->clear();
  return true;
}

std::map<std::string, std::string> ReplayBackend::describe() const {
  return {{"provider", "replay"},
          {"model", id_},
          {"responses", std::to_string(responses_.size())},
          {"delay_ms", std::to_string(delay_.count())}};
}

std::size_t ReplayBackend::calls() const {
  std::lock_guard<std::mutex> lock(mu_);
  return calls_;
}

std::map<std::string, std::string> load_replay_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read replay file: " + path.string());
  const json j = json::parse(in, nullptr, false);
  if (!j.is_object()) throw std::runtime_error(path.string() + ": expected a JSON object");
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw std::runtime_error(path.string() + ": value for \"" + k + "\" is not a string");
    out.emplace(k, v.get<std::string>());
  }
  return out;
}

}  // namespace decoysh::llm
