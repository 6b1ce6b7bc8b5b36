#include "decoysh/ssh/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <deque>
#include <iostream>

#include "decoysh/ssh/line_editor.hpp"
#include "decoysh/ssh/transport.hpp"
#include "decoysh/ssh/wire.hpp"

namespace decoysh::ssh {

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::uint32_t kLocalWindow = 2 * 1024 * 1024;
constexpr std::uint32_t kWindowAdjustAt = 1024 * 1024;
constexpr std::uint32_t kLocalMaxPacket = 32768;
constexpr std::size_t kMaxChannels = 4;

constexpr std::uint32_t kOpenProhibited = 1;
constexpr std::uint32_t kOpenResourceShortage = 4;

std::string to_crlf(std::string_view text) {
  std::string out;
  out.reserve(text.size() + text.size() / 16);
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\n' && (i == 0 || text[i - 1] != '\r')) out += '\r';
    out += text[i];
  }
  return out;
}

std::int64_t system_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

class Connection {
 public:
  Connection(Gateway& gw, int fd, logstore::Peer peer)
      : gw_(gw),
        peer_(std::move(peer)),
        uuid_(session::new_uuid()),
        transport_(fd, TransportOptions{gw.cfg_.banner, gw.host_key_}, &gw.stopping_) {}

  void run() {
    try {
      const auto deadline =
          Clock::now() + std::chrono::milliseconds(static_cast<std::int64_t>(gw_.cfg_.auth_timeout_s * 1000));
      transport_.handshake(deadline);
      if (!accept_service(deadline)) return finish("service request refused");
      if (!authenticate(deadline)) return finish({});
      serve_channels();
    } catch (const DeadlineExpired&) {
      transport_.disconnect(disconnect_reason::by_application, "Authentication timeout");
      return finish("authentication timeout");
    } catch (const PeerClosed& e) {
      return finish(e.what());
    } catch (const std::exception& e) {
      gw_.diag("connection " + logstore::format_peer(peer_) + ": " + e.what());
      transport_.disconnect(disconnect_reason::protocol_error, "Protocol error");
      return finish(std::string("handshake failed: ") + e.what());
    }
    finish({});
  }

 private:
  struct Channel {
    std::uint32_t local_id = 0;
    std::uint32_t remote_id = 0;
    std::uint32_t remote_window = 0;
    std::uint32_t remote_max_packet = 0;
    std::uint32_t consumed = 0;
    bool pty = false;
    bool started = false;    // shell or exec accepted
    bool peer_closed = false;
    bool close_sent = false;
    std::unique_ptr<session::Session> session;
    std::unique_ptr<LineEditor> editor;
  };

  // Sessions are closed here; the channel map going out of scope covers the
  // connection dropping with channels still open.
  void finish(const std::string& why) {
    for (auto& [id, ch] : channels_) {
      if (ch.session) ch.session->close(session::CloseReason::channel_closed);
    }
    if (!auth_logged_) {
      std::string reason = why.empty() ? "disconnected before authentication" : why;
      if (offered_methods_) reason = std::string(kReasonNoPassword);
      gw_.log_auth(uuid_, peer_, "", "", "none", false, reason);
      std::lock_guard lk(gw_.mu_);
      ++gw_.stats_.handshake_failures;
    }
  }

  bool accept_service(Clock::time_point deadline) {
    while (true) {
      const std::string m = transport_.read_message(deadline);
      Reader r(m);
      const auto type = r.byte();
      if (type != msg::service_request) {
        reply_unimplemented();
        continue;
      }
      if (r.string() != "ssh-userauth") {
        transport_.disconnect(disconnect_reason::service_not_available, "Service not available");
        return false;
      }
      transport_.send(Writer().byte(msg::service_accept).string("ssh-userauth").take());
      return true;
    }
  }

  void auth_failure() {
    transport_.send(Writer().byte(msg::userauth_failure).name_list({"password"}).boolean(false).take());
  }

  bool authenticate(Clock::time_point deadline) {
    std::size_t failures = 0;
    while (true) {
      const std::string m = transport_.read_message(deadline);
      Reader r(m);
      if (r.byte() != msg::userauth_request) {
        reply_unimplemented();
        continue;
      }
      const std::string user = r.string();
      const std::string service = r.string();
      const std::string method = r.string();
      if (method == "none") {
        offered_methods_ = true;
        auth_failure();
        continue;
      }
      if (method != "password") {
        gw_.log_auth(uuid_, peer_, user, "", method, false, std::string(kReasonMethodNotOffered));
        auth_logged_ = true;
        auth_failure();
        continue;
      }
      r.boolean();  // password change request; the old password is what we log
      const std::string password = r.string();
      const bool ok = service == "ssh-connection" && validate_credentials(gw_.cfg_, user, password);
      gw_.log_auth(uuid_, peer_, user, password, "password", ok, ok ? "accepted" : "invalid credentials");
      auth_logged_ = true;
      {
        std::lock_guard lk(gw_.mu_);
        ++(ok ? gw_.stats_.auth_success : gw_.stats_.auth_failure);
      }
      if (ok) {
        username_ = user;
        transport_.send(std::string(1, static_cast<char>(msg::userauth_success)));
        return true;
      }
      if (++failures >= gw_.cfg_.max_auth_failures) {
        transport_.disconnect(disconnect_reason::no_more_auth_methods, "Too many authentication failures");
        return false;
      }
      auth_failure();
    }
  }

  void reply_unimplemented() {
    transport_.send(Writer().byte(msg::unimplemented).u32(transport_.last_sequence()).take());
  }

  std::string next_message() {
    if (!deferred_.empty()) {
      std::string m = std::move(deferred_.front());
      deferred_.pop_front();
      return m;
    }
    return transport_.read_message();
  }

  void serve_channels() {
    while (true) dispatch(next_message());
  }

  Channel* find(std::uint32_t local_id) {
    auto it = channels_.find(local_id);
    return it == channels_.end() ? nullptr : &it->second;
  }

  void dispatch(const std::string& m) {
    Reader r(m);
    switch (r.byte()) {
      case msg::global_request: {
        r.string();
        if (r.boolean()) transport_.send(std::string(1, static_cast<char>(msg::request_failure)));
        return;
      }
      case msg::channel_open:
        return open_channel(r);
      case msg::channel_request:
        return channel_request(r);
      case msg::channel_data:
      case msg::channel_extended_data: {
        const auto type = static_cast<std::uint8_t>(m[0]);
        Channel* ch = find(r.u32());
        if (type == msg::channel_extended_data) r.u32();
        const std::string data = r.string();
        if (!ch) return;
        consume_window(*ch, data.size());
        if (type == msg::channel_data && ch->editor && !ch->close_sent) {
          ch->editor->push(data);
          process_input(*ch);
        }
        return;
      }
      case msg::channel_window_adjust: {
        Channel* ch = find(r.u32());
        const std::uint32_t add = r.u32();
        if (ch) ch->remote_window = static_cast<std::uint32_t>(std::min<std::uint64_t>(
                    std::uint64_t{ch->remote_window} + add, 0xFFFFFFFFu));
        return;
      }
      case msg::channel_eof: {
        Channel* ch = find(r.u32());
        if (!ch || ch->close_sent) return;
        if (ch->editor && ch->session) {
          if (auto last = ch->editor->flush()) {
            ch->editor->push(*last + (ch->pty ? "\r" : "\n"));
            process_input(*ch);
          }
        }
        if (!ch->close_sent) end_channel(*ch, 0, session::CloseReason::channel_closed);
        return;
      }
      case msg::channel_close: {
        const std::uint32_t id = r.u32();
        Channel* ch = find(id);
        if (!ch) return;
        if (ch->session) ch->session->close(session::CloseReason::channel_closed);
        if (!ch->close_sent) transport_.send(Writer().byte(msg::channel_close).u32(ch->remote_id).take());
        channels_.erase(id);
        return;
      }
      case msg::channel_success:
      case msg::channel_failure:
      case msg::request_success:
      case msg::request_failure:
      case msg::userauth_request:
        return;
      default:
        reply_unimplemented();
    }
  }

  void open_channel(Reader& r) {
    const std::string type = r.string();
    const std::uint32_t sender = r.u32();
    const std::uint32_t window = r.u32();
    const std::uint32_t max_packet = r.u32();
    auto refuse = [&](std::uint32_t code, const std::string& why) {
      gw_.diag("session " + uuid_ + ": refused channel '" + type + "': " + why);
      transport_.send(Writer()
                          .byte(msg::channel_open_failure)
                          .u32(sender)
                          .u32(code)
                          .string(why)
                          .string("")
                          .take());
    };
    if (type != "session") return refuse(kOpenProhibited, "unsupported channel type");
    if (channels_.size() >= kMaxChannels) return refuse(kOpenResourceShortage, "too many channels");
    Channel ch;
    ch.local_id = next_channel_++;
    ch.remote_id = sender;
    ch.remote_window = window;
    ch.remote_max_packet = std::max<std::uint32_t>(max_packet, 1);
    transport_.send(Writer()
                        .byte(msg::channel_open_confirmation)
                        .u32(sender)
                        .u32(ch.local_id)
                        .u32(kLocalWindow)
                        .u32(kLocalMaxPacket)
                        .take());
    channels_.emplace(ch.local_id, std::move(ch));
  }

  void reply(const Channel& ch, bool want_reply, bool ok) {
    if (!want_reply) return;
    transport_.send(Writer().byte(ok ? msg::channel_success : msg::channel_failure).u32(ch.remote_id).take());
  }

  std::unique_ptr<session::Session> new_session(bool tty) {
    // The first session carries the connection id so auth records join it.
    std::string id = sessions_started_++ == 0 ? uuid_ : std::string{};
    return std::make_unique<session::Session>(gw_.ctx_, username_, peer_, tty, std::move(id));
  }

  void channel_request(Reader& r) {
    Channel* ch = find(r.u32());
    const std::string type = r.string();
    const bool want_reply = r.boolean();
    if (!ch || ch->close_sent) return;

    if (type == "pty-req") {
      ch->pty = !ch->started;
      return reply(*ch, want_reply, ch->pty);
    }
    if (type == "window-change") return reply(*ch, want_reply, true);
    if (type == "subsystem") {
      const std::string name = r.string();
      gw_.diag("session " + uuid_ + ": refused subsystem '" + name + "'");
      return reply(*ch, want_reply, false);
    }
    if (type == "shell" && !ch->started) {
      ch->started = true;
      ch->session = new_session(ch->pty);
      ch->editor = std::make_unique<LineEditor>(ch->pty);
      reply(*ch, want_reply, true);
      if (ch->pty) send_data(*ch, to_crlf(gw_.cfg_.motd) + ch->session->render_prompt());
      return;
    }
    if (type == "exec" && !ch->started) {
      const std::string command = r.string();
      ch->started = true;
      ch->session = new_session(false);
      reply(*ch, want_reply, true);
      int status = 0;
      if (auto out = ch->session->handle_line(command)) {
        send_data(*ch, ch->pty ? to_crlf(out->output) : out->output);
        status = out->exit_code;
      }
      if (!ch->close_sent) end_channel(*ch, status, session::CloseReason::channel_closed);
      return;
    }
    // env, x11-req, auth-agent-req, signal, a second shell and the like.
    reply(*ch, want_reply, false);
  }

  void consume_window(Channel& ch, std::size_t n) {
    ch.consumed += static_cast<std::uint32_t>(n);
    if (ch.consumed >= kWindowAdjustAt) {
      transport_.send(Writer().byte(msg::channel_window_adjust).u32(ch.remote_id).u32(ch.consumed).take());
      ch.consumed = 0;
    }
  }

  void process_input(Channel& ch) {
    std::string echo;
    while (!ch.close_sent) {
      auto ev = ch.editor->poll(echo);
      if (!echo.empty()) {
        send_data(ch, echo);
        echo.clear();
      }
      if (!ev || ch.close_sent) return;
      switch (ev->kind) {
        case LineEditor::Kind::line: {
          auto out = ch.session->handle_line(ev->line);
          if (out) {
            send_data(ch, ch.pty ? to_crlf(out->output) : out->output);
            if (out->end_session) {
              end_channel(ch, out->exit_code, session::CloseReason::exit_command);
              return;
            }
          }
          break;
        }
        case LineEditor::Kind::interrupt:
          break;
        case LineEditor::Kind::eof:
          send_data(ch, "logout\r\n");
          end_channel(ch, 0, session::CloseReason::exit_command);
          return;
      }
      if (ch.pty) send_data(ch, ch.session->render_prompt());
    }
  }

  // Blocks on the peer's window. Anything other than a window adjustment that
  // arrives meanwhile is queued for the main loop.
  void send_data(Channel& ch, std::string_view data) {
    while (!data.empty() && !ch.peer_closed && !ch.close_sent) {
      if (ch.remote_window == 0) {
        wait_for_window(ch);
        continue;
      }
      const std::size_t n = std::min<std::size_t>(
          {data.size(), ch.remote_window, ch.remote_max_packet, kLocalMaxPacket});
      transport_.send(Writer().byte(msg::channel_data).u32(ch.remote_id).string(data.substr(0, n)).take());
      ch.remote_window -= static_cast<std::uint32_t>(n);
      data.remove_prefix(n);
    }
  }

  void wait_for_window(Channel& ch) {
    const std::string m = transport_.read_message();
    Reader r(m);
    const auto type = r.byte();
    if (type == msg::channel_window_adjust) {
      Channel* target = find(r.u32());
      const std::uint32_t add = r.u32();
      if (target) target->remote_window += add;
      return;
    }
    if ((type == msg::channel_close || type == msg::channel_eof) && r.u32() == ch.local_id) {
      if (type == msg::channel_close) ch.peer_closed = true;
    }
    deferred_.push_back(m);
  }

  void end_channel(Channel& ch, int status, session::CloseReason reason) {
    if (ch.close_sent) return;
    if (ch.session) ch.session->close(reason);
    if (!ch.peer_closed) {
      transport_.send(Writer()
                          .byte(msg::channel_request)
                          .u32(ch.remote_id)
                          .string("exit-status")
                          .boolean(false)
                          .u32(static_cast<std::uint32_t>(status))
                          .take());
      transport_.send(Writer().byte(msg::channel_eof).u32(ch.remote_id).take());
    }
    transport_.send(Writer().byte(msg::channel_close).u32(ch.remote_id).take());
    ch.close_sent = true;
  }

  Gateway& gw_;
  logstore::Peer peer_;
  std::string uuid_;
  Transport transport_;
  std::string username_;
  bool auth_logged_ = false;
  bool offered_methods_ = false;  // the client has seen our method list
  std::size_t sessions_started_ = 0;
  std::uint32_t next_channel_ = 0;
  std::map<std::uint32_t, Channel> channels_;
  std::deque<std::string> deferred_;
};

Gateway::Gateway(HoneypotConfig cfg, std::shared_ptr<const HostKey> host_key,
                 std::shared_ptr<const session::EngineContext> ctx, Diag diag)
    : cfg_(std::move(cfg)), host_key_(std::move(host_key)), ctx_(std::move(ctx)), diag_(std::move(diag)) {
  if (!host_key_) throw HostKeyError("no host key");
  if (!ctx_) throw std::invalid_argument("gateway needs an engine context");
}

Gateway::~Gateway() { stop(); }

void Gateway::diag(const std::string& message) const {
  if (diag_) {
    diag_(message);
  } else {
    std::cerr << "decoysh: " << message << "\n";
  }
}

void Gateway::start(const std::string& bind_address) {
  if (listen_fd_ >= 0) throw std::logic_error("gateway already started");
  if (cfg_.port < 0 || cfg_.port > 65535) throw BindError("port out of range: " + std::to_string(cfg_.port));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(cfg_.port));
  if (::inet_pton(AF_INET, bind_address.c_str(), &addr.sin_addr) != 1) {
    throw BindError("bad bind address: " + bind_address);
  }
  const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw BindError(std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 128) != 0) {
    const std::string why = std::strerror(errno);
    ::close(fd);
    throw BindError("cannot listen on " + bind_address + ":" + std::to_string(cfg_.port) + ": " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  listen_fd_ = fd;
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Gateway::stop() {
  if (listen_fd_ < 0) return;
  stopping_ = true;
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::unique_lock lk(mu_);
    for (int fd : fds_) ::shutdown(fd, SHUT_RDWR);
    idle_cv_.wait(lk, [this] { return active_ == 0; });
  }
  ::close(listen_fd_);
  listen_fd_ = -1;
}

std::size_t Gateway::active_connections() const {
  std::lock_guard lk(mu_);
  return active_;
}

GatewayStats Gateway::stats() const {
  std::lock_guard lk(mu_);
  return stats_;
}

void Gateway::log_auth(const std::string& uuid, const logstore::Peer& peer, const std::string& username,
                       const std::string& password, const std::string& method, bool success,
                       const std::string& reason) {
  if (!ctx_->store) return;
  logstore::EventRecord rec;
  rec.session_uuid = uuid;
  rec.at_ms = ctx_->wall_ms ? ctx_->wall_ms() : system_ms();
  rec.kind = logstore::EventKind::auth;
  rec.peer = peer;
  rec.payload = {{"username", username}, {"password", password}, {"method", method},
                 {"success", success},   {"reason", reason}};
  ctx_->store->append(std::move(rec));
}

void Gateway::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 200) <= 0) continue;
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    const int fd = ::accept4(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len, SOCK_CLOEXEC);
    if (fd < 0) continue;
    char ip[INET_ADDRSTRLEN] = {};
    ::inet_ntop(AF_INET, &addr.sin_addr, ip, sizeof ip);
    logstore::Peer peer{ip, ntohs(addr.sin_port)};

    bool over = false;
    {
      std::lock_guard lk(mu_);
      ++stats_.accepted;
      if (per_ip_[peer.ip] >= cfg_.max_connections_per_ip) {
        over = true;
        ++stats_.refused_ip_limit;
      } else {
        ++per_ip_[peer.ip];
        ++active_;
        fds_.insert(fd);
      }
    }
    if (over) {
      log_auth(session::new_uuid(), peer, "", "", "none", false, std::string(kReasonIpLimit));
      ::close(fd);
      continue;
    }
    std::thread([this, fd, peer] { run_connection(fd, peer); }).detach();
  }
}

void Gateway::run_connection(int fd, logstore::Peer peer) {
  try {
    Connection conn(*this, fd, peer);
    conn.run();
  } catch (const std::exception& e) {
    diag("connection " + logstore::format_peer(peer) + " aborted: " + e.what());
  }
  std::lock_guard lk(mu_);
  fds_.erase(fd);
  ::close(fd);
  if (--per_ip_[peer.ip] == 0) per_ip_.erase(peer.ip);
  --active_;
  idle_cv_.notify_all();
}

}  // namespace decoysh::ssh
