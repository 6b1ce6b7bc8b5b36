#include "decoysh/ssh/transport.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <poll.h>
#include <sodium.h>
#include <sys/socket.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include "decoysh/ssh/wire.hpp"

namespace decoysh::ssh {

namespace {

constexpr std::size_t kMacLength = 32;
constexpr std::uint32_t kMaxPacketLength = 256 * 1024;
constexpr std::size_t kMaxVersionPreamble = 64 * 1024;

const std::vector<std::string> kKexAlgorithms = {"curve25519-sha256", "curve25519-sha256@libssh.org"};
const std::vector<std::string> kHostKeyAlgorithms = {"ssh-ed25519"};
const std::vector<std::string> kCiphers = {"aes128-ctr", "aes256-ctr"};
const std::vector<std::string> kMacs = {"hmac-sha2-256"};
const std::vector<std::string> kCompression = {"none"};

std::string hmac(std::string_view key, std::uint32_t seq, std::string_view data) {
  crypto_auth_hmacsha256_state st;
  crypto_auth_hmacsha256_init(&st, reinterpret_cast<const unsigned char*>(key.data()), key.size());
  const std::string s = Writer().u32(seq).take();
  crypto_auth_hmacsha256_update(&st, reinterpret_cast<const unsigned char*>(s.data()), s.size());
  crypto_auth_hmacsha256_update(&st, reinterpret_cast<const unsigned char*>(data.data()), data.size());
  std::string out(kMacLength, '\0');
  crypto_auth_hmacsha256_final(&st, reinterpret_cast<unsigned char*>(out.data()));
  return out;
}

std::uint32_t be32(std::string_view b) {
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(b[0])) << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[2])) << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[3]));
}

std::optional<std::string> negotiate(const std::vector<std::string>& client,
                                     const std::vector<std::string>& server) {
  for (const auto& c : client) {
    if (std::find(server.begin(), server.end(), c) != server.end()) return c;
  }
  return std::nullopt;
}

}  // namespace

namespace kex {

std::string sha256(std::string_view data) {
  std::string out(crypto_hash_sha256_BYTES, '\0');
  crypto_hash_sha256(reinterpret_cast<unsigned char*>(out.data()),
                     reinterpret_cast<const unsigned char*>(data.data()), data.size());
  return out;
}

std::string derive_key(std::string_view k_mpint, std::string_view h, char letter,
                       std::string_view session_id, std::size_t length) {
  std::string out = sha256(std::string(k_mpint) + std::string(h) + letter + std::string(session_id));
  while (out.size() < length) out += sha256(std::string(k_mpint) + std::string(h) + out);
  out.resize(length);
  return out;
}

}  // namespace kex

struct PacketCipher::Impl {
  EVP_CIPHER_CTX* ctx = nullptr;
  std::string mac_key;
  std::string pending;  // decrypted head of a packet whose tail has not arrived

  ~Impl() {
    if (ctx) EVP_CIPHER_CTX_free(ctx);
  }

  std::string apply(std::string_view data) {
    if (!ctx) return std::string(data);
    std::string out(data.size(), '\0');
    int n = 0;
    if (EVP_CipherUpdate(ctx, reinterpret_cast<unsigned char*>(out.data()), &n,
                         reinterpret_cast<const unsigned char*>(data.data()),
                         static_cast<int>(data.size())) != 1 ||
        static_cast<std::size_t>(n) != data.size()) {
      throw ProtocolError("cipher failure");
    }
    return out;
  }
};

PacketCipher::PacketCipher() : impl_(std::make_unique<Impl>()) {}
PacketCipher::~PacketCipher() = default;

std::size_t PacketCipher::block_size() const { return impl_->ctx ? 16 : 8; }

void PacketCipher::install(const std::string& cipher, std::string_view key, std::string_view iv,
                           std::string_view mac_key, bool encrypt) {
  const EVP_CIPHER* type = cipher == "aes128-ctr"   ? EVP_aes_128_ctr()
                           : cipher == "aes256-ctr" ? EVP_aes_256_ctr()
                                                    : nullptr;
  if (!type) throw ProtocolError("unsupported cipher " + cipher);
  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  if (!ctx || EVP_CipherInit_ex(ctx, type, nullptr, reinterpret_cast<const unsigned char*>(key.data()),
                                reinterpret_cast<const unsigned char*>(iv.data()), encrypt ? 1 : 0) != 1) {
    if (ctx) EVP_CIPHER_CTX_free(ctx);
    throw ProtocolError("cipher setup failed");
  }
  if (impl_->ctx) EVP_CIPHER_CTX_free(impl_->ctx);
  impl_->ctx = ctx;
  impl_->mac_key = std::string(mac_key);
  impl_->pending.clear();
}

std::string PacketCipher::seal(std::string_view payload, std::uint32_t seq) {
  const std::size_t bs = block_size();
  std::size_t pad = bs - ((5 + payload.size()) % bs);
  if (pad < 4) pad += bs;
  std::string padding(pad, '\0');
  randombytes_buf(padding.data(), pad);
  Writer w;
  w.u32(static_cast<std::uint32_t>(1 + payload.size() + pad)).byte(static_cast<std::uint8_t>(pad));
  w.raw(payload).raw(padding);
  const std::string& plain = w.data();
  if (!impl_->ctx) return plain;
  const std::string mac = hmac(impl_->mac_key, seq, plain);
  return impl_->apply(plain) + mac;
}

std::optional<std::string> PacketCipher::open(std::string& buffer, std::uint32_t seq) {
  const std::size_t bs = block_size();
  std::string& head = impl_->pending;
  if (head.empty()) {
    if (buffer.size() < bs) return std::nullopt;
    head = impl_->apply(std::string_view(buffer).substr(0, bs));
    buffer.erase(0, bs);
  }
  const std::uint32_t length = be32(head);
  if (length < 5 || length > kMaxPacketLength || (length + 4) % bs != 0) {
    throw ProtocolError("bad packet length " + std::to_string(length));
  }
  const std::size_t rest = length + 4 - bs;
  const std::size_t mac_len = impl_->ctx ? kMacLength : 0;
  if (buffer.size() < rest + mac_len) return std::nullopt;

  std::string plain = head + impl_->apply(std::string_view(buffer).substr(0, rest));
  if (impl_->ctx) {
    const std::string expect = hmac(impl_->mac_key, seq, plain);
    if (CRYPTO_memcmp(expect.data(), buffer.data() + rest, kMacLength) != 0) {
      throw ProtocolError("MAC mismatch");
    }
  }
  buffer.erase(0, rest + mac_len);
  head.clear();
  const std::size_t pad = static_cast<unsigned char>(plain[4]);
  if (pad < 4 || pad + 1 > length) throw ProtocolError("bad padding length");
  return plain.substr(5, length - 1 - pad);
}

Transport::Transport(int fd, TransportOptions options, const std::atomic<bool>* stop)
    : fd_(fd), options_(std::move(options)), stop_(stop) {
  ensure_sodium();
  if (!options_.host_key) throw std::invalid_argument("transport needs a host key");
}

Transport::~Transport() = default;

void Transport::fill(std::optional<TimePoint> deadline) {
  while (true) {
    if (stop_ && stop_->load()) throw PeerClosed("server shutting down");
    int wait_ms = 250;
    if (deadline) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                            *deadline - std::chrono::steady_clock::now())
                            .count();
      if (left <= 0) throw DeadlineExpired();
      wait_ms = static_cast<int>(std::min<long long>(left, wait_ms));
    }
    pollfd p{fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, wait_ms);
    if (r < 0 && errno != EINTR) throw PeerClosed(std::string("poll: ") + std::strerror(errno));
    if (r <= 0) continue;
    char buf[32768];
    const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n == 0) throw PeerClosed("connection closed by peer");
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw PeerClosed(std::string("recv: ") + std::strerror(errno));
    }
    inbuf_.append(buf, static_cast<std::size_t>(n));
    return;
  }
}

void Transport::write_all(std::string_view bytes) {
  while (!bytes.empty()) {
    const ssize_t n = ::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw PeerClosed(std::string("send: ") + std::strerror(errno));
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
}

void Transport::handshake(std::optional<TimePoint> deadline) {
  write_all(options_.banner + "\r\n");
  // Lines before the version string are allowed (RFC 4253 section 4.2).
  while (true) {
    const auto nl = inbuf_.find('\n');
    if (nl == std::string::npos) {
      if (inbuf_.size() > kMaxVersionPreamble) throw ProtocolError("no version string");
      fill(deadline);
      continue;
    }
    std::string line = inbuf_.substr(0, nl);
    inbuf_.erase(0, nl + 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("SSH-", 0) != 0) continue;
    if (line.rfind("SSH-2.0-", 0) != 0 && line.rfind("SSH-1.99-", 0) != 0) {
      write_all("Protocol mismatch.\r\n");
      throw ProtocolError("unsupported protocol version: " + line.substr(0, 64));
    }
    if (line.size() > 253) throw ProtocolError("version string too long");
    client_version_ = line;
    break;
  }
  std::string first = read_packet(deadline);
  if (static_cast<std::uint8_t>(first[0]) != msg::kexinit) {
    throw ProtocolError("expected KEXINIT");
  }
  run_kex(std::move(first), deadline);
}

std::string Transport::make_kexinit() {
  std::string cookie(16, '\0');
  randombytes_buf(cookie.data(), cookie.size());
  Writer w;
  w.byte(msg::kexinit).raw(cookie);
  w.name_list(kKexAlgorithms).name_list(kHostKeyAlgorithms);
  w.name_list(kCiphers).name_list(kCiphers);
  w.name_list(kMacs).name_list(kMacs);
  w.name_list(kCompression).name_list(kCompression);
  w.name_list({}).name_list({});
  w.boolean(false).u32(0);
  return w.take();
}

void Transport::run_kex(std::string client_kexinit, std::optional<TimePoint> deadline) {
  const std::string server_kexinit = make_kexinit();
  send(server_kexinit);

  // skip the message number and the 16-byte cookie
  Reader c(std::string_view(client_kexinit).substr(17));
  const auto kex_algs = c.name_list();
  const auto hostkey_algs = c.name_list();
  const auto enc_cs = c.name_list();
  const auto enc_sc = c.name_list();
  const auto mac_cs = c.name_list();
  const auto mac_sc = c.name_list();
  const auto comp_cs = c.name_list();
  const auto comp_sc = c.name_list();
  c.name_list();
  c.name_list();
  const bool guess_follows = c.boolean();

  const auto kex = negotiate(kex_algs, kKexAlgorithms);
  const auto hostkey = negotiate(hostkey_algs, kHostKeyAlgorithms);
  const auto cipher_in = negotiate(enc_cs, kCiphers);
  const auto cipher_out = negotiate(enc_sc, kCiphers);
  const auto mac_in = negotiate(mac_cs, kMacs);
  const auto mac_out = negotiate(mac_sc, kMacs);
  if (!kex || !hostkey || !cipher_in || !cipher_out || !mac_in || !mac_out ||
      !negotiate(comp_cs, kCompression) || !negotiate(comp_sc, kCompression)) {
    disconnect(disconnect_reason::key_exchange_failed, "no matching algorithms");
    throw ProtocolError("no common algorithms with " + client_version_);
  }
  if (guess_follows && (kex_algs.front() != *kex || hostkey_algs.front() != *hostkey)) {
    read_packet(deadline);  // the client's wrong guess
  }

  std::string init;
  do {
    init = read_packet(deadline);
  } while (static_cast<std::uint8_t>(init[0]) == msg::ignore ||
           static_cast<std::uint8_t>(init[0]) == msg::debug);
  if (static_cast<std::uint8_t>(init[0]) != msg::kex_ecdh_init) {
    throw ProtocolError("expected KEX_ECDH_INIT");
  }
  Reader ir(std::string_view(init).substr(1));
  const std::string q_c = ir.string();
  if (q_c.size() != crypto_scalarmult_BYTES) throw ProtocolError("bad client ephemeral key");

  unsigned char secret[crypto_scalarmult_SCALARBYTES];
  unsigned char q_s[crypto_scalarmult_BYTES];
  unsigned char shared[crypto_scalarmult_BYTES];
  randombytes_buf(secret, sizeof secret);
  crypto_scalarmult_base(q_s, secret);
  if (crypto_scalarmult(shared, secret, reinterpret_cast<const unsigned char*>(q_c.data())) != 0) {
    sodium_memzero(secret, sizeof secret);
    throw ProtocolError("degenerate client ephemeral key");
  }
  sodium_memzero(secret, sizeof secret);
  const std::string_view q_s_view(reinterpret_cast<const char*>(q_s), sizeof q_s);
  const std::string k_mpint =
      Writer().mpint(std::string_view(reinterpret_cast<const char*>(shared), sizeof shared)).take();
  sodium_memzero(shared, sizeof shared);

  const std::string k_s = options_.host_key->public_blob();
  Writer hw;
  hw.string(client_version_).string(options_.banner);
  hw.string(client_kexinit).string(server_kexinit);
  hw.string(k_s).string(q_c).string(q_s_view).raw(k_mpint);
  const std::string h = kex::sha256(hw.data());
  if (session_id_.empty()) session_id_ = h;

  send(Writer().byte(msg::kex_ecdh_reply).string(k_s).string(q_s_view).string(options_.host_key->sign(h)).take());
  send(std::string(1, static_cast<char>(msg::newkeys)));

  auto key_len = [](const std::string& cipher) { return cipher == "aes256-ctr" ? 32u : 16u; };
  out_.install(*cipher_out, kex::derive_key(k_mpint, h, 'D', session_id_, key_len(*cipher_out)),
               kex::derive_key(k_mpint, h, 'B', session_id_, 16),
               kex::derive_key(k_mpint, h, 'F', session_id_, kMacLength), true);
  cipher_out_name_ = *cipher_out;

  std::string nk;
  do {
    nk = read_packet(deadline);
  } while (static_cast<std::uint8_t>(nk[0]) == msg::ignore ||
           static_cast<std::uint8_t>(nk[0]) == msg::debug);
  if (static_cast<std::uint8_t>(nk[0]) != msg::newkeys) throw ProtocolError("expected NEWKEYS");
  in_.install(*cipher_in, kex::derive_key(k_mpint, h, 'C', session_id_, key_len(*cipher_in)),
              kex::derive_key(k_mpint, h, 'A', session_id_, 16),
              kex::derive_key(k_mpint, h, 'E', session_id_, kMacLength), false);
  cipher_in_name_ = *cipher_in;
}

std::string Transport::read_packet(std::optional<TimePoint> deadline) {
  while (true) {
    if (auto p = in_.open(inbuf_, seq_in_)) {
      ++seq_in_;
      if (p->empty()) throw ProtocolError("empty packet");
      return std::move(*p);
    }
    fill(deadline);
  }
}

std::string Transport::read_message(std::optional<TimePoint> deadline) {
  while (true) {
    std::string p = read_packet(deadline);
    switch (static_cast<std::uint8_t>(p[0])) {
      case msg::ignore:
      case msg::debug:
      case msg::unimplemented:
        continue;
      case msg::disconnect: {
        std::string why = "peer disconnected";
        try {
          Reader r(std::string_view(p).substr(1));
          r.u32();
          why += ": " + r.string();
        } catch (const WireError&) {
        }
        throw PeerClosed(why);
      }
      case msg::kexinit:
        run_kex(std::move(p), deadline);
        continue;
      case msg::newkeys:
      case msg::kex_ecdh_init:
        throw ProtocolError("key exchange message outside key exchange");
      default:
        return p;
    }
  }
}

void Transport::send(std::string_view payload) { write_all(out_.seal(payload, seq_out_++)); }

void Transport::disconnect(std::uint32_t reason, const std::string& description) noexcept {
  try {
    send(Writer().byte(msg::disconnect).u32(reason).string(description).string("").take());
  } catch (...) {
  }
}

}  // namespace decoysh::ssh
